"""Trajectory replay and platoon simulation.

Replay feeds a model the recorded leader motion and integrates the follower
ballistically; accelerations are clamped to [-5, 5] m/s^2 at simulation time
and speeds never go negative (stop-at-zero within a step). A spacing at or
below zero is a collision: the run stops there and keeps the partial series.

The platoon run starts every vehicle at the model's own equilibrium spacing
for the chosen speed, applies a brake-then-recover pulse to the leader, and
judges string stability from how the per-vehicle peak speed deviations grow
or shrink down the chain.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .core import ballistic_step_array, clamp_accel
from .stability import EquilibriumSearchConfig, equilibrium_at_speed


@dataclass
class Trajectory:
    """One recorded leader/follower pair sampled at a fixed period."""

    dt: float
    leader_x: np.ndarray
    leader_v: np.ndarray
    follower_x: np.ndarray
    follower_v: np.ndarray
    leader_length: float = 0.0

    def __post_init__(self):
        self.leader_x = np.asarray(self.leader_x, dtype=np.float64)
        self.leader_v = np.asarray(self.leader_v, dtype=np.float64)
        self.follower_x = np.asarray(self.follower_x, dtype=np.float64)
        self.follower_v = np.asarray(self.follower_v, dtype=np.float64)
        n = len(self.leader_x)
        if n < 2:
            raise ValueError("trajectory needs at least 2 samples")
        for arr in (self.leader_v, self.follower_x, self.follower_v):
            if len(arr) != n:
                raise ValueError("trajectory arrays must share one length")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.recorded_spacing[0] <= 0:
            raise ValueError("initial spacing must be positive")

    def __len__(self) -> int:
        return len(self.leader_x)

    @property
    def duration(self) -> float:
        return (len(self) - 1) * self.dt

    @property
    def recorded_spacing(self) -> np.ndarray:
        return self.leader_x - self.follower_x - self.leader_length


@dataclass
class SimResult:
    spacing: np.ndarray
    speed: np.ndarray
    accel: np.ndarray
    collided: bool = False
    collision_step: int | None = None

    @property
    def steps(self) -> int:
        return len(self.spacing)


def replay_simulate(model, traj: Trajectory) -> SimResult:
    """Integrate the follower against the recorded leader motion.

    The follower starts from its recorded initial position and speed; the
    series end at the first step whose spacing is <= 0 (that step is kept,
    so the collision is visible in the output).
    """
    n = len(traj)
    spacing = np.empty(n)
    speed = np.empty(n)
    accel = np.empty(n)
    x = float(traj.follower_x[0])
    v = float(traj.follower_v[0])
    collided = False
    collision_step = None
    steps = 0
    for t in range(n):
        gap = traj.leader_x[t] - x - traj.leader_length
        spacing[t] = gap
        speed[t] = v
        if gap <= 0:
            accel[t] = 0.0
            collided = True
            collision_step = t
            steps = t + 1
            break
        state = np.array([[v, gap, v - traj.leader_v[t]]])
        a = float(clamp_accel(model.accel_batch(state)[0]))
        accel[t] = a
        steps = t + 1
        if t < n - 1:
            v_arr, x_arr = ballistic_step_array(
                np.array([v]), np.array([x]), np.array([a]), traj.dt
            )
            v, x = float(v_arr[0]), float(x_arr[0])
    return SimResult(
        spacing=spacing[:steps],
        speed=speed[:steps],
        accel=accel[:steps],
        collided=collided,
        collision_step=collision_step,
    )


def evaluate_rmse(results, trajectories) -> float:
    """Pooled spacing RMSE over every simulated step of every pair."""
    if len(results) != len(trajectories):
        raise ValueError("results and trajectories disagree in length")
    total = 0.0
    count = 0
    for res, traj in zip(results, trajectories):
        k = res.steps
        err = res.spacing - traj.recorded_spacing[:k]
        total += float(np.sum(err * err))
        count += k
    if count == 0:
        raise ValueError("no simulated steps to score")
    return math.sqrt(total / count)


def wmape(predicted, actual) -> float:
    """sum|pred - actual| / sum|actual|; undefined for all-zero actuals."""
    predicted = np.asarray(predicted, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if predicted.shape != actual.shape:
        raise ValueError("shape mismatch")
    denom = float(np.sum(np.abs(actual)))
    if denom == 0.0:
        raise ValueError("WMAPE undefined: actual values sum to zero magnitude")
    return float(np.sum(np.abs(predicted - actual)) / denom)


@dataclass(frozen=True)
class PlatoonConfig:
    n_vehicles: int = 100
    v_e: float = 5.0
    horizon: float = 100.0
    dt: float = 0.1
    disturb_start: float = 6.0
    disturb_rate: float = 0.5
    phase_duration: float = 3.0
    vehicle_length: float = 0.0

    def __post_init__(self):
        if self.n_vehicles < 2:
            raise ValueError("a platoon needs at least 2 vehicles")
        if self.v_e <= 0 or self.horizon <= 0 or self.dt <= 0:
            raise ValueError("v_e, horizon and dt must be positive")
        if self.disturb_start < 0 or self.disturb_rate < 0 or self.phase_duration <= 0:
            raise ValueError("bad disturbance settings")
        if self.vehicle_length < 0:
            raise ValueError("vehicle_length must be >= 0")


def leader_speed(t, cfg: PlatoonConfig):
    """Leader speed: cruise, brake one phase, recover one phase, cruise."""
    t = np.asarray(t, dtype=np.float64)
    t0, r, d = cfg.disturb_start, cfg.disturb_rate, cfg.phase_duration
    down = np.clip(t - t0, 0.0, d)
    up = np.clip(t - t0 - d, 0.0, d)
    return cfg.v_e - r * down + r * up


def leader_position(t, cfg: PlatoonConfig):
    """Exact integral of leader_speed with x(0) = 0."""
    t = np.asarray(t, dtype=np.float64)
    t0, r, d = cfg.disturb_start, cfg.disturb_rate, cfg.phase_duration
    down = np.clip(t - t0, 0.0, d)
    up = np.clip(t - t0 - d, 0.0, d)
    # braking phase: -r*down^2/2; past it the deficit r*d applies for (t - t0 - d)
    past_brake = np.maximum(t - t0 - d, 0.0)
    return (
        cfg.v_e * t
        - 0.5 * r * down**2
        - r * d * past_brake
        + 0.5 * r * up**2
        + r * d * np.maximum(t - t0 - 2 * d, 0.0)
    )


@dataclass
class DisturbanceSeries:
    cfg: PlatoonConfig
    s_e: float
    times: np.ndarray
    speeds: np.ndarray  # (steps, n_vehicles)
    spacings: np.ndarray  # (steps, n_vehicles - 1)
    partial: bool = False
    collision_step: int | None = None
    collision_vehicle: int | None = None

    @property
    def deviations(self) -> np.ndarray:
        return self.speeds - self.cfg.v_e

    @property
    def peaks(self) -> np.ndarray:
        """Max |speed deviation| per vehicle over the whole run."""
        return np.max(np.abs(self.deviations), axis=0)

    def peak_diffs(self) -> np.ndarray:
        """peaks[i] - peaks[i-1] for every consecutive pair, leader included."""
        p = self.peaks
        return p[1:] - p[:-1]

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["vehicle", "t", "speed", "u"])
            dev = self.deviations
            for i in range(self.speeds.shape[1]):
                for k, t in enumerate(self.times):
                    w.writerow(
                        [i, f"{t:.6g}", f"{self.speeds[k, i]:.10g}", f"{dev[k, i]:.10g}"]
                    )


def platoon_simulate(
    model,
    cfg: PlatoonConfig | None = None,
    eq_config: EquilibriumSearchConfig | None = None,
) -> DisturbanceSeries:
    """Run the platoon; aborts with a partial, flagged series on collision.

    Every vehicle starts at speed v_e with the model's equilibrium gap
    (solved to float resolution, so an undisturbed platoon sits still to
    numerical precision). The leader follows its closed-form profile exactly
    rather than being integrated.
    """
    cfg = cfg or PlatoonConfig()
    point = equilibrium_at_speed(model, cfg.v_e, eq_config, exact=True)
    s_e = point.s_e
    n = cfg.n_vehicles
    steps = int(round(cfg.horizon / cfg.dt)) + 1
    times = cfg.dt * np.arange(steps)

    speeds = np.empty((steps, n))
    gaps = np.empty((steps, n - 1))
    x = -(s_e + cfg.vehicle_length) * np.arange(n, dtype=np.float64)
    v = np.full(n, cfg.v_e)
    partial = False
    collision_step = None
    collision_vehicle = None

    used = 0
    for k in range(steps):
        x[0] = leader_position(times[k], cfg)
        v[0] = float(leader_speed(times[k], cfg))
        gap = x[:-1] - x[1:] - cfg.vehicle_length
        speeds[k] = v
        gaps[k] = gap
        used = k + 1
        if np.any(gap <= 0):
            partial = True
            collision_step = k
            collision_vehicle = int(np.nonzero(gap <= 0)[0][0]) + 1
            break
        if k == steps - 1:
            break
        states = np.column_stack([v[1:], gap, v[1:] - v[:-1]])
        a = clamp_accel(model.accel_batch(states))
        v[1:], x[1:] = ballistic_step_array(v[1:], x[1:], a, cfg.dt)

    return DisturbanceSeries(
        cfg=cfg,
        s_e=s_e,
        times=times[:used],
        speeds=speeds[:used],
        spacings=gaps[:used],
        partial=partial,
        collision_step=collision_step,
        collision_vehicle=collision_vehicle,
    )


def string_stability_verdict(series: DisturbanceSeries, tol: float = 1e-6) -> str:
    """"stable" when follower peak deviations never grow along the chain."""
    if series.cfg.n_vehicles < 3:
        raise ValueError("verdict needs at least 3 vehicles (2 followers)")
    return "stable" if float(np.max(series.peak_diffs())) <= tol else "unstable"
