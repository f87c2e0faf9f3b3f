"""Shared domain types, unit conventions, kinematics, and the IDM reference model.

Units are SI throughout: speeds in m/s, spacing in m, accelerations in m/s^2.
Relative speed follows the follower-minus-leader convention, so dv > 0 means
the follower is closing in on the leader.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Acceleration clamp applied at simulation time only; training and analysis
# operate on the raw model output.
A_MIN = -5.0
A_MAX = 5.0


class NoEquilibriumError(ValueError):
    """No equilibrium exists for the requested speed within the model's range."""


@dataclass(frozen=True)
class CfState:
    """Car-following state: follower speed v, bumper gap s, relative speed dv.

    dv = v_follower - v_leader (positive = closing). A state with s <= 0 is a
    collision state and is never constructed.
    """

    v: float
    s: float
    dv: float

    def __post_init__(self):
        if not (math.isfinite(self.v) and math.isfinite(self.s) and math.isfinite(self.dv)):
            raise ValueError(f"non-finite car-following state {(self.v, self.s, self.dv)}")
        if self.v < 0:
            raise ValueError(f"negative speed {self.v}")
        if self.s <= 0:
            raise ValueError(f"non-positive spacing {self.s} (collision state)")

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.s, self.dv], dtype=float)


@dataclass(frozen=True)
class IdmParams:
    """Intelligent Driver Model parameters (all strictly positive)."""

    v0: float      # desired speed, m/s
    T: float       # desired time headway, s
    s0: float      # jam spacing, m
    a_max: float   # maximum acceleration, m/s^2
    b: float       # comfortable deceleration, m/s^2

    def __post_init__(self):
        for name in ("v0", "T", "s0", "a_max", "b"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"IDM parameter {name}={val} must be finite and > 0")


# urban passenger-car defaults, shared by the synthetic teacher and baselines
DEFAULT_IDM_PARAMS = IdmParams(v0=30.0, T=1.5, s0=2.0, a_max=1.0, b=1.5)


def clamp_accel(a, lo: float = A_MIN, hi: float = A_MAX):
    """Clamp acceleration to plausible physical limits (simulation-time only)."""
    return np.clip(a, lo, hi)


def ballistic_step(v: float, x: float, a: float, dt: float) -> tuple[float, float]:
    """Advance speed and position one step under constant acceleration.

    v_next = v + a*dt, x_next = x + v*dt + a*dt^2/2. If the speed would go
    negative the vehicle stops within the step at t* = -v/a and holds: no
    reverse driving.
    """
    if not (math.isfinite(v) and math.isfinite(x) and math.isfinite(a) and math.isfinite(dt)):
        raise ValueError("non-finite input to ballistic_step")
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    v_next = v + a * dt
    if v_next < 0.0:
        t_stop = -v / a if a != 0.0 else 0.0
        return 0.0, x + v * t_stop + 0.5 * a * t_stop * t_stop
    return v_next, x + v * dt + 0.5 * a * dt * dt


def ballistic_step_array(v: np.ndarray, x: np.ndarray, a: np.ndarray, dt: float):
    """Vectorized ballistic_step with the same stop-at-zero truncation."""
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    v_next = v + a * dt
    stopping = v_next < 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t_stop = np.where(a != 0.0, -v / a, 0.0)
    x_plain = x + v * dt + 0.5 * a * dt * dt
    x_stop = x + v * t_stop + 0.5 * a * t_stop * t_stop
    return np.where(stopping, 0.0, v_next), np.where(stopping, x_stop, x_plain)


def _state_row(state) -> np.ndarray:
    """(1, 3) row from a CfState or any (v, s, dv) triple."""
    arr = state.as_array() if hasattr(state, "as_array") else np.asarray(state, dtype=np.float64)
    return arr.reshape(1, 3)


class IdmModel:
    """IDM as a differentiable car-following model.

    a = a_max * [1 - (v/v0)^4 - (s*/s)^2] with the dynamic gap
    s* = s0 + max(0, v*T + v*dv / (2*sqrt(a_max*b))). The max() floors s* at
    s0 so the dynamic gap never goes negative; partials are exact away from
    that floor and use the floored branch on it.
    """

    def __init__(self, params: IdmParams):
        self.params = params
        self._c = 2.0 * math.sqrt(params.a_max * params.b)

    def accel(self, state) -> float:
        return float(self.accel_batch(_state_row(state))[0])

    def accel_batch(self, states: np.ndarray) -> np.ndarray:
        p = self.params
        v, s, dv = states[:, 0], states[:, 1], states[:, 2]
        sstar = p.s0 + np.maximum(0.0, v * p.T + v * dv / self._c)
        return p.a_max * (1.0 - (v / p.v0) ** 4 - (sstar / s) ** 2)

    def input_grad(self, state) -> np.ndarray:
        return self.input_grad_batch(_state_row(state))[0]

    def input_grad_batch(self, states: np.ndarray) -> np.ndarray:
        """Exact partials (df/dv, df/ds, df/ddv), floored-branch on the s* kink."""
        p = self.params
        v, s, dv = states[:, 0], states[:, 1], states[:, 2]
        raw = v * p.T + v * dv / self._c
        active = raw > 0.0
        sstar = p.s0 + np.maximum(0.0, raw)
        dsstar_dv = np.where(active, p.T + dv / self._c, 0.0)
        dsstar_ddv = np.where(active, v / self._c, 0.0)
        f_v = p.a_max * (-4.0 * v ** 3 / p.v0 ** 4 - 2.0 * sstar * dsstar_dv / s ** 2)
        f_s = p.a_max * (2.0 * sstar ** 2 / s ** 3)
        f_dv = p.a_max * (-2.0 * sstar * dsstar_ddv / s ** 2)
        return np.stack([f_v, f_s, f_dv], axis=1)


def idm_accel(p: IdmParams, state: CfState) -> float:
    """IDM acceleration for a single state (unclamped)."""
    return IdmModel(p).accel(state)


def idm_equilibrium_spacing(p: IdmParams, v_e: float) -> float:
    """Closed-form IDM equilibrium spacing (s0 + v_e*T) / sqrt(1 - (v_e/v0)^4).

    Serves as the analytic oracle for the numerical equilibrium finder.
    Raises NoEquilibriumError for v_e >= v0 (no finite spacing sustains v0).
    """
    if not 0 <= v_e:
        raise ValueError(f"equilibrium speed must be >= 0, got {v_e}")
    if v_e >= p.v0:
        raise NoEquilibriumError(f"no equilibrium at v_e={v_e} >= desired speed v0={p.v0}")
    return (p.s0 + v_e * p.T) / math.sqrt(1.0 - (v_e / p.v0) ** 4)
