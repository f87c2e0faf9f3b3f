"""Equilibrium search and stability analysis for car-following models.

A model here is anything with `accel_batch(states)` and
`input_grad_batch(states)` over (v, s, dv) rows: the neural model, the IDM
reference, or any other callable wrapper with those two methods.

An equilibrium at speed v_e is the spacing s_e where the model's acceleration
vanishes with both vehicles at v_e. Around each equilibrium the partial
derivatives (f_v, f_s, f_dv) decide local stability (f_v + f_dv < 0 and
f_s > 0) and string stability (f_v^2 - 2 f_s + 2 f_v f_dv > 0).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .core import NoEquilibriumError


class AmbiguousEquilibriumError(ValueError):
    """Acceleration is not monotone in spacing at some scanned speed."""

    def __init__(self, speed: float):
        self.speed = speed
        super().__init__(
            f"acceleration not monotone in spacing at v = {speed:g} m/s; "
            "equilibrium would be ambiguous"
        )


@dataclass(frozen=True)
class EquilibriumSearchConfig:
    v_min: float = 0.5
    v_max: float = 39.5
    v_step: float = 0.5
    s_min: float = 0.1
    s_max: float = 100.0
    tol: float = 1e-6
    max_iter: int = 100
    scan_points: int = 128

    def __post_init__(self):
        if self.v_min <= 0 or self.v_max < self.v_min or self.v_step <= 0:
            raise ValueError("bad speed grid")
        if self.s_min <= 0 or self.s_max <= self.s_min:
            raise ValueError("bad spacing interval")
        if self.tol <= 0 or self.max_iter < 1 or self.scan_points < 2:
            raise ValueError("bad solver settings")

    def speeds(self) -> np.ndarray:
        n = int(round((self.v_max - self.v_min) / self.v_step)) + 1
        return self.v_min + self.v_step * np.arange(n)


@dataclass(frozen=True)
class EquilibriumPoint:
    v_e: float
    s_e: float
    residual: float
    f_v: float
    f_s: float
    f_dv: float

    @property
    def ss_criterion(self) -> float:
        return string_stability_criterion(self.f_v, self.f_s, self.f_dv)

    @property
    def locally_stable(self) -> bool:
        return local_stability_check(self.f_v, self.f_s, self.f_dv)


def local_stability_check(f_v: float, f_s: float, f_dv: float) -> bool:
    """True when small perturbations around the equilibrium decay."""
    return (f_v + f_dv) < 0 and f_s > 0


def string_stability_criterion(f_v: float, f_s: float, f_dv: float) -> float:
    """Positive means perturbations attenuate along a vehicle chain."""
    return f_v * f_v - 2.0 * f_s + 2.0 * f_v * f_dv


def _states_at(v: float, spacings: np.ndarray) -> np.ndarray:
    out = np.zeros((len(spacings), 3))
    out[:, 0] = v
    out[:, 1] = spacings
    return out


def _check_monotone(model, v: float, cfg: EquilibriumSearchConfig) -> np.ndarray:
    """Scan accel over spacing; raise if any da/ds is negative."""
    spacings = np.linspace(cfg.s_min, cfg.s_max, cfg.scan_points)
    states = _states_at(v, spacings)
    grads = model.input_grad_batch(states)
    if np.any(grads[:, 1] < 0):
        raise AmbiguousEquilibriumError(v)
    return model.accel_batch(states)


def _grad_point(model, v: float, s: float, residual: float) -> EquilibriumPoint:
    g = model.input_grad_batch(np.array([[v, s, 0.0]]))[0]
    return EquilibriumPoint(
        v_e=float(v),
        s_e=float(s),
        residual=float(residual),
        f_v=float(g[0]),
        f_s=float(g[1]),
        f_dv=float(g[2]),
    )


def _bisect(model, v, lo, hi, f_lo, tol, max_iter, exact=False):
    """Root of a(s) on [lo, hi] given a sign change; a increasing in s.

    With `exact` the loop runs until the bracket collapses to adjacent
    floats, which platoon initialization needs; `tol`/`max_iter` bound the
    standard search otherwise.
    """
    a_mid = None
    for _ in range(max_iter if not exact else 200):
        mid = 0.5 * (lo + hi)
        if exact and (mid == lo or mid == hi):
            break
        a_mid = float(model.accel_batch(np.array([[v, mid, 0.0]]))[0])
        if not exact and abs(a_mid) <= tol:
            return mid, a_mid
        same_side = (a_mid < 0) == (f_lo < 0)
        if same_side:
            lo = mid
        else:
            hi = mid
        if not exact and (hi - lo) <= tol:
            break
    mid = 0.5 * (lo + hi) if not exact else lo
    return mid, float(model.accel_batch(np.array([[v, mid, 0.0]]))[0])


def equilibrium_at_speed(
    model, v: float, cfg: EquilibriumSearchConfig | None = None, exact: bool = False
) -> EquilibriumPoint:
    """Equilibrium spacing at one speed; NoEquilibriumError if none exists.

    `exact` drives the bisection down to float resolution instead of the
    configured tolerance.
    """
    cfg = cfg or EquilibriumSearchConfig()
    accels = _check_monotone(model, v, cfg)
    spacings = np.linspace(cfg.s_min, cfg.s_max, cfg.scan_points)
    if accels[0] > 0 or accels[-1] < 0:
        raise NoEquilibriumError(
            f"no zero crossing of acceleration in spacing range at v = {v:g} m/s"
        )
    crossing = np.nonzero((accels[:-1] <= 0) & (accels[1:] >= 0))[0]
    i = int(crossing[0])
    if accels[i] == 0.0:
        return _grad_point(model, v, spacings[i], 0.0)
    s_root, resid = _bisect(
        model, v, spacings[i], spacings[i + 1], accels[i], cfg.tol, cfg.max_iter,
        exact=exact,
    )
    return _grad_point(model, v, s_root, resid)


def find_equilibria(
    model,
    cfg: EquilibriumSearchConfig | None = None,
    return_skipped: bool = False,
):
    """Equilibria over the configured speed grid.

    Speeds without a sign change in the spacing interval are skipped; a
    non-monotone accel-vs-spacing profile at any grid speed raises
    AmbiguousEquilibriumError naming the speed. Returns the points, plus the
    skipped speeds when `return_skipped` is set.
    """
    cfg = cfg or EquilibriumSearchConfig()
    points: list[EquilibriumPoint] = []
    skipped: list[float] = []
    for v in cfg.speeds():
        try:
            points.append(equilibrium_at_speed(model, float(v), cfg))
        except NoEquilibriumError:
            skipped.append(float(v))
    if return_skipped:
        return points, skipped
    return points


def monotonicity_audit(model, states: np.ndarray) -> dict:
    """Fraction of states where a partial has the wrong strict sign.

    Correct signs are da/dv < 0, da/ds > 0, da/ddv < 0; an exact zero is not
    counted as a violation.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    g = model.input_grad_batch(states)
    n = len(states)
    return {
        "v": float(np.count_nonzero(g[:, 0] > 0) / n),
        "s": float(np.count_nonzero(g[:, 1] < 0) / n),
        "dv": float(np.count_nonzero(g[:, 2] > 0) / n),
        "n_samples": n,
    }


@dataclass
class StabilityReport:
    points: list
    skipped_speeds: list
    audit: dict = field(default_factory=dict)
    locally_stable: bool = False
    min_criterion: float | None = None
    string_stable: bool = False

    def to_dict(self) -> dict:
        return {
            "n_equilibria": len(self.points),
            "skipped_speeds": self.skipped_speeds,
            "audit": self.audit,
            "locally_stable": self.locally_stable,
            "min_criterion": self.min_criterion,
            "string_stable": self.string_stable,
            "points": [
                {
                    "v_e": p.v_e,
                    "s_e": p.s_e,
                    "residual": p.residual,
                    "f_v": p.f_v,
                    "f_s": p.f_s,
                    "f_dv": p.f_dv,
                    "ss_criterion": p.ss_criterion,
                }
                for p in self.points
            ],
        }

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["v_e", "s_e", "f_v", "f_s", "f_dv", "ss_criterion"])
            for p in self.points:
                w.writerow(
                    [f"{x:.10g}" for x in (p.v_e, p.s_e, p.f_v, p.f_s, p.f_dv, p.ss_criterion)]
                )


def analyze(
    model,
    cfg: EquilibriumSearchConfig | None = None,
    audit_states: np.ndarray | None = None,
) -> StabilityReport:
    """Full picture: equilibria, per-point stability, optional sign audit."""
    points, skipped = find_equilibria(model, cfg, return_skipped=True)
    crits = [p.ss_criterion for p in points]
    report = StabilityReport(
        points=points,
        skipped_speeds=skipped,
        locally_stable=bool(points) and all(p.locally_stable for p in points),
        min_criterion=min(crits) if crits else None,
        string_stable=bool(crits) and min(crits) > 0,
    )
    if audit_states is not None:
        report.audit = monotonicity_audit(model, audit_states)
    return report
