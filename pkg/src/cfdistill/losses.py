"""Training loss: MSE plus monotonicity and string-stability penalties.

Both penalties act on input gradients of the network, so their parameter
gradients require differentiating through the gradient computation itself.
That second-order pass is exact (forward-mode tangent + reverse sweep in the
kernels), not a finite-difference approximation, and `check_param_grads`
verifies it against central differences coordinate by coordinate.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .net import MlpModel


class NonFiniteLossError(RuntimeError):
    """A forward or gradient quantity went NaN/inf during loss evaluation."""

    def __init__(self, stage: str, sample_index: int | None = None):
        self.stage = stage
        self.sample_index = sample_index
        where = f" at sample {sample_index}" if sample_index is not None else ""
        super().__init__(f"non-finite value in {stage}{where}")


@dataclass(frozen=True)
class LossConfig:
    """Penalty weights and per-input monotonicity switches.

    delta is (delta_v, delta_s, delta_dv); a zero entry disables the
    monotonicity hinge for that input.
    """

    theta_mon: float = 5000.0
    theta_str: float = 0.9
    delta: tuple[float, float, float] = (0.0, 1.0, 1.0)

    def __post_init__(self):
        if self.theta_mon < 0 or self.theta_str < 0:
            raise ValueError("penalty weights must be non-negative")
        if any(d < 0 for d in self.delta):
            raise ValueError("delta entries must be non-negative")


@dataclass
class LossBreakdown:
    mse: float
    c_mon: float
    c_str: float
    total: float
    str_active: bool = False
    n_equilibria: int = 0
    min_criterion: float | None = None


def _eq_states(equilibria) -> np.ndarray | None:
    """Accepts EquilibriumPoint sequences or raw (K, 2)/(K, 3) arrays."""
    if equilibria is None:
        return None
    if isinstance(equilibria, np.ndarray):
        arr = np.asarray(equilibria, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] not in (2, 3):
            raise ValueError("equilibrium array must be (K, 2) or (K, 3)")
        if arr.shape[1] == 2:
            arr = np.column_stack([arr[:, 0], arr[:, 1], np.zeros(len(arr))])
        return arr if len(arr) else None
    pts = list(equilibria)
    if not pts:
        return None
    return np.array([[p.v_e, p.s_e, 0.0] for p in pts], dtype=np.float64)


def _check_finite(arr: np.ndarray, stage: str) -> None:
    bad = ~np.isfinite(arr)
    if bad.any():
        idx = int(np.argwhere(bad)[0][0])
        raise NonFiniteLossError(stage, idx)


def loss_and_param_grads(
    model: MlpModel,
    states: np.ndarray,
    labels: np.ndarray,
    cfg: LossConfig,
    equilibria=None,
):
    """Returns (LossBreakdown, (dWs, dbs)) for one batch.

    The string-stability penalty treats the equilibrium states themselves as
    constants; only the network's gradients at those states carry parameter
    dependence. Penalty terms with zero weight are skipped entirely, so with
    theta_mon = theta_str = 0 the total equals the MSE exactly.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if len(states) != len(labels):
        raise ValueError("states and labels disagree in length")
    n = len(states)
    spec = model.spec
    act = spec.act_code
    kappa = spec.out_scale
    inv_scale = kappa / np.asarray(spec.input_scale)

    accel, (_, Hs) = model.forward_cached(states)
    _check_finite(accel, "forward")
    diff = accel - labels
    mse = float(np.mean(diff * diff))

    seed = (2.0 * kappa / n) * diff
    dWs, dbs = kernels.param_grads_output_seed(model.Ws, model.bs, Hs, seed, act)

    c_mon = 0.0
    if cfg.theta_mon > 0:
        G = kernels.input_grad(model.Ws, Hs, act) * inv_scale
        _check_finite(G, "input gradients")
        dv_, ds_, ddv_ = cfg.delta
        hinge = (
            dv_ * np.maximum(0.0, G[:, 0])
            + ds_ * np.maximum(0.0, -G[:, 1])
            + ddv_ * np.maximum(0.0, G[:, 2])
        )
        c_mon = float(np.mean(hinge))
        U = np.zeros_like(G)
        U[:, 0] = np.where(G[:, 0] > 0, dv_, 0.0)
        U[:, 1] = np.where(G[:, 1] < 0, -ds_, 0.0)
        U[:, 2] = np.where(G[:, 2] > 0, ddv_, 0.0)
        U *= inv_scale / n
        if np.any(U):
            mWs, mbs = kernels.param_grads_directional(model.Ws, model.bs, Hs, U, act)
            for acc, g in zip(dWs, mWs):
                acc += cfg.theta_mon * g
            for acc, g in zip(dbs, mbs):
                acc += cfg.theta_mon * g

    c_str = 0.0
    str_active = False
    min_crit = None
    eq = _eq_states(equilibria) if cfg.theta_str > 0 else None
    n_eq = 0 if eq is None else len(eq)
    if eq is not None:
        _, (_, He) = model.forward_cached(eq)
        Ge = kernels.input_grad(model.Ws, He, act) * inv_scale
        _check_finite(Ge, "equilibrium gradients")
        fv, fs, fdv = Ge[:, 0], Ge[:, 1], Ge[:, 2]
        crit = fv * fv - 2.0 * fs + 2.0 * fv * fdv
        i_star = int(np.argmin(crit))
        min_crit = float(crit[i_star])
        if min_crit < 0:
            c_str = -min_crit
            str_active = True
            Ue = np.zeros_like(Ge)
            Ue[i_star, 0] = -(2.0 * fv[i_star] + 2.0 * fdv[i_star])
            Ue[i_star, 1] = 2.0
            Ue[i_star, 2] = -2.0 * fv[i_star]
            Ue *= inv_scale
            sWs, sbs = kernels.param_grads_directional(model.Ws, model.bs, He, Ue, act)
            for acc, g in zip(dWs, sWs):
                acc += cfg.theta_str * g
            for acc, g in zip(dbs, sbs):
                acc += cfg.theta_str * g

    total = mse + cfg.theta_mon * c_mon + cfg.theta_str * c_str
    if not np.isfinite(total):
        raise NonFiniteLossError("total loss")
    for g in (*dWs, *dbs):
        if not np.isfinite(g).all():
            raise NonFiniteLossError("parameter gradients")

    breakdown = LossBreakdown(
        mse=mse,
        c_mon=c_mon,
        c_str=c_str,
        total=total,
        str_active=str_active,
        n_equilibria=n_eq,
        min_criterion=min_crit,
    )
    return breakdown, (dWs, dbs)


@dataclass
class GradCheckReport:
    n_checked: int
    max_rel_err: float
    mean_rel_err: float
    passed: bool
    worst: list = field(default_factory=list)


def _flat_grads(model: MlpModel, grads) -> np.ndarray:
    dWs, dbs = grads
    return np.concatenate([g.ravel() for g in dWs] + [g.ravel() for g in dbs])


def check_param_grads(
    model: MlpModel,
    states: np.ndarray,
    labels: np.ndarray,
    cfg: LossConfig,
    equilibria=None,
    coords: int | None = None,
    step: float = 1e-5,
    rtol: float = 1e-4,
    atol: float = 1e-8,
    seed: int = 0,
) -> GradCheckReport:
    """Central-difference validation of the analytic parameter gradients.

    `coords` limits the check to that many randomly chosen parameter
    coordinates (all of them when None). Works on a copy of the model.
    """
    work = model.copy()
    breakdown, grads = loss_and_param_grads(work, states, labels, cfg, equilibria)
    analytic = _flat_grads(work, grads)
    base = work.to_flat()

    if coords is None:
        idxs = np.arange(base.size)
    else:
        rng = np.random.default_rng(seed)
        idxs = rng.choice(base.size, size=min(coords, base.size), replace=False)

    def total_at(flat: np.ndarray) -> float:
        work.from_flat(flat)
        b, _ = loss_and_param_grads(work, states, labels, cfg, equilibria)
        return b.total

    rows = []
    for idx in idxs:
        bumped = base.copy()
        bumped[idx] = base[idx] + step
        up = total_at(bumped)
        bumped[idx] = base[idx] - step
        down = total_at(bumped)
        fd = (up - down) / (2.0 * step)
        err = abs(analytic[idx] - fd)
        denom = max(abs(analytic[idx]), abs(fd))
        rel = err / denom if denom > atol else 0.0
        rows.append((int(idx), float(analytic[idx]), float(fd), float(rel)))
    work.from_flat(base)

    rels = np.array([r[3] for r in rows])
    errs_ok = all(
        abs(a - f) <= atol or r <= rtol for _, a, f, r in rows
    )
    rows.sort(key=lambda r: -r[3])
    return GradCheckReport(
        n_checked=len(rows),
        max_rel_err=float(rels.max()) if len(rels) else 0.0,
        mean_rel_err=float(rels.mean()) if len(rels) else 0.0,
        passed=errs_ok,
        worst=rows[:10],
    )
