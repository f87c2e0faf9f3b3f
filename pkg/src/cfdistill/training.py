"""Distillation training loop.

Modes control what the student learns from and which penalties are active:

    basic    every valid teacher response becomes its own training pair
    random   one uniformly drawn valid response per scenario
    consist  the majority-vote label per scenario
    mono     consist labels + monotonicity penalty
    full     consist labels + monotonicity and string-stability penalties

The string-stability penalty needs equilibrium points, which only exist once
the network is roughly monotone, so it stays off until sign violations on a
probe set drop below a threshold and the equilibria are then re-derived every
`refresh_period` epochs. Validation always scores against majority labels so
the early-stopping signal is comparable across modes.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .losses import LossConfig, loss_and_param_grads
from .net import MlpModel, MlpSpec
from .scenarios import generate_scenarios
from .stability import (
    AmbiguousEquilibriumError,
    EquilibriumSearchConfig,
    find_equilibria,
    monotonicity_audit,
    string_stability_criterion,
)

MODES = ("basic", "random", "consist", "mono", "full")


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    mode: str = "full"
    theta_mon: float = 5000.0
    theta_str: float = 0.9
    delta: tuple[float, float, float] = (0.0, 1.0, 1.0)
    lr: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 20
    refresh_period: int = 1
    warmup_threshold: float = 0.01
    probe_samples: int = 2000
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0
    eq_config: EquilibriumSearchConfig = field(default_factory=EquilibriumSearchConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.theta_mon < 0 or self.theta_str < 0:
            raise ValueError("penalty weights must be non-negative")
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("bad optimizer settings")
        if self.patience < 1 or self.refresh_period < 1:
            raise ValueError("patience and refresh_period must be >= 1")
        if abs(sum(self.fractions) - 1.0) > 1e-9 or any(f < 0 for f in self.fractions):
            raise ValueError("split fractions must be non-negative and sum to 1")

    def loss_config(self) -> LossConfig:
        """Penalty weights after mode gating."""
        t_mon = self.theta_mon if self.mode in ("mono", "full") else 0.0
        t_str = self.theta_str if self.mode == "full" else 0.0
        return LossConfig(theta_mon=t_mon, theta_str=t_str, delta=self.delta)


class Adam:
    """Plain Adam on a flat parameter vector."""

    def __init__(self, n: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = np.zeros(n)
        self.v = np.zeros(n)

    def update(self, grad: np.ndarray) -> np.ndarray:
        """Returns the step to subtract from the parameters."""
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def split_dataset(items, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Shuffled train/val/test split; sizes are rounded, remainder to test."""
    n = len(items)
    if n < 10:
        raise ValueError(f"need at least 10 items to split, got {n}")
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f < 0 for f in fractions):
        raise ValueError("fractions must be non-negative and sum to 1")
    idx = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    parts = (idx[:n_train], idx[n_train : n_train + n_val], idx[n_train + n_val :])
    if isinstance(items, np.ndarray):
        return tuple(items[p] for p in parts)
    return tuple([items[i] for i in p] for p in parts)


def prepare_training_labels(labeled, mode: str, seed: int = 0):
    """Turn labeled scenarios into (states, labels) arrays for one mode.

    Flagged scenarios (no valid votes) are dropped. basic replicates the
    state once per valid response; random draws one valid response per
    scenario; every other mode uses the majority label.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    rng = np.random.default_rng(seed)
    states, labels = [], []
    for item in labeled:
        if item.flagged or item.label is None:
            continue
        st = (item.v, item.s, item.dv)
        if mode == "basic":
            for resp in item.votes:
                if resp.valid:
                    states.append(st)
                    labels.append(resp.accel)
        elif mode == "random":
            valid = [r.accel for r in item.votes if r.valid]
            states.append(st)
            labels.append(valid[rng.integers(len(valid))])
        else:
            states.append(st)
            labels.append(item.label)
    if not states:
        raise ValueError("no usable labeled scenarios")
    return np.asarray(states, dtype=np.float64), np.asarray(labels, dtype=np.float64)


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    c_mon: float
    c_str: float
    total: float
    val_mse: float
    n_equilibria: int
    min_criterion: float | None
    str_in_use: bool


@dataclass
class TrainRun:
    mode: str
    records: list
    best_epoch: int
    best_val_mse: float
    stop_reason: str
    stable_checkpoint: bool

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                [
                    "epoch", "train_mse", "c_mon", "c_str", "total",
                    "val_mse", "n_equilibria", "min_criterion", "str_in_use",
                ]
            )
            for r in self.records:
                w.writerow(
                    [
                        r.epoch,
                        f"{r.train_mse:.10g}",
                        f"{r.c_mon:.10g}",
                        f"{r.c_str:.10g}",
                        f"{r.total:.10g}",
                        f"{r.val_mse:.10g}",
                        r.n_equilibria,
                        "" if r.min_criterion is None else f"{r.min_criterion:.10g}",
                        int(r.str_in_use),
                    ]
                )


def _crit_min(points) -> float | None:
    if not points:
        return None
    return min(string_stability_criterion(p.f_v, p.f_s, p.f_dv) for p in points)


def train(
    model: MlpModel,
    train_states: np.ndarray,
    train_labels: np.ndarray,
    val_states: np.ndarray,
    val_labels: np.ndarray,
    cfg: TrainingConfig,
):
    """Optimize the model in place; returns (best_model, TrainRun).

    Checkpointing: in full mode the returned model is the lowest-val-MSE
    epoch among those whose end-of-epoch equilibria all satisfy the string
    criterion; if no epoch qualifies, the plain best-val checkpoint is
    returned with stable_checkpoint=False. Other modes return best-val.
    """
    lcfg = cfg.loss_config()
    use_str = lcfg.theta_str > 0
    rng = np.random.default_rng(cfg.seed)
    probe = generate_scenarios(count=cfg.probe_samples, seed=cfg.seed + 101).states

    n = len(train_states)
    adam = Adam(model.n_params, cfg.lr)
    equilibria = None
    warm = False
    best_any = (np.inf, -1, None)
    best_stable = (np.inf, -1, None)
    bad_epochs = 0
    records: list[EpochRecord] = []
    stop_reason = "max_epochs"

    for epoch in range(cfg.max_epochs):
        perm = rng.permutation(n)
        sums = np.zeros(4)
        str_in_use = use_str and warm and equilibria is not None
        for start in range(0, n, cfg.batch_size):
            take = perm[start : start + cfg.batch_size]
            try:
                bd, (dWs, dbs) = loss_and_param_grads(
                    model,
                    train_states[take],
                    train_labels[take],
                    lcfg,
                    equilibria if str_in_use else None,
                )
            except Exception as exc:
                raise TrainingDivergedError(
                    f"loss evaluation failed at epoch {epoch}: {exc}"
                ) from exc
            flat_grad = np.concatenate(
                [g.ravel() for g in dWs] + [g.ravel() for g in dbs]
            )
            model.from_flat(model.to_flat() - adam.update(flat_grad))
            w = len(take)
            sums += w * np.array([bd.mse, bd.c_mon, bd.c_str, bd.total])

        train_mse, c_mon, c_str, total = sums / n
        val_err = model.accel_batch(val_states) - val_labels
        val_mse = float(np.mean(val_err * val_err))
        if not np.isfinite(val_mse) or not np.isfinite(total):
            raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")

        # refresh the equilibrium set on the end-of-epoch parameters; the
        # next epoch trains against it and the checkpoint rule reads it
        min_crit = None
        if use_str:
            if not warm:
                audit = monotonicity_audit(model, probe)
                # gate on the spacing response (the equilibrium bisection
                # assumes it) plus every penalized condition; delta=0
                # conditions are exempt from C_mon and so from the gate
                gated = [audit["s"]] + [
                    audit[name]
                    for name, d in zip(("v", "s", "dv"), cfg.delta)
                    if d > 0
                ]
                warm = max(gated) < cfg.warmup_threshold
            if warm and (equilibria is None or (epoch + 1) % cfg.refresh_period == 0):
                try:
                    equilibria = find_equilibria(model, cfg.eq_config)
                except AmbiguousEquilibriumError:
                    equilibria = None
            min_crit = _crit_min(equilibria)

        records.append(
            EpochRecord(
                epoch=epoch,
                train_mse=float(train_mse),
                c_mon=float(c_mon),
                c_str=float(c_str),
                total=float(total),
                val_mse=val_mse,
                n_equilibria=0 if equilibria is None else len(equilibria),
                min_criterion=min_crit,
                str_in_use=str_in_use,
            )
        )

        if val_mse < best_any[0]:
            best_any = (val_mse, epoch, model.copy())
            bad_epochs = 0
        else:
            bad_epochs += 1
        if use_str and min_crit is not None and min_crit > 0:
            if val_mse < best_stable[0]:
                best_stable = (val_mse, epoch, model.copy())
        if bad_epochs >= cfg.patience:
            stop_reason = "patience"
            break

    if use_str and best_stable[2] is not None:
        val, ep, chosen = best_stable
        stable = True
    else:
        val, ep, chosen = best_any
        stable = False
    model.set_params_from(chosen)
    run = TrainRun(
        mode=cfg.mode,
        records=records,
        best_epoch=ep,
        best_val_mse=float(val),
        stop_reason=stop_reason,
        stable_checkpoint=stable,
    )
    return model, run


def fit_from_labels(labeled, cfg: TrainingConfig, spec: MlpSpec | None = None):
    """Split labeled scenarios, build a fresh model, run training.

    Returns (model, run, splits) where splits holds the prepared arrays,
    including test data for downstream evaluation. Validation and test
    labels are majority labels in every mode.
    """
    tr, va, te = split_dataset(list(labeled), cfg.fractions, cfg.seed)
    train_states, train_labels = prepare_training_labels(tr, cfg.mode, cfg.seed)
    val_states, val_labels = prepare_training_labels(va, "consist")
    test_states, test_labels = prepare_training_labels(te, "consist")
    model = MlpModel.init_random(spec or MlpSpec(), cfg.seed)
    model, run = train(model, train_states, train_labels, val_states, val_labels, cfg)
    splits = {
        "train": (train_states, train_labels),
        "val": (val_states, val_labels),
        "test": (test_states, test_labels),
    }
    return model, run, splits
