"""Recorded-dataset ingest, IDM calibration, and cross-dataset scoring.

Ingest turns a flat per-frame vehicle table (NGSIM-like) into leader/follower
trajectory pairs. A usable pair is a maximal frame-contiguous segment where
the follower keeps the same leader and lane, lasts at least a minimum
duration, and both vehicles are passenger cars. Malformed rows or segments
warn and are skipped, never fatal.

Scoring replays each model over each dataset's pairs. Cross-dataset
aggregation weights every dataset by the inverse error of a calibrated IDM
baseline on that dataset, so "1.0" means exactly baseline-equivalent and
datasets that are intrinsically hard to predict do not dominate the average.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.optimize import minimize

from .core import DEFAULT_IDM_PARAMS, IdmModel, IdmParams, idm_equilibrium_spacing
from .sim import Trajectory, evaluate_rmse, replay_simulate

CANONICAL_COLUMNS = ("id", "frame", "pos", "speed", "lane", "leader", "vclass", "length")


@dataclass(frozen=True)
class TrajectorySchema:
    """Mapping from canonical column names to the table's actual columns."""

    columns: dict
    dt: float
    car_classes: tuple = (2,)
    no_leader: object = 0

    def __post_init__(self):
        missing = [c for c in CANONICAL_COLUMNS if c not in self.columns]
        if missing:
            raise ValueError(f"schema is missing canonical columns: {missing}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @classmethod
    def from_json(cls, path) -> "TrajectorySchema":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        return cls(
            columns=d["columns"],
            dt=float(d["dt"]),
            car_classes=tuple(d.get("car_classes", (2,))),
            no_leader=d.get("no_leader", 0),
        )

    def col(self, name: str) -> str:
        return self.columns[name]


@dataclass
class CfPair:
    traj: Trajectory
    follower_id: int
    leader_id: int
    dataset: str = ""

    @property
    def duration(self) -> float:
        return self.traj.duration


def extract_pairs(
    df: pd.DataFrame,
    schema: TrajectorySchema,
    min_duration: float = 30.0,
    dataset: str = "",
) -> list[CfPair]:
    """Leader/follower pairs satisfying the three usability filters."""
    c = schema.col
    need = [c(k) for k in CANONICAL_COLUMNS]
    missing = [col for col in need if col not in df.columns]
    if missing:
        raise ValueError(f"table is missing columns: {missing}")

    work = df[need].copy()
    work.columns = CANONICAL_COLUMNS
    bad = ~np.isfinite(work[["pos", "speed"]]).all(axis=1)
    if bad.any():
        warnings.warn(
            f"dropping {int(bad.sum())} rows with non-finite position/speed",
            RuntimeWarning,
            stacklevel=2,
        )
        work = work[~bad]

    by_vehicle = {vid: g.sort_values("frame") for vid, g in work.groupby("id")}
    classes = {vid: g["vclass"].iloc[0] for vid, g in by_vehicle.items()}
    lengths = {vid: float(g["length"].iloc[0]) for vid, g in by_vehicle.items()}

    pairs: list[CfPair] = []
    for vid, g in by_vehicle.items():
        if classes[vid] not in schema.car_classes:
            continue
        frames = g["frame"].to_numpy()
        leaders = g["leader"].to_numpy()
        lanes = g["lane"].to_numpy()
        # segment on frame gaps or any change of leader / lane
        breaks = np.nonzero(
            (np.diff(frames) != 1) | (np.diff(leaders) != 0) | (np.diff(lanes) != 0)
        )[0]
        starts = np.concatenate([[0], breaks + 1])
        ends = np.concatenate([breaks + 1, [len(g)]])
        for a, b in zip(starts, ends):
            leader = leaders[a]
            if leader == schema.no_leader or (b - a - 1) * schema.dt < min_duration:
                continue
            if classes.get(leader) not in schema.car_classes:
                continue
            seg = g.iloc[a:b]
            lead = by_vehicle[leader]
            lead_seg = lead[lead["frame"].isin(seg["frame"])]
            if len(lead_seg) != len(seg):
                warnings.warn(
                    f"vehicle {vid}: leader {leader} missing frames, segment skipped",
                    RuntimeWarning,
                    stacklevel=2,
                )
                continue
            try:
                traj = Trajectory(
                    dt=schema.dt,
                    leader_x=lead_seg["pos"].to_numpy(dtype=float),
                    leader_v=lead_seg["speed"].to_numpy(dtype=float),
                    follower_x=seg["pos"].to_numpy(dtype=float),
                    follower_v=seg["speed"].to_numpy(dtype=float),
                    leader_length=lengths[leader],
                )
            except ValueError as exc:
                warnings.warn(
                    f"vehicle {vid}: unusable segment ({exc})",
                    RuntimeWarning,
                    stacklevel=2,
                )
                continue
            pairs.append(
                CfPair(
                    traj=traj,
                    follower_id=int(vid),
                    leader_id=int(leader),
                    dataset=dataset,
                )
            )
    return pairs


def make_synthetic_table(
    params: IdmParams | None = None,
    n_pairs: int = 4,
    duration: float = 60.0,
    dt: float = 0.1,
    seed: int = 0,
):
    """IDM-driven table in canonical-roundtrip form; returns (df, schema).

    Each pair is a leader riding a smooth speed wave and an IDM follower
    integrated behind it. Useful as calibration ground truth: the generating
    parameters should be recoverable from the emitted table.
    """
    params = params or DEFAULT_IDM_PARAMS
    rng = np.random.default_rng(seed)
    model = IdmModel(params)
    steps = int(round(duration / dt)) + 1
    t = dt * np.arange(steps)
    rows = []
    for i in range(n_pairs):
        lead_id, foll_id = 2 * i + 1, 2 * i + 2
        v_base = rng.uniform(8.0, 14.0)
        amp = rng.uniform(1.0, 2.5)
        period = rng.uniform(20.0, 40.0)
        phase = rng.uniform(0.0, 2 * np.pi)
        w = 2 * np.pi / period
        lv = v_base + amp * np.sin(w * t + phase)
        lx = 1000.0 * i + v_base * t - (amp / w) * (np.cos(w * t + phase) - np.cos(phase))
        length = 4.5
        fx = np.empty(steps)
        fv = np.empty(steps)
        fx[0] = lx[0] - length - idm_equilibrium_spacing(params, lv[0] if lv[0] < params.v0 else v_base)
        fv[0] = lv[0]
        for k in range(steps - 1):
            gap = lx[k] - fx[k] - length
            a = float(model.accel_batch(np.array([[fv[k], gap, fv[k] - lv[k]]]))[0])
            a = float(np.clip(a, -5.0, 5.0))
            v_next = max(0.0, fv[k] + a * dt)
            if fv[k] + a * dt < 0:
                t_stop = fv[k] / -a
                fx[k + 1] = fx[k] + fv[k] * t_stop + 0.5 * a * t_stop**2
            else:
                fx[k + 1] = fx[k] + fv[k] * dt + 0.5 * a * dt**2
            fv[k + 1] = v_next
        for vid, xs, vs, leader in ((lead_id, lx, lv, 0), (foll_id, fx, fv, lead_id)):
            for k in range(steps):
                rows.append(
                    {
                        "veh": vid,
                        "frm": k,
                        "y": xs[k],
                        "spd": vs[k],
                        "ln": 1,
                        "pre": leader,
                        "cls": 2,
                        "len": length,
                    }
                )
    df = pd.DataFrame(rows)
    schema = TrajectorySchema(
        columns={
            "id": "veh",
            "frame": "frm",
            "pos": "y",
            "speed": "spd",
            "lane": "ln",
            "leader": "pre",
            "vclass": "cls",
            "length": "len",
        },
        dt=dt,
    )
    return df, schema


DEFAULT_IDM_BOUNDS = {
    "v0": (5.0, 45.0),
    "T": (0.3, 3.5),
    "s0": (0.5, 8.0),
    "a_max": (0.3, 4.0),
    "b": (0.5, 5.0),
}

_PARAM_ORDER = ("v0", "T", "s0", "a_max", "b")


@dataclass
class CalibrationInfo:
    best_rmse: float
    collisions: int
    history: list = field(default_factory=list)


def _fitness(genome: np.ndarray, pairs) -> tuple[float, float, int]:
    model = IdmModel(IdmParams(*genome))
    results = [replay_simulate(model, p.traj) for p in pairs]
    rmse = evaluate_rmse(results, [p.traj for p in pairs])
    collided = sum(1 for r in results if r.collided)
    # collisions are legal but heavily discouraged in the ranking
    return rmse + 10.0 * collided, rmse, collided


def calibrate_idm(
    pairs,
    bounds: dict | None = None,
    pop_size: int = 50,
    generations: int = 100,
    seed: int = 0,
    mutation_prob: float = 0.2,
    elite: int = 2,
    polish_maxfev: int = 400,
) -> tuple[IdmParams, CalibrationInfo]:
    """Evolutionary fit of IDM parameters to recorded pairs.

    Minimizes pooled spacing RMSE (plus a 10 m penalty per collided
    trajectory). Tournament selection of 3, blend crossover, per-gene
    Gaussian mutation, elitism, then a bounded Nelder-Mead polish of the
    champion (the population explores, the polish converges). All stochastic
    draws come from one seeded generator and the polish is deterministic, so
    a fixed seed fixes the result. If every parameterization collides
    somewhere, the best found is still returned with its collision count in
    the info.
    """
    if not pairs:
        raise ValueError("calibration needs at least one trajectory pair")
    if pop_size < 4 or generations < 1:
        raise ValueError("population must be >= 4 and generations >= 1")
    bounds = bounds or DEFAULT_IDM_BOUNDS
    lo = np.array([bounds[k][0] for k in _PARAM_ORDER])
    hi = np.array([bounds[k][1] for k in _PARAM_ORDER])
    if np.any(lo <= 0) or np.any(hi <= lo):
        raise ValueError("bounds must be positive with hi > lo")
    rng = np.random.default_rng(seed)

    pop = rng.uniform(lo, hi, size=(pop_size, 5))
    history = []
    best_tuple = None
    for _ in range(generations):
        scored = [_fitness(g, pairs) for g in pop]
        order = np.argsort([s[0] for s in scored], kind="stable")
        pop = pop[order]
        scored = [scored[i] for i in order]
        if best_tuple is None or scored[0][0] < best_tuple[0]:
            best_tuple = (scored[0][0], pop[0].copy(), scored[0][1], scored[0][2])
        history.append(scored[0][1])

        nxt = [pop[i].copy() for i in range(min(elite, pop_size))]
        while len(nxt) < pop_size:
            i1 = min(rng.integers(pop_size, size=3))
            i2 = min(rng.integers(pop_size, size=3))
            u = rng.uniform(-0.25, 1.25, size=5)
            child = u * pop[i1] + (1.0 - u) * pop[i2]
            mutate = rng.random(5) < mutation_prob
            child = child + mutate * rng.normal(0.0, 0.1 * (hi - lo), size=5)
            nxt.append(np.clip(child, lo, hi))
        pop = np.array(nxt)

    score, genome, rmse, collided = best_tuple
    if polish_maxfev > 0:
        res = minimize(
            lambda g: _fitness(g, pairs)[0],
            genome,
            method="Nelder-Mead",
            bounds=list(zip(lo, hi)),
            options={"xatol": 1e-4, "fatol": 1e-8, "maxfev": polish_maxfev},
        )
        cand = np.clip(res.x, lo, hi)
        cand_score, cand_rmse, cand_coll = _fitness(cand, pairs)
        if cand_score < score:
            genome, rmse, collided = cand, cand_rmse, cand_coll
        history.append(rmse)
    params = IdmParams(*genome)
    return params, CalibrationInfo(best_rmse=rmse, collisions=collided, history=history)


def aggregate_errors(errors: dict, idm_star: dict) -> float:
    """Cross-dataset score: sum_d(err_d / istar_d) / sum_d(1 / istar_d)."""
    if set(errors) != set(idm_star):
        raise ValueError(
            f"dataset keys disagree: {sorted(errors)} vs {sorted(idm_star)}"
        )
    if not errors:
        raise ValueError("nothing to aggregate")
    for k, v in idm_star.items():
        if not v > 0:
            raise ValueError(f"baseline error for {k!r} must be positive, got {v}")
    num = sum(errors[k] / idm_star[k] for k in errors)
    den = sum(1.0 / idm_star[k] for k in errors)
    return num / den


class PerDatasetModel:
    """One model per dataset under a single leaderboard name.

    cross_evaluate resolves the concrete model through for_dataset(); the
    usual case is the calibrated IDM baseline, which is fit per dataset.
    """

    def __init__(self, models: dict):
        if not models:
            raise ValueError("need at least one model")
        self.models = models

    def for_dataset(self, name: str):
        if name not in self.models:
            raise ValueError(f"no model calibrated for dataset {name!r}")
        return self.models[name]


@dataclass
class CrossEvalResult:
    rows: list  # dicts: model, dataset, rmse, collisions
    aggregates: dict  # model -> score
    idm_star: dict

    def ranking(self) -> list:
        return sorted(self.aggregates, key=lambda m: self.aggregates[m])

    def save_csv(self, path) -> None:
        import csv

        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["model", "dataset", "rmse", "collisions", "aggregate"])
            for name in self.ranking():
                for row in self.rows:
                    if row["model"] != name:
                        continue
                    w.writerow(
                        [
                            name,
                            row["dataset"],
                            f"{row['rmse']:.6f}",
                            row["collisions"],
                            f"{self.aggregates[name]:.6f}",
                        ]
                    )

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "ranking": self.ranking(),
                    "aggregates": self.aggregates,
                    "idm_star": self.idm_star,
                    "rows": self.rows,
                },
                fh,
                indent=2,
            )
            fh.write("\n")


def cross_evaluate(
    models: dict,
    datasets: dict,
    idm_star: dict | None = None,
    baseline: str = "idm*",
) -> CrossEvalResult:
    """Replay every model over every dataset and aggregate.

    `idm_star` gives the per-dataset normalizers directly; when omitted, the
    entry named by `baseline` in `models` is scored first and its per-dataset
    RMSE becomes the normalizer.
    """
    if not models or not datasets:
        raise ValueError("need at least one model and one dataset")
    per: dict = {name: {} for name in models}
    rows = []
    for name, model in models.items():
        for dname, pairs in datasets.items():
            if not pairs:
                raise ValueError(f"dataset {dname!r} has no pairs")
            active = model.for_dataset(dname) if hasattr(model, "for_dataset") else model
            results = [replay_simulate(active, p.traj) for p in pairs]
            rmse = evaluate_rmse(results, [p.traj for p in pairs])
            collided = sum(1 for r in results if r.collided)
            per[name][dname] = rmse
            rows.append(
                {"model": name, "dataset": dname, "rmse": rmse, "collisions": collided}
            )
    if idm_star is None:
        if baseline not in per:
            raise ValueError(
                f"no idm_star given and no {baseline!r} model to derive it from"
            )
        idm_star = dict(per[baseline])
    aggregates = {name: aggregate_errors(per[name], idm_star) for name in models}
    return CrossEvalResult(rows=rows, aggregates=aggregates, idm_star=idm_star)
