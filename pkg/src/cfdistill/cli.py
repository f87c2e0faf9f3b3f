"""Command-line pipeline driver.

Subcommands cover the full path from scenario sampling to cross-dataset
evaluation. Every run resolves its settings as CLI flag > config file >
built-in default, writes the resolved settings to <out-dir>/manifest.json
before doing any work, and only the `label` subcommand with the endpoint
teacher ever touches the network.

Exit codes: 0 success, 1 user error (bad arguments, missing files, missing
API key), 2 internal error.
"""
from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, kernels
from .core import DEFAULT_IDM_PARAMS, IdmModel, clamp_accel
from .dataeval import (
    PerDatasetModel,
    TrajectorySchema,
    calibrate_idm,
    cross_evaluate,
    extract_pairs,
)
from .losses import LossConfig, check_param_grads
from .net import MlpModel, MlpSpec
from .scenarios import ScenarioSet, generate_scenarios
from .sim import PlatoonConfig, platoon_simulate, string_stability_verdict, wmape
from .stability import AmbiguousEquilibriumError, EquilibriumSearchConfig, analyze
from .teacher import (
    ChatCompletionClient,
    EndpointConfig,
    EndpointTeacher,
    MissingApiKeyError,
    SyntheticOracle,
    label_scenarios,
    load_labels,
    save_labels,
)
from .training import MODES, TrainingConfig, fit_from_labels


class CliError(Exception):
    """User-facing error: bad input, bad config, missing file."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _add_common(p: _Parser) -> None:
    p.add_argument("--seed", type=int, default=None, help="base RNG seed")
    p.add_argument("--config", type=Path, default=None, help="JSON file with defaults for this subcommand")
    p.add_argument("--out-dir", type=Path, default=None, help="output directory (created if missing)")


def build_parser() -> _Parser:
    p = _Parser(prog="cfdistill", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[], help="sample scenarios to CSV")
    _add_common(g)
    g.add_argument("--count", type=int, default=None, help="number of scenarios")

    l = sub.add_parser("label", help="query the teacher and write labels")
    _add_common(l)
    l.add_argument("--scenarios", type=Path, default=None, help="scenarios CSV from `generate`")
    l.add_argument("--teacher", choices=("oracle", "endpoint"), default=None)
    l.add_argument("--k", type=int, default=None, help="replies per scenario")
    l.add_argument("--workers", type=int, default=None, help="concurrent scenarios")
    l.add_argument("--oracle-noise", type=float, default=None, help="oracle answer noise std")
    l.add_argument("--oracle-hallucination", type=float, default=None, help="oracle hallucination probability")
    l.add_argument("--endpoint-config", type=Path, default=None, help="JSON with EndpointConfig fields")

    t = sub.add_parser("train", help="distill labels into the neural model")
    _add_common(t)
    t.add_argument("--labels", type=Path, default=None, help="labels JSONL from `label`")
    t.add_argument("--mode", choices=MODES, default=None)
    t.add_argument("--theta-mon", type=float, default=None)
    t.add_argument("--theta-str", type=float, default=None)
    t.add_argument("--delta", type=str, default=None, help="penalty coefficients d_v,d_s,d_dv")
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--patience", type=int, default=None)
    t.add_argument("--hidden", type=str, default=None, help="comma-separated widths, e.g. 64,64")
    t.add_argument("--activation", choices=("tanh", "softplus"), default=None)
    t.add_argument("--out-scale", type=float, default=None)
    t.add_argument("--sweep", type=str, default=None, help="theta_str=v1,v2,... trains once per value")

    s = sub.add_parser("stability", help="equilibria and stability report for a checkpoint")
    _add_common(s)
    s.add_argument("--model", type=Path, default=None, help="model checkpoint JSON")
    s.add_argument("--audit-samples", type=int, default=None)
    s.add_argument("--grid-step", type=float, default=None, help="equilibrium speed grid step (m/s)")

    pl = sub.add_parser("platoon", help="platoon disturbance simulation")
    _add_common(pl)
    pl.add_argument("--model", type=Path, default=None, help="model checkpoint JSON")
    pl.add_argument("--n", type=int, default=None, help="vehicles in the platoon")
    pl.add_argument("--ve", type=float, default=None, help="equilibrium speed m/s")
    pl.add_argument("--horizon", type=float, default=None)
    pl.add_argument("--dt", type=float, default=None)
    pl.add_argument("--start", type=float, default=None, help="disturbance start time")
    pl.add_argument("--rate", type=float, default=None, help="disturbance accel magnitude")
    pl.add_argument("--phase", type=float, default=None, help="disturbance phase duration")

    e = sub.add_parser("evaluate", help="cross-dataset leaderboard")
    _add_common(e)
    e.add_argument("--data", action="append", default=None, metavar="NAME=CSV", help="dataset table (repeatable)")
    e.add_argument("--schema", type=Path, default=None, help="column-mapping JSON")
    e.add_argument("--model", action="append", default=None, metavar="NAME=JSON", help="model checkpoint (repeatable)")
    e.add_argument("--idm-star", type=Path, default=None, help="JSON {dataset: baseline rmse}; calibrated when omitted")
    e.add_argument("--min-duration", type=float, default=None)
    e.add_argument("--calib-pop", type=int, default=None)
    e.add_argument("--calib-gens", type=int, default=None)

    gc = sub.add_parser("gradcheck", help="finite-difference check of the training gradients")
    _add_common(gc)
    gc.add_argument("--hidden", type=str, default=None)
    gc.add_argument("--coords", type=int, default=None)
    gc.add_argument("--batch", type=int, default=None)

    return p


DEFAULTS = {
    "generate": {"seed": 0, "count": 10000, "out_dir": "runs/generate"},
    "label": {
        "seed": 0,
        "out_dir": "runs/label",
        "scenarios": None,
        "teacher": "oracle",
        "k": 5,
        "workers": 1,
        "oracle_noise": 0.0,
        "oracle_hallucination": 0.0,
        "endpoint_config": None,
    },
    "train": {
        "seed": 0,
        "out_dir": "runs/train",
        "labels": None,
        "mode": "full",
        "theta_mon": 5000.0,
        "theta_str": 0.9,
        "delta": "0,1,1",
        "lr": 1e-3,
        "batch_size": 256,
        "epochs": 200,
        "patience": 20,
        "hidden": "64,64",
        "activation": "tanh",
        "out_scale": 1.0,
        "sweep": None,
    },
    "stability": {
        "seed": 0,
        "out_dir": "runs/stability",
        "model": None,
        "audit_samples": 2000,
        "grid_step": 0.5,
    },
    "platoon": {
        "seed": 0,
        "out_dir": "runs/platoon",
        "model": None,
        "n": 100,
        "ve": 5.0,
        "horizon": 100.0,
        "dt": 0.1,
        "start": 6.0,
        "rate": 0.5,
        "phase": 3.0,
    },
    "evaluate": {
        "seed": 0,
        "out_dir": "runs/evaluate",
        "data": None,
        "schema": None,
        "model": None,
        "idm_star": None,
        "min_duration": 30.0,
        "calib_pop": 50,
        "calib_gens": 100,
    },
    "gradcheck": {"seed": 0, "out_dir": None, "hidden": "16,16", "coords": 200, "batch": 64},
}


def resolve_settings(args: argparse.Namespace) -> dict:
    """flag > config file > default, with unknown config keys rejected."""
    defaults = DEFAULTS[args.command]
    merged = dict(defaults)
    if args.config is not None:
        if not Path(args.config).is_file():
            raise CliError(f"config file not found: {args.config}")
        with open(args.config, encoding="utf-8") as fh:
            try:
                cfg = json.load(fh)
            except json.JSONDecodeError as exc:
                raise CliError(f"config file is not valid JSON: {exc}") from exc
        unknown = set(cfg) - set(defaults)
        if unknown:
            raise CliError(f"unknown config keys for {args.command}: {sorted(unknown)}")
        merged.update(cfg)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    return merged


def _prepare_out_dir(settings: dict, command: str) -> Path:
    out = Path(settings["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "package_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "settings": {
            k: (str(v) if isinstance(v, Path) else v) for k, v in settings.items()
        },
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def _require(settings: dict, key: str, flag: str):
    if settings.get(key) is None:
        raise CliError(f"{flag} is required")
    return settings[key]


def _require_file(path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise CliError(f"{what} not found: {path}")
    return path


def _parse_hidden(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in str(text).split(",") if x.strip())
    except ValueError as exc:
        raise CliError(f"bad --hidden value {text!r}") from exc


def cmd_generate(settings: dict) -> int:
    out = _prepare_out_dir(settings, "generate")
    if settings["count"] < 1:
        raise CliError("--count must be >= 1")
    scen = generate_scenarios(count=settings["count"], seed=settings["seed"])
    scen.to_csv(out / "scenarios.csv")
    print(f"wrote {len(scen)} scenarios to {out / 'scenarios.csv'}")
    return 0


def _make_teacher(settings: dict):
    if settings["teacher"] == "oracle":
        return SyntheticOracle(
            params=DEFAULT_IDM_PARAMS,
            noise_std=settings["oracle_noise"],
            hallucination_prob=settings["oracle_hallucination"],
            seed=settings["seed"],
        )
    path = _require(settings, "endpoint_config", "--endpoint-config")
    with open(_require_file(path, "endpoint config"), encoding="utf-8") as fh:
        try:
            cfg = EndpointConfig(**json.load(fh))
        except (TypeError, ValueError, json.JSONDecodeError) as exc:
            raise CliError(f"bad endpoint config: {exc}") from exc
    return EndpointTeacher(ChatCompletionClient(cfg))


def cmd_label(settings: dict) -> int:
    out = _prepare_out_dir(settings, "label")
    scen_path = _require_file(_require(settings, "scenarios", "--scenarios"), "scenarios file")
    scen = ScenarioSet.from_csv(scen_path)
    teacher = _make_teacher(settings)
    labeled = label_scenarios(scen, teacher, k=settings["k"], max_workers=settings["workers"])
    save_labels(labeled, out / "labels.jsonl", out / "responses.jsonl")
    flagged = sum(1 for x in labeled if x.flagged)
    print(f"labeled {len(labeled)} scenarios ({flagged} flagged) into {out / 'labels.jsonl'}")
    return 0


def _parse_delta(text: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(x) for x in str(text).split(","))
    except ValueError as exc:
        raise CliError(f"bad --delta value {text!r}") from exc
    if len(parts) != 3:
        raise CliError("--delta needs exactly three comma-separated values")
    return parts


def _training_config(settings: dict, theta_str: float | None = None) -> TrainingConfig:
    return TrainingConfig(
        mode=settings["mode"],
        theta_mon=settings["theta_mon"],
        theta_str=settings["theta_str"] if theta_str is None else theta_str,
        delta=_parse_delta(settings["delta"]),
        lr=settings["lr"],
        batch_size=settings["batch_size"],
        max_epochs=settings["epochs"],
        patience=settings["patience"],
        seed=settings["seed"],
    )


def _train_once(labeled, settings: dict, theta_str: float | None = None):
    cfg = _training_config(settings, theta_str)
    spec = MlpSpec(
        hidden=_parse_hidden(settings["hidden"]),
        activation=settings["activation"],
        out_scale=settings["out_scale"],
    )
    model, run, splits = fit_from_labels(labeled, cfg, spec)
    test_states, test_labels = splits["test"]
    test_pred = model.accel_batch(test_states)
    test_mse = float(np.mean((test_pred - test_labels) ** 2))
    try:
        test_wmape = wmape(test_pred, test_labels)
    except ValueError:
        test_wmape = None
    try:
        report = analyze(model)
        n_equilibria = len(report.points)
        min_criterion = report.min_criterion
    except AmbiguousEquilibriumError:
        # models trained without the monotonicity penalty may not admit a
        # clean spacing sweep; the summary still reports fit quality
        n_equilibria = None
        min_criterion = None
    return model, run, {
        "mode": cfg.mode,
        "theta_mon": cfg.theta_mon,
        "theta_str": cfg.theta_str,
        "best_epoch": run.best_epoch,
        "best_val_mse": run.best_val_mse,
        "stable_checkpoint": run.stable_checkpoint,
        "stop_reason": run.stop_reason,
        "epochs_run": len(run.records),
        "test_mse": test_mse,
        "test_wmape": test_wmape,
        "n_equilibria": n_equilibria,
        "min_criterion": min_criterion,
    }


def cmd_train(settings: dict) -> int:
    out = _prepare_out_dir(settings, "train")
    labels_path = _require_file(_require(settings, "labels", "--labels"), "labels file")
    labeled = load_labels(labels_path)

    if settings["sweep"]:
        text = settings["sweep"]
        if not text.startswith("theta_str="):
            raise CliError("--sweep expects theta_str=v1,v2,...")
        try:
            values = [float(x) for x in text.split("=", 1)[1].split(",") if x.strip()]
        except ValueError as exc:
            raise CliError(f"bad --sweep value {text!r}") from exc
        if not values:
            raise CliError("--sweep needs at least one value")
        rows = []
        for theta in values:
            model, run, summary = _train_once(labeled, settings, theta_str=theta)
            tag = f"{theta:g}".replace(".", "p")
            model.save(out / f"model_theta_{tag}.json")
            rows.append((theta, summary["best_val_mse"], summary["min_criterion"]))
            print(
                f"theta_str={theta:g}: val_mse={summary['best_val_mse']:.5f} "
                f"min_criterion={summary['min_criterion']}"
            )
        with open(out / "sweep.csv", "w", encoding="utf-8") as fh:
            fh.write("theta_str,val_mse,min_criterion\n")
            for theta, mse, crit in rows:
                crit_s = "" if crit is None else f"{crit:.8g}"
                fh.write(f"{theta:g},{mse:.8g},{crit_s}\n")
        print(f"sweep results in {out / 'sweep.csv'}")
        return 0

    model, run, summary = _train_once(labeled, settings)
    model.save(out / "model.json")
    run.save_csv(out / "metrics.csv")
    with open(out / "train_summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(
        f"mode={summary['mode']} best_epoch={summary['best_epoch']} "
        f"val_mse={summary['best_val_mse']:.5f} test_wmape={summary['test_wmape']}"
    )
    print(f"model written to {out / 'model.json'}")
    return 0


def cmd_stability(settings: dict) -> int:
    out = _prepare_out_dir(settings, "stability")
    model = MlpModel.load(_require_file(_require(settings, "model", "--model"), "model checkpoint"))
    if settings["grid_step"] <= 0:
        raise CliError("--grid-step must be > 0")
    cfg = EquilibriumSearchConfig(v_step=settings["grid_step"])
    audit_states = generate_scenarios(count=settings["audit_samples"], seed=settings["seed"]).states
    report = analyze(model, cfg=cfg, audit_states=audit_states)
    report.save_csv(out / "stability.csv")
    report.save_json(out / "stability.json")
    crit = "none" if report.min_criterion is None else f"{report.min_criterion:.6f}"
    print(
        f"{len(report.points)} equilibria; locally_stable={report.locally_stable} "
        f"min_criterion={crit} string_stable={report.string_stable}"
    )
    return 0


def cmd_platoon(settings: dict) -> int:
    out = _prepare_out_dir(settings, "platoon")
    model = MlpModel.load(_require_file(_require(settings, "model", "--model"), "model checkpoint"))
    cfg = PlatoonConfig(
        n_vehicles=settings["n"],
        v_e=settings["ve"],
        horizon=settings["horizon"],
        dt=settings["dt"],
        disturb_start=settings["start"],
        disturb_rate=settings["rate"],
        phase_duration=settings["phase"],
    )
    series = platoon_simulate(model, cfg)
    series.save_csv(out / "platoon.csv")
    verdict = string_stability_verdict(series) if cfg.n_vehicles >= 3 else None
    summary = {
        "v_e": cfg.v_e,
        "s_e": series.s_e,
        "n_vehicles": cfg.n_vehicles,
        "partial": series.partial,
        "collision_step": series.collision_step,
        "collision_vehicle": series.collision_vehicle,
        "verdict": verdict,
        "max_peak_diff": float(np.max(series.peak_diffs())) if cfg.n_vehicles >= 3 else None,
        "peaks": [float(x) for x in series.peaks],
    }
    with open(out / "platoon_summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(f"verdict={verdict} partial={series.partial} s_e={series.s_e:.4f}")
    return 0


def _parse_named(values, what: str) -> dict:
    out = {}
    for item in values:
        if "=" not in item:
            raise CliError(f"bad {what} {item!r}, expected NAME=PATH")
        name, path = item.split("=", 1)
        out[name] = _require_file(path, f"{what} {name}")
    return out


def cmd_evaluate(settings: dict) -> int:
    out = _prepare_out_dir(settings, "evaluate")
    data_args = _require(settings, "data", "--data")
    schema = TrajectorySchema.from_json(
        _require_file(_require(settings, "schema", "--schema"), "schema file")
    )
    datasets = {}
    for name, path in _parse_named(data_args, "dataset").items():
        pairs = extract_pairs(
            pd.read_csv(path), schema, min_duration=settings["min_duration"], dataset=name
        )
        if not pairs:
            raise CliError(f"dataset {name!r} produced no usable pairs")
        datasets[name] = pairs

    models = {}
    for name, path in _parse_named(settings["model"] or [], "model").items():
        models[name] = MlpModel.load(path)

    idm_star = None
    if settings["idm_star"] is not None:
        with open(_require_file(settings["idm_star"], "idm-star file"), encoding="utf-8") as fh:
            idm_star = {k: float(v) for k, v in json.load(fh).items()}
    else:
        calibrated = {}
        stars = {}
        for name, pairs in datasets.items():
            params, info = calibrate_idm(
                pairs,
                pop_size=settings["calib_pop"],
                generations=settings["calib_gens"],
                seed=settings["seed"],
            )
            calibrated[name] = params
            stars[name] = info.best_rmse
            print(f"calibrated idm* on {name}: rmse={info.best_rmse:.4f}")
        idm_star = stars
        with open(out / "idm_star.json", "w", encoding="utf-8") as fh:
            json.dump(
                {
                    name: {
                        "rmse": stars[name],
                        "params": {k: getattr(calibrated[name], k) for k in ("v0", "T", "s0", "a_max", "b")},
                    }
                    for name in stars
                },
                fh,
                indent=2,
            )
            fh.write("\n")
        # the per-dataset calibrated baseline also competes on the board
        if calibrated and "idm*" not in models:
            models["idm*"] = PerDatasetModel(
                {name: IdmModel(p) for name, p in calibrated.items()}
            )

    if not models:
        raise CliError("no models to evaluate: pass --model or omit --idm-star")
    result = cross_evaluate(models, datasets, idm_star=idm_star)
    result.save_csv(out / "leaderboard.csv")
    result.save_json(out / "summary.json")
    for name in result.ranking():
        print(f"{name}: aggregate={result.aggregates[name]:.4f}")
    return 0


def cmd_gradcheck(settings: dict) -> int:
    out = None
    if settings["out_dir"] is not None:
        out = _prepare_out_dir(settings, "gradcheck")
    seed = settings["seed"]
    spec = MlpSpec(hidden=_parse_hidden(settings["hidden"]))
    model = MlpModel.init_random(spec, seed)
    rng = np.random.default_rng(seed + 1)
    n = settings["batch"]
    states = np.column_stack(
        [rng.uniform(0, 40, n), rng.uniform(0.1, 100, n), rng.uniform(-5, 5, n)]
    )
    # clamp: raw IDM explodes at tiny gaps, and a huge MSE would drown the
    # finite differences in float roundoff
    labels = clamp_accel(IdmModel(DEFAULT_IDM_PARAMS).accel_batch(states))
    speeds = np.arange(2.0, 30.0, 4.0)
    eq = np.column_stack([speeds, [IdmModel(DEFAULT_IDM_PARAMS).params.s0 + v * 1.5 for v in speeds]])
    cfg = LossConfig(theta_mon=5000.0, theta_str=0.9, delta=(0.0, 1.0, 1.0))
    report = check_param_grads(
        model, states, labels, cfg, equilibria=eq, coords=settings["coords"], seed=seed
    )
    print(
        f"checked {report.n_checked} coordinates: max_rel_err={report.max_rel_err:.3e} "
        f"passed={report.passed}"
    )
    if out is not None:
        with open(out / "gradcheck.json", "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "n_checked": report.n_checked,
                    "max_rel_err": report.max_rel_err,
                    "mean_rel_err": report.mean_rel_err,
                    "passed": report.passed,
                },
                fh,
                indent=2,
            )
            fh.write("\n")
    return 0 if report.passed else 1


_COMMANDS = {
    "generate": cmd_generate,
    "label": cmd_label,
    "train": cmd_train,
    "stability": cmd_stability,
    "platoon": cmd_platoon,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        settings = resolve_settings(args)
        return _COMMANDS[args.command](settings)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (MissingApiKeyError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
