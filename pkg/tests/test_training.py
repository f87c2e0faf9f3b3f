"""Training loop tests: splits, label preparation, mode gating, bookkeeping."""
from __future__ import annotations

import numpy as np
import pytest

from cfdistill.net import MlpModel, MlpSpec
from cfdistill.teacher.labeling import LabeledScenario, TeacherResponse
from cfdistill.training import (
    MODES,
    TrainingConfig,
    TrainingDivergedError,
    fit_from_labels,
    prepare_training_labels,
    split_dataset,
    train,
)


def make_item(i, accels, flagged=False):
    votes = [TeacherResponse(accel=a, valid=True) for a in accels]
    return LabeledScenario(
        id=i, v=10.0 + i, s=20.0, dv=0.0,
        votes=votes, label=accels[0], vote_count=len(accels), flagged=flagged,
    )


class TestSplitDataset:
    def test_sizes_follow_fractions(self):
        tr, va, te = split_dataset(np.arange(10000))
        assert (len(tr), len(va), len(te)) == (8000, 1000, 1000)

    def test_partition_is_exact(self):
        items = np.arange(137)
        tr, va, te = split_dataset(items, seed=4)
        merged = np.concatenate([tr, va, te])
        assert len(merged) == 137
        assert set(merged.tolist()) == set(range(137))

    def test_remainder_goes_to_test(self):
        tr, va, te = split_dataset(np.arange(13))
        assert (len(tr), len(va), len(te)) == (10, 1, 2)

    def test_deterministic_per_seed(self):
        a = split_dataset(np.arange(50), seed=7)
        b = split_dataset(np.arange(50), seed=7)
        c = split_dataset(np.arange(50), seed=8)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert not np.array_equal(a[0], c[0])

    def test_lists_stay_lists(self):
        tr, va, te = split_dataset(list(range(20)))
        assert isinstance(tr, list) and isinstance(te, list)
        assert sorted(tr + va + te) == list(range(20))

    def test_too_few_items(self):
        with pytest.raises(ValueError, match="at least 10"):
            split_dataset(np.arange(9))

    @pytest.mark.parametrize("fractions", [(0.5, 0.2, 0.2), (0.9, 0.2, -0.1)])
    def test_bad_fractions(self, fractions):
        with pytest.raises(ValueError, match="fractions"):
            split_dataset(np.arange(20), fractions=fractions)


class TestPrepareLabels:
    def test_mode_counts(self, labeled_small):
        # 400 scenarios, 3 identical valid votes each
        states, labels = prepare_training_labels(labeled_small, "basic")
        assert states.shape == (1200, 3) and labels.shape == (1200,)
        states, labels = prepare_training_labels(labeled_small, "random")
        assert states.shape == (400, 3)
        states, labels = prepare_training_labels(labeled_small, "consist")
        assert states.shape == (400, 3)
        assert labels.tolist() == [it.label for it in labeled_small]

    def test_random_is_seeded(self):
        items = [make_item(i, [-1.0, 0.0, 1.0]) for i in range(100)]
        _, a = prepare_training_labels(items, "random", seed=0)
        _, b = prepare_training_labels(items, "random", seed=0)
        _, c = prepare_training_labels(items, "random", seed=1)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
        assert set(a.tolist()) <= {-1.0, 0.0, 1.0}

    def test_flagged_items_dropped_everywhere(self):
        items = [make_item(i, [0.5]) for i in range(5)]
        items[2].flagged = True
        for mode in MODES:
            states, _ = prepare_training_labels(items, mode)
            assert len(states) == 4

    def test_basic_skips_invalid_votes(self):
        item = make_item(0, [0.5])
        item.votes.append(TeacherResponse(accel=None, valid=False))
        item.votes.append(TeacherResponse(accel=7.0, valid=False))
        states, labels = prepare_training_labels([item], "basic")
        assert states.shape == (1, 3)
        assert labels.tolist() == [0.5]

    def test_unknown_mode(self, labeled_small):
        with pytest.raises(ValueError, match="mode must be one of"):
            prepare_training_labels(labeled_small, "bogus")

    def test_nothing_usable(self):
        items = [make_item(i, [0.5], flagged=True) for i in range(3)]
        with pytest.raises(ValueError, match="no usable labeled scenarios"):
            prepare_training_labels(items, "consist")


class TestTrainingConfig:
    def test_defaults(self):
        cfg = TrainingConfig()
        assert cfg.mode == "full"
        assert cfg.theta_mon == 5000.0
        assert cfg.theta_str == 0.9
        assert cfg.delta == (0.0, 1.0, 1.0)
        assert cfg.fractions == (0.8, 0.1, 0.1)

    @pytest.mark.parametrize(
        "overrides",
        [
            {"mode": "fancy"},
            {"theta_mon": -1.0},
            {"theta_str": -0.1},
            {"lr": 0.0},
            {"batch_size": 0},
            {"max_epochs": 0},
            {"patience": 0},
            {"refresh_period": 0},
            {"fractions": (0.5, 0.2, 0.2)},
        ],
    )
    def test_validation(self, overrides):
        with pytest.raises(ValueError):
            TrainingConfig(**overrides)

    @pytest.mark.parametrize(
        "mode,expected",
        [
            ("basic", (0.0, 0.0)),
            ("random", (0.0, 0.0)),
            ("consist", (0.0, 0.0)),
            ("mono", (5000.0, 0.0)),
            ("full", (5000.0, 0.9)),
        ],
    )
    def test_mode_gates_penalties(self, mode, expected):
        lcfg = TrainingConfig(mode=mode, delta=(0.5, 1.0, 2.0)).loss_config()
        assert (lcfg.theta_mon, lcfg.theta_str) == expected
        assert tuple(lcfg.delta) == (0.5, 1.0, 2.0)


@pytest.fixture(scope="module")
def consist_run(labeled_small):
    cfg = TrainingConfig(mode="consist", max_epochs=4, seed=0)
    return fit_from_labels(labeled_small, cfg, spec=MlpSpec(hidden=(8,)))


class TestTrainLoop:
    def test_split_shapes(self, consist_run):
        _, _, splits = consist_run
        assert splits["train"][0].shape == (320, 3)
        assert splits["val"][0].shape == (40, 3)
        assert splits["test"][0].shape == (40, 3)

    def test_consist_total_is_pure_mse(self, consist_run):
        _, run, _ = consist_run
        assert run.mode == "consist"
        assert len(run.records) == 4
        assert run.stop_reason == "max_epochs"
        for r in run.records:
            assert r.total == r.train_mse
            assert r.c_mon == 0.0 and r.c_str == 0.0
            assert r.n_equilibria == 0 and r.min_criterion is None
            assert r.str_in_use is False

    def test_best_checkpoint_bookkeeping(self, consist_run):
        _, run, _ = consist_run
        vals = [r.val_mse for r in run.records]
        assert run.best_val_mse == min(vals)
        assert run.best_epoch == vals.index(min(vals))
        assert run.stable_checkpoint is False

    def test_bitwise_reproducible(self, labeled_small, consist_run):
        model_a, run_a, _ = consist_run
        cfg = TrainingConfig(mode="consist", max_epochs=4, seed=0)
        model_b, run_b, _ = fit_from_labels(labeled_small, cfg, spec=MlpSpec(hidden=(8,)))
        assert [r.val_mse for r in run_a.records] == [r.val_mse for r in run_b.records]
        assert np.array_equal(model_a.to_flat(), model_b.to_flat())

    def test_mono_total_accounting(self, labeled_small):
        cfg = TrainingConfig(mode="mono", delta=(1.0, 1.0, 1.0), max_epochs=3, seed=0)
        _, run, _ = fit_from_labels(labeled_small, cfg, spec=MlpSpec(hidden=(8,)))
        for r in run.records:
            expect = r.train_mse + 5000.0 * r.c_mon
            assert abs(r.total - expect) <= 1e-10 * max(1.0, abs(expect))
            assert r.c_str == 0.0

    def test_full_total_accounting(self, labeled_small):
        cfg = TrainingConfig(mode="full", max_epochs=3, seed=0)
        _, run, _ = fit_from_labels(labeled_small, cfg, spec=MlpSpec(hidden=(8,)))
        for r in run.records:
            expect = r.train_mse + 5000.0 * r.c_mon + 0.9 * r.c_str
            assert abs(r.total - expect) <= 1e-10 * max(1.0, abs(expect))
            assert isinstance(r.str_in_use, bool)
        assert isinstance(run.stable_checkpoint, bool)

    def test_val_and_test_labels_are_majority_in_every_mode(self, labeled_small):
        cfg = TrainingConfig(mode="basic", max_epochs=2, seed=0)
        _, _, splits = fit_from_labels(labeled_small, cfg, spec=MlpSpec(hidden=(4,)))
        # basic blows up the train split but never the held-out ones
        assert splits["train"][0].shape == (960, 3)
        assert splits["val"][0].shape == (40, 3)
        assert splits["test"][0].shape == (40, 3)

    def test_patience_stop_on_plateau(self, sample_states):
        # labels equal to the net's own output: zero gradient, so val_mse
        # never improves after epoch 0 and patience triggers the stop
        model = MlpModel.init_random(MlpSpec(hidden=(4,)), seed=1)
        states = sample_states[:64]
        labels = model.accel_batch(states)
        cfg = TrainingConfig(mode="consist", max_epochs=50, patience=2, seed=0)
        _, run = train(model, states, labels, states[:32], labels[:32], cfg)
        assert run.stop_reason == "patience"
        assert len(run.records) == 3
        assert run.best_epoch == 0
        assert run.records[0].train_mse == 0.0
        assert run.best_val_mse == 0.0

    def test_nan_label_diverges_immediately(self):
        items = [make_item(i, [float("nan")]) for i in range(20)]
        cfg = TrainingConfig(mode="consist", max_epochs=5, seed=0)
        with pytest.raises(TrainingDivergedError, match="loss evaluation failed at epoch 0"):
            fit_from_labels(items, cfg, spec=MlpSpec(hidden=(4,)))

    def test_save_csv(self, consist_run, tmp_path):
        _, run, _ = consist_run
        path = tmp_path / "metrics.csv"
        run.save_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == (
            "epoch,train_mse,c_mon,c_str,total,val_mse,"
            "n_equilibria,min_criterion,str_in_use"
        )
        assert len(lines) == 1 + len(run.records)
        # consist never derives equilibria, so min_criterion stays blank
        assert lines[1].split(",")[7] == ""
