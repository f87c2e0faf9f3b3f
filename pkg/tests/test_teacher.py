import json

import numpy as np
import pytest

from cfdistill import CfState, DEFAULT_IDM_PARAMS, IdmModel, generate_scenarios
from cfdistill.teacher import (
    SyntheticOracle,
    build_prompt,
    label_scenarios,
    majority_vote,
    parse_acceleration,
)
from cfdistill.teacher.labeling import judge_response, load_labels, save_labels
from cfdistill.teacher.oracle import HALLUCINATION_VALUES
from cfdistill.teacher.voting import BIN_WIDTH, NoValidVotesError, vote_bin


class TestPrompts:
    def test_user_message_renders_state(self):
        bundle = build_prompt(CfState(12.5, 20.0, -1.0))
        assert "12.50 m/s" in bundle.user
        assert "20.00 m" in bundle.user
        assert "-1.00 m/s" in bundle.user

    def test_system_message_sections(self):
        bundle = build_prompt((10.0, 10.0, 0.0))
        for section in ("Background:", "Objective:", "Guidelines:", "Instructions:", "Response format:"):
            assert section in bundle.system
        assert "-5 to 5" in bundle.system

    def test_deterministic(self):
        a = build_prompt((7.25, 31.0, 2.5))
        b = build_prompt(CfState(7.25, 31.0, 2.5))
        assert a == b


class TestParsing:
    def test_final_line(self):
        assert parse_acceleration("thinking...\nFinal acceleration: 1.0 m/s^2") == 1.0

    def test_no_answer(self):
        assert parse_acceleration("I cannot decide.") is None
        assert parse_acceleration("") is None

    def test_negative_value(self):
        assert parse_acceleration("Final acceleration: -5 m/s^2") == -5.0

    def test_last_occurrence_wins(self):
        text = "Final acceleration: 2.0 m/s^2\nwait, no.\nFinal acceleration: -0.25 m/s^2"
        assert parse_acceleration(text) == -0.25

    def test_format_variants(self):
        assert parse_acceleration("final acceleration = 0.75") == 0.75
        assert parse_acceleration("FINAL ACCELERATION 1.5") == 1.5

    def test_judge_rejects_out_of_range(self):
        assert not judge_response("Final acceleration: 9.0 m/s^2").valid
        assert judge_response("Final acceleration: 4.99 m/s^2").valid
        assert not judge_response("no number here").valid


class TestVoting:
    def test_majority_beats_outlier(self):
        assert majority_vote([1.0, 1.0, 1.0, 1.0, -5.0]) == (1.0, 4)

    def test_single_vote(self):
        assert majority_vote([0.5]) == (0.5, 1)

    def test_symmetric_deadlock_falls_back_to_median(self):
        label, count = majority_vote([2.0, 2.0, -2.0, -2.0, 0.0])
        assert (label, count) == (0.0, 1)

    def test_near_answers_share_a_bin(self):
        label, count = majority_vote([1.01, 1.04, -3.0])
        assert count == 2
        assert label == pytest.approx(1.025)

    def test_tie_prefers_median_side_then_magnitude(self):
        # two singleton bins equidistant from the median: smaller |a| wins
        assert majority_vote([1.0, 2.0]) == (1.0, 1)

    def test_empty_votes(self):
        with pytest.raises(NoValidVotesError):
            majority_vote([])

    def test_bin_indexing(self):
        assert vote_bin(0.0) == 0
        assert vote_bin(0.04) == 0
        assert vote_bin(0.05) == 1  # edges sit at odd multiples of 0.05
        assert vote_bin(-0.06) == -1
        assert vote_bin(1.0, width=BIN_WIDTH) == 10


class TestOracle:
    def test_noiseless_is_clamped_idm(self, sample_states):
        oracle = SyntheticOracle()
        got = np.array([oracle.accel(st) for st in sample_states])
        want = np.clip(IdmModel(DEFAULT_IDM_PARAMS).accel_batch(sample_states), -5.0, 5.0)
        np.testing.assert_array_equal(got, want)

    def test_noiseless_ignores_seed(self, sample_states):
        a = SyntheticOracle(seed=0)
        b = SyntheticOracle(seed=99)
        for st in sample_states[:50]:
            assert a.accel(st) == b.accel(st)

    def test_always_hallucinating_draws_from_menu(self, sample_states):
        oracle = SyntheticOracle(hallucination_prob=1.0, seed=5)
        outs = {oracle.accel(st) for st in sample_states[:200]}
        assert outs <= set(HALLUCINATION_VALUES)
        assert len(outs) == 4

    def test_noise_magnitude(self):
        states = generate_scenarios(count=10000, seed=21).states
        base = SyntheticOracle()
        noisy = SyntheticOracle(noise_std=0.1, seed=9)
        base_vals = np.array([base.accel(st) for st in states])
        noisy_vals = np.array([noisy.accel(st) for st in states])
        interior = np.abs(base_vals) < 3.0  # keep clear of the clamp
        assert interior.sum() > 5000
        std = (noisy_vals[interior] - base_vals[interior]).std()
        assert 0.09 < std < 0.11

    def test_replies_parse_back(self, sample_states):
        oracle = SyntheticOracle()
        for st in sample_states[:20]:
            texts = oracle.generate(st, 3)
            assert len(texts) == 3
            want = float(f"{oracle.accel(st):.2f}")
            for t in texts:
                assert parse_acceleration(t) == want

    def test_validation(self):
        with pytest.raises(ValueError, match="noise_std"):
            SyntheticOracle(noise_std=-0.1)
        with pytest.raises(ValueError, match="hallucination_prob"):
            SyntheticOracle(hallucination_prob=1.5)


class TestLabeling:
    def test_counts_and_order(self, labeled_small):
        assert len(labeled_small) == 400
        assert [item.id for item in labeled_small] == list(range(400))
        assert all(len(item.votes) == 3 for item in labeled_small)

    def test_labels_within_plausible_range(self, labeled_small):
        for item in labeled_small:
            assert not item.flagged
            assert -5.0 <= item.label <= 5.0

    def test_revote_reproduces_label(self, labeled_small):
        for item in labeled_small:
            valid = [r.accel for r in item.votes if r.valid]
            assert majority_vote(valid) == (item.label, item.vote_count)

    def test_single_vote_equals_oracle_reply(self):
        scen = generate_scenarios(count=30, seed=12)
        oracle = SyntheticOracle()
        labeled = label_scenarios(scen.states, oracle, k=1)
        for st, item in zip(scen.states, labeled):
            assert item.label == float(f"{oracle.accel(st):.2f}")
            assert item.vote_count == 1

    def test_noiseless_labeling_is_idempotent(self):
        scen = generate_scenarios(count=50, seed=13)
        one = label_scenarios(scen.states, SyntheticOracle(seed=1), k=3)
        two = label_scenarios(scen.states, SyntheticOracle(seed=2), k=3)
        assert [i.label for i in one] == [i.label for i in two]

    def test_worker_count_does_not_change_output(self):
        scen = generate_scenarios(count=40, seed=14)
        serial = label_scenarios(scen.states, SyntheticOracle(), k=2, max_workers=1)
        threaded = label_scenarios(scen.states, SyntheticOracle(), k=2, max_workers=4)
        assert [i.label for i in serial] == [i.label for i in threaded]
        assert [i.id for i in threaded] == list(range(40))

    def test_teacher_exception_flags_scenario(self):
        class Flaky:
            def __init__(self):
                self.calls = 0

            def generate(self, state, k):
                self.calls += 1
                if self.calls == 2:
                    raise RuntimeError("boom")
                return [f"Final acceleration: 0.00 m/s^2"] * k

        labeled = label_scenarios(np.array([[5.0, 10.0, 0.0]] * 3), Flaky(), k=2)
        assert [i.flagged for i in labeled] == [False, True, False]
        assert "boom" in labeled[1].error
        assert labeled[1].label is None

    def test_unparseable_votes_flag_scenario(self):
        class Mute:
            def generate(self, state, k):
                return ["hmm"] * k

        labeled = label_scenarios(np.array([[5.0, 10.0, 0.0]]), Mute(), k=3)
        assert labeled[0].flagged and labeled[0].label is None
        assert len(labeled[0].votes) == 3

    def test_argument_validation(self):
        with pytest.raises(ValueError, match=">= 1"):
            label_scenarios(np.zeros((1, 3)) + (1, 2, 0), SyntheticOracle(), k=0)


class TestPersistence:
    def test_roundtrip(self, labeled_small, tmp_path):
        labels_path = tmp_path / "labels.jsonl"
        responses_path = tmp_path / "responses.jsonl"
        save_labels(labeled_small, labels_path, responses_path)

        raw_lines = responses_path.read_text().splitlines()
        assert len(raw_lines) == 400 * 3

        back = load_labels(labels_path)
        assert len(back) == len(labeled_small)
        for orig, loaded in zip(labeled_small, back):
            assert loaded.id == orig.id
            assert loaded.label == orig.label
            assert loaded.vote_count == orig.vote_count
            assert [r.accel for r in loaded.votes] == [r.accel for r in orig.votes]

    def test_rows_reference_raw_responses(self, labeled_small, tmp_path):
        labels_path = tmp_path / "labels.jsonl"
        save_labels(labeled_small[:2], labels_path, tmp_path / "responses.jsonl")
        row = json.loads(labels_path.read_text().splitlines()[0])
        assert row["raw_refs"] == ["responses.jsonl:0:0", "responses.jsonl:0:1", "responses.jsonl:0:2"]

    def test_labels_only_file_has_no_refs(self, labeled_small, tmp_path):
        labels_path = tmp_path / "labels.jsonl"
        save_labels(labeled_small[:1], labels_path)
        row = json.loads(labels_path.read_text().splitlines()[0])
        assert "raw_refs" not in row
