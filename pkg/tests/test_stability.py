import csv
import json

import numpy as np
import pytest
from helpers import ConstantModel, LinearModel, SpeedEchoModel

from cfdistill import (
    AmbiguousEquilibriumError,
    DEFAULT_IDM_PARAMS,
    EquilibriumPoint,
    EquilibriumSearchConfig,
    MlpModel,
    MlpSpec,
    NoEquilibriumError,
    analyze,
    equilibrium_at_speed,
    find_equilibria,
    generate_scenarios,
    idm_equilibrium_spacing,
    monotonicity_audit,
)
from cfdistill.stability import local_stability_check, string_stability_criterion


class TestCriteria:
    def test_string_criterion_values(self):
        assert string_stability_criterion(-1.0, 0.5, -0.5) == pytest.approx(1.0)
        assert string_stability_criterion(-0.5, 1.0, -0.2) == pytest.approx(-1.55)
        assert string_stability_criterion(0.0, 0.0, 0.0) == 0.0

    def test_local_check(self):
        assert local_stability_check(-1.0, 0.5, -0.5)
        assert not local_stability_check(0.6, 0.5, -0.5)   # f_v + f_dv >= 0
        assert not local_stability_check(-1.0, -0.1, -0.5)  # f_s <= 0

    def test_point_properties(self):
        p = EquilibriumPoint(v_e=5.0, s_e=10.0, residual=0.0, f_v=-1.0, f_s=0.5, f_dv=-0.5)
        assert p.ss_criterion == pytest.approx(1.0)
        assert p.locally_stable


class TestSearchConfig:
    def test_default_grid(self):
        speeds = EquilibriumSearchConfig().speeds()
        assert len(speeds) == 79
        assert speeds[0] == 0.5 and speeds[-1] == 39.5

    def test_validation(self):
        with pytest.raises(ValueError, match="speed grid"):
            EquilibriumSearchConfig(v_step=0.0)
        with pytest.raises(ValueError, match="spacing"):
            EquilibriumSearchConfig(s_min=0.0)
        with pytest.raises(ValueError, match="solver"):
            EquilibriumSearchConfig(scan_points=1)


class TestIdmEquilibria:
    def test_matches_closed_form(self, idm_model):
        points = find_equilibria(idm_model)
        for v in (5.0, 10.0, 15.0, 20.0, 25.0):
            pt = next(p for p in points if p.v_e == v)
            assert abs(pt.s_e - idm_equilibrium_spacing(DEFAULT_IDM_PARAMS, v)) < 1e-3

    def test_residual_within_tolerance(self, idm_model):
        cfg = EquilibriumSearchConfig()
        for p in find_equilibria(idm_model, cfg):
            assert abs(p.residual) <= cfg.tol

    def test_skipped_where_spacing_range_ends(self, idm_model):
        # the closed form walks off the 100 m scan limit well before v0
        points, skipped = find_equilibria(idm_model, return_skipped=True)
        found = {p.v_e for p in points}
        for v in skipped:
            assert (
                v >= DEFAULT_IDM_PARAMS.v0
                or idm_equilibrium_spacing(DEFAULT_IDM_PARAMS, v) > 100.0
            )
        assert found and found.isdisjoint(skipped)

    def test_exact_mode_tightens_residual(self, idm_model):
        loose = equilibrium_at_speed(idm_model, 15.0)
        tight = equilibrium_at_speed(idm_model, 15.0, exact=True)
        assert abs(tight.residual) <= abs(loose.residual)
        assert abs(tight.s_e - idm_equilibrium_spacing(DEFAULT_IDM_PARAMS, 15.0)) < 1e-9

    def test_locally_stable_everywhere(self, idm_model):
        assert all(p.locally_stable for p in find_equilibria(idm_model))


class TestDegenerateModels:
    def test_constant_model_has_no_equilibria(self):
        points, skipped = find_equilibria(ConstantModel(0.5), return_skipped=True)
        assert points == []
        assert len(skipped) == 79

    def test_constant_model_raises_at_speed(self):
        with pytest.raises(NoEquilibriumError, match="v = 5 m/s"):
            equilibrium_at_speed(ConstantModel(0.5), 5.0)

    def test_linear_model_equilibria(self):
        # a = 0.1 (s - 20): root at 20 m for every speed. The solver tolerance
        # is on acceleration, so spacing is good to tol / slope = 1e-5.
        model = LinearModel(0.0, 0.1, 0.0, v_ref=0.0, s_ref=20.0)
        points = find_equilibria(model)
        assert len(points) == 79
        for p in points:
            assert p.s_e == pytest.approx(20.0, abs=1e-5)
            assert p.f_s == pytest.approx(0.1)
        exact = equilibrium_at_speed(model, 5.0, exact=True)
        assert exact.s_e == pytest.approx(20.0, abs=1e-9)

    def test_non_monotone_model_rejected(self):
        model = LinearModel(0.0, -0.1, 0.0)  # accel falls with spacing
        with pytest.raises(AmbiguousEquilibriumError, match="not monotone"):
            find_equilibria(model)

    def test_ambiguity_reports_speed(self):
        model = MlpModel.init_random(MlpSpec(hidden=(16, 16)), seed=2)
        with pytest.raises(AmbiguousEquilibriumError) as exc_info:
            find_equilibria(model)
        assert exc_info.value.speed == 0.5

    def test_random_net_equilibria_well_formed(self):
        model = MlpModel.init_random(MlpSpec(hidden=(16, 16)), seed=0)
        points = find_equilibria(model)
        assert len(points) == 64
        for p in points:
            assert 0.1 <= p.s_e <= 100.0
            assert np.isfinite([p.f_v, p.f_s, p.f_dv]).all()


class TestGridRefinement:
    def test_finer_grid_keeps_shared_roots(self):
        model = MlpModel.init_random(MlpSpec(hidden=(16, 16)), seed=0)
        coarse = {p.v_e: p.s_e for p in find_equilibria(model)}
        fine = {p.v_e: p.s_e for p in find_equilibria(model, EquilibriumSearchConfig(v_step=0.25))}
        assert len(fine) > len(coarse)
        for v, s in coarse.items():
            assert fine[v] == pytest.approx(s, abs=1e-6)

    def test_denser_scan_agrees(self, idm_model):
        base = equilibrium_at_speed(idm_model, 10.0)
        dense = equilibrium_at_speed(idm_model, 10.0, EquilibriumSearchConfig(scan_points=256))
        assert dense.s_e == pytest.approx(base.s_e, abs=1e-5)


class TestAudit:
    def test_idm_is_clean(self, idm_model):
        states = generate_scenarios(count=10000, seed=1).states
        audit = monotonicity_audit(idm_model, states)
        assert audit == {"v": 0.0, "s": 0.0, "dv": 0.0, "n_samples": 10000}

    def test_speed_echo_violates_v_everywhere(self):
        states = generate_scenarios(count=500, seed=2).states
        audit = monotonicity_audit(SpeedEchoModel(), states)
        assert audit["v"] == 1.0
        assert audit["s"] == 0.0 and audit["dv"] == 0.0

    def test_exact_zero_not_a_violation(self):
        audit = monotonicity_audit(ConstantModel(1.0), np.array([[5.0, 10.0, 0.0]]))
        assert audit == {"v": 0.0, "s": 0.0, "dv": 0.0, "n_samples": 1}


class TestAnalyze:
    def test_idm_report(self, idm_model):
        states = generate_scenarios(count=1000, seed=3).states
        report = analyze(idm_model, audit_states=states)
        assert report.locally_stable
        assert report.audit["n_samples"] == 1000
        assert report.min_criterion == min(p.ss_criterion for p in report.points)
        assert report.string_stable == (report.min_criterion > 0)

    def test_constant_model_report(self):
        report = analyze(ConstantModel(0.5))
        assert report.points == []
        assert report.min_criterion is None
        assert not report.locally_stable and not report.string_stable

    def test_monotone_implies_locally_stable(self):
        """Clean monotone signs at an equilibrium force local stability."""
        model = MlpModel.init_random(MlpSpec(hidden=(16, 16)), seed=0)
        for p in find_equilibria(model):
            g = model.input_grad_batch(np.array([[p.v_e, p.s_e, 0.0]]))[0]
            if g[0] < 0 and g[1] > 0 and g[2] < 0:
                assert p.locally_stable

    def test_report_files(self, idm_model, tmp_path):
        report = analyze(idm_model)
        jpath, cpath = tmp_path / "report.json", tmp_path / "report.csv"
        report.save_json(jpath)
        report.save_csv(cpath)
        payload = json.loads(jpath.read_text())
        assert payload["n_equilibria"] == len(report.points)
        assert payload["points"][0].keys() >= {"v_e", "s_e", "f_v", "f_s", "f_dv", "ss_criterion"}
        with open(cpath, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["v_e", "s_e", "f_v", "f_s", "f_dv", "ss_criterion"]
        assert len(rows) == len(report.points) + 1
