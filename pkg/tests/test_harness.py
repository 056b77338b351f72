import json

import numpy as np
import pytest

from gtdsaddle.exceptions import SpecValidationError
from gtdsaddle.harness import (
    BLOCK_SIZE,
    AggregateCurve,
    ExperimentSpec,
    _Welford,
    run_experiment,
    stepsize_sweep,
)


def small_spec(**kw):
    doc = {
        "domain": "chain50",
        "variants": [{"variant": "gtd2", "alpha": 0.003}, {"variant": "gtd2-mp", "alpha": 0.003}],
        "n_steps": 200,
        "n_runs": 4,
        "master_seed": 7,
        "metrics": ["mspbe", "err"],
        "record_every": 50,
        "bounds": False,
    }
    doc.update(kw)
    return doc


class TestSpec:
    def test_collects_every_problem(self):
        with pytest.raises(SpecValidationError) as info:
            ExperimentSpec.from_dict({"domain": "nope", "variants": [{"variant": "td"}], "n_steps": 0,
                                      "n_runs": "x", "metrics": ["bogus"], "extra": 1})
        text = str(info.value)
        for fragment in ("domain", "variant", "n_steps", "n_runs", "bogus", "extra"):
            assert fragment in text

    def test_constant_step_needs_alpha(self):
        with pytest.raises(SpecValidationError):
            ExperimentSpec.from_dict(small_spec(variants=[{"variant": "gtd2"}]))

    def test_robust_step_defaults_c(self):
        spec = ExperimentSpec.from_dict(small_spec(variants=[{"variant": "gtd2-proj", "step": "robust"}]))
        assert spec.variants[0]["label"] == "gtd2-proj"

    def test_duplicate_labels_are_disambiguated(self):
        spec = ExperimentSpec.from_dict(small_spec(variants=[{"variant": "gtd2", "alpha": 0.1},
                                                             {"variant": "gtd2", "alpha": 0.2}]))
        assert [v["label"] for v in spec.variants] == ["gtd2", "gtd2-1"]

    def test_domain_object_form(self):
        spec = ExperimentSpec.from_dict(small_spec(domain={"name": "baird", "overrides": {"gamma": 0.9}}))
        assert spec.domain == "baird" and spec.domain_overrides == {"gamma": 0.9}

    def test_rho_bias_validation(self):
        with pytest.raises(SpecValidationError):
            ExperimentSpec.from_dict(small_spec(rho_bias={"epsilon": -1}))
        with pytest.raises(SpecValidationError):
            ExperimentSpec.from_dict(small_spec(rho_bias={"epsilon": 0.1, "mode": "noise"}))

    def test_default_stride(self):
        spec = ExperimentSpec.from_dict(small_spec(record_every=None, n_steps=1000))
        assert spec.stride == 10

    def test_bad_json_file(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text("{not json")
        with pytest.raises(SpecValidationError):
            ExperimentSpec.from_json(p)


class TestWelford:
    def test_matches_numpy(self, rng):
        data = rng.normal(size=(37, 5))
        acc = _Welford(5)
        for row in data:
            acc.push(row)
        curve = acc.curve(np.arange(5))
        np.testing.assert_allclose(curve.mean, data.mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(curve.std, data.std(axis=0), atol=1e-12)
        np.testing.assert_array_equal(curve.count, 37)

    def test_skips_non_finite(self):
        acc = _Welford(2)
        for row in ([1.0, np.nan], [3.0, np.inf], [5.0, 2.0]):
            acc.push(np.array(row))
        curve = acc.curve([0, 1])
        np.testing.assert_allclose(curve.mean, [3.0, 2.0])
        np.testing.assert_array_equal(curve.count, [3, 1])

    def test_empty_column_is_nan(self):
        acc = _Welford(1)
        acc.push(np.array([np.nan]))
        assert np.isnan(acc.curve([0]).mean[0])

    def test_curve_csv(self):
        c = AggregateCurve(np.array([0, 10]), np.array([1.0, 0.5]), np.array([0.0, 0.1]), np.array([2, 2]))
        assert c.to_csv().splitlines() == ["iteration,mean,std,count", "0,1.0,0.0,2", "10,0.5,0.1,2"]


class TestRunExperiment:
    def test_outputs_written(self, tmp_path):
        res = run_experiment(small_spec(outputs=str(tmp_path)))
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["gtd2-mp__err.csv", "gtd2-mp__mspbe.csv", "gtd2__err.csv", "gtd2__mspbe.csv",
                         "summary.json"]
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["config"]["n_runs"] == 4
        assert summary["variants"]["gtd2"]["diverged"] == 0
        np.testing.assert_array_equal(res.iterations, [0, 50, 100, 150, 200])

    def test_curves_aggregate_raw_runs(self):
        res = run_experiment(small_spec(), write=False)
        raw = res.raw["gtd2"]["mspbe"]
        np.testing.assert_allclose(res.curves["gtd2"]["mspbe"].mean, raw.mean(axis=1), rtol=1e-12)
        np.testing.assert_allclose(res.curves["gtd2"]["mspbe"].std, raw.std(axis=1), rtol=1e-9, atol=1e-15)

    def test_paired_data_across_variants(self):
        spec = small_spec(variants=[{"variant": "gtd2", "alpha": 0.003, "label": "a"},
                                    {"variant": "gtd2", "alpha": 0.003, "label": "b"}])
        res = run_experiment(spec, write=False)
        np.testing.assert_array_equal(res.raw["a"]["mspbe"], res.raw["b"]["mspbe"])

    def test_runs_independent_of_run_count(self):
        few = run_experiment(small_spec(n_runs=3), write=False)
        many = run_experiment(small_spec(n_runs=BLOCK_SIZE + 3), write=False)
        np.testing.assert_array_equal(few.raw["gtd2"]["mspbe"], many.raw["gtd2"]["mspbe"][:, :3])

    def test_seed_changes_data(self):
        a = run_experiment(small_spec(master_seed=1), write=False)
        b = run_experiment(small_spec(master_seed=2), write=False)
        assert not np.array_equal(a.raw["gtd2"]["mspbe"], b.raw["gtd2"]["mspbe"])

    def test_bounds_section(self):
        res = run_experiment(small_spec(bounds=True), write=False)
        bounds = res.summary["variants"]["gtd2"]["bounds"]
        assert bounds["theorem1"]["holds"]
        assert bounds["lmi"]["holds"]
        assert "coverage" in bounds["prop4"]
        assert bounds["prop3"]["value"] > 0

    def test_divergence_serializes_as_null(self, tmp_path):
        spec = small_spec(domain="baird", variants=[{"variant": "gtd", "alpha": 2.0}], n_steps=400,
                          outputs=str(tmp_path))
        res = run_experiment(spec)
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["variants"]["gtd"]["diverged"] == 4
        assert summary["variants"]["gtd"]["terminal"]["mspbe"]["median"] is None
        assert res.curves["gtd"]["mspbe"].count[-1] == 0

    def test_robust_step_uses_m_star(self):
        spec = small_spec(variants=[{"variant": "gtd2-proj", "step": "robust", "c": 2.0}])
        res = run_experiment(spec, write=False)
        entry = res.summary["variants"]["gtd2-proj"]
        m = entry["step_policy"]["m_star"]
        assert entry["alpha"] == pytest.approx(4.0 / (m * np.sqrt(5 * 200)))

    def test_biased_weights_reported(self):
        spec = small_spec(domain="baird", variants=[{"variant": "gtd2", "alpha": 0.005}],
                          rho_bias={"epsilon": 0.1}, bounds=True)
        res = run_experiment(spec, write=False)
        assert res.summary["variants"]["gtd2"]["bounds"]["prop6"]["inputs"]["epsilon"] == 0.1


class TestSweep:
    def test_reports_per_alpha_and_worst(self, tmp_path):
        out = stepsize_sweep(small_spec(outputs=str(tmp_path), n_runs=2), [0.001, 0.003])
        assert set(out["per_alpha"]) == {0.001, 0.003}
        worst = out["worst"]["gtd2"]
        assert worst == max(out["per_alpha"][a]["gtd2"]["median"] for a in (0.001, 0.003))
        assert (tmp_path / "sweep_summary.json").exists()
        assert (tmp_path / "alpha_0.001" / "summary.json").exists()

    def test_divergence_counts_as_inf(self):
        spec = small_spec(domain="baird", variants=[{"variant": "gtd", "alpha": 0.01}], n_steps=400, n_runs=2)
        out = stepsize_sweep(spec, [2.0], write=False)
        assert out["worst"]["gtd"] == np.inf
        assert out["summary"]["worst_median"]["gtd"] is None

    def test_rejects_empty_and_negative(self):
        with pytest.raises(SpecValidationError):
            stepsize_sweep(small_spec(), [])
        with pytest.raises(SpecValidationError):
            stepsize_sweep(small_spec(), [-0.1])
