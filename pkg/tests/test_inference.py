import numpy as np
import pytest
from scipy.stats import norm

from app import inference
from app.errors import ArgumentError, DegenerateTargetError, DegenerateVarianceError, PipelineError
from app.graph import Hypergraph
from app.inference import (
    PipelineConfig,
    baseline_pipeline,
    bh_cutoff,
    bh_ratio,
    bh_search_bound,
    bonferroni_threshold,
    conf_interval,
    debias_linear,
    debias_quadratic,
    estimate_variance,
    infer_coordinates,
    infer_linear_pipeline,
    infer_quadratic_pipeline,
    multiple_test,
    normal_quantile,
    one_sided_reject,
    oracle_variance,
    two_sided_p_value,
    upper_quantile,
)
from app.mple import MpleFit
from app.mrf import Dataset
from app.projection import ConstraintSpec, ProjectionResult
from app.utils import make_rng


def _fit(theta):
    theta = np.asarray(theta, dtype=float)
    return MpleFit(theta_tilde=theta, lambda_=0.0, iterations=0, objective=0.0,
                   kkt_residual=0.0, converged=True, n_s1=1)


def _proj(u):
    u = np.asarray(u, dtype=float)
    spec = ConstraintSpec(target=np.ones_like(u), c1=1.0, c2=1.0, c3=2.0, n=10, d=u.shape[0])
    return ProjectionResult(u_hat=u, objective=0.0, residual_inf=0.0, residual_scalar=0.0, residual_max=0.0,
                            inflations=0, iterations=0, spec=spec, used_scalar_constraint=False)


def _hand_instance():
    data = Dataset(np.array([[1.0], [-1.0]]), np.array([1.0, -1.0]))
    return data, Hypergraph(2), np.array([0, 1])


class TestDebiasLinear:
    def test_hand_instance(self):
        data, h, s2 = _hand_instance()
        assert debias_linear(np.ones(1), _fit([0.0]), _proj([1.0]), data, s2, h) == pytest.approx(1.0)

    def test_zero_direction_returns_plugin(self):
        data, h, s2 = _hand_instance()
        assert debias_linear(np.array([2.0]), _fit([0.3]), _proj([0.0]), data, s2, h) == pytest.approx(0.6)

    def test_zero_score_vertex_does_not_change_correction(self):
        data = Dataset(np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 5.0]]), np.array([1.0, -1.0, 1.0]))
        h = Hypergraph(3)
        u = _proj([1.0, 0.0])
        base = debias_linear(np.array([1.0, 0.0]), _fit([0.0, 0.0]), u, data, [0, 1], h)
        # the correction is a sum over S2; dividing by |S2| rescales, so compare the sums
        extended = debias_linear(np.array([1.0, 0.0]), _fit([0.0, 0.0]), u, data, [0, 1, 2], h)
        assert base * 2 == pytest.approx(extended * 3)

    def test_dimension_mismatch(self):
        data, h, s2 = _hand_instance()
        with pytest.raises(ArgumentError):
            debias_linear(np.ones(2), _fit([0.0]), _proj([1.0]), data, s2, h)


class TestVariance:
    def test_unit_scores(self):
        m = 8
        data = Dataset(np.ones((m, 1)), np.ones(m))
        v = estimate_variance(_proj([1.0]), _fit([0.0]), data, np.arange(m), Hypergraph(m))
        assert v == pytest.approx(1.0 / m)

    def test_scaling(self, rng):
        data = Dataset(rng.normal(size=(20, 3)), np.where(rng.random(20) < 0.5, 1.0, -1.0))
        h = Hypergraph(20)
        fit = _fit([0.2, 0.0, -0.1])
        u = rng.normal(size=3)
        a = estimate_variance(_proj(u), fit, data, np.arange(20), h)
        b = estimate_variance(_proj(3 * u), fit, data, np.arange(20), h)
        assert b == pytest.approx(9 * a)

    def test_zero_direction_is_degenerate(self):
        data, h, s2 = _hand_instance()
        with pytest.raises(DegenerateVarianceError):
            estimate_variance(_proj([0.0]), _fit([0.0]), data, s2, h)

    def test_oracle_matches_plugin_at_same_theta(self, rng):
        data = Dataset(rng.normal(size=(15, 2)), np.where(rng.random(15) < 0.5, 1.0, -1.0))
        h = Hypergraph(15, [(0, 1), (2, 3)], [0.2, 0.2])
        theta = np.array([0.4, -0.2])
        proj = _proj([1.0, 0.5])
        assert oracle_variance(proj, theta, data, np.arange(4, 15), h) == pytest.approx(
            estimate_variance(proj, _fit(theta), data, np.arange(4, 15), h)
        )


class TestQuantilesAndTests:
    def test_normal_quantile(self):
        assert normal_quantile(0.5) == 0.0
        assert upper_quantile(0.025) == pytest.approx(1.9599640, abs=1e-7)
        grid = np.linspace(1e-6, 1 - 1e-6, 101)
        np.testing.assert_allclose(norm.cdf([normal_quantile(p) for p in grid]), grid, atol=1e-9)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1])
    def test_normal_quantile_rejects(self, p):
        with pytest.raises(ArgumentError):
            normal_quantile(p)

    def test_conf_interval(self):
        lo, hi = conf_interval(0.0, 1.0, 0.05)
        assert lo == pytest.approx(-1.95996, abs=1e-5)
        assert hi == pytest.approx(1.95996, abs=1e-5)
        lo, hi = conf_interval(1.0, 0.25, 0.1)
        assert hi - lo == pytest.approx(2 * upper_quantile(0.05) * 0.5)
        lo, hi = conf_interval(1.0, 0.25, 0.999999)
        assert hi - lo == pytest.approx(0.0, abs=1e-5)

    def test_conf_interval_rejects(self):
        with pytest.raises(DegenerateVarianceError):
            conf_interval(0.0, 0.0, 0.05)
        with pytest.raises(ArgumentError):
            conf_interval(0.0, 1.0, 1.5)

    def test_statistic_and_p_value(self):
        assert inference.test_statistic(0.3, 0.3, 1.0) == 0.0
        assert two_sided_p_value(0.0) == 1.0
        t = inference.test_statistic(1.0, 0.0, 0.25)
        assert t == pytest.approx(2.0)
        assert two_sided_p_value(t) == pytest.approx(0.0455, abs=1e-4)
        assert inference.test_statistic(3.0, 0.0, 2.25) == pytest.approx(t)

    def test_one_sided(self):
        z = upper_quantile(0.05)
        assert one_sided_reject(z + 1e-9, 1.0, 0.05)
        assert not one_sided_reject(z - 1e-6, 1.0, 0.05)
        assert one_sided_reject(1.0 + z * 0.5 + 1e-9, 0.25, 0.05, null_value=1.0)


class TestQuadratic:
    def test_zero_correction(self):
        data, h, s2 = _hand_instance()
        result = debias_quadratic(np.eye(1), _fit([0.7]), _proj([0.0]), data, s2, h)
        assert result.q_hat == pytest.approx(0.49)
        assert result.variance == pytest.approx(1.0 / data.n)

    def test_truncation(self):
        data = Dataset(np.array([[1.0], [-1.0]]), np.array([-1.0, 1.0]))
        result = debias_quadratic(np.eye(1), _fit([0.1]), _proj([1.0]), data, [0, 1], Hypergraph(2))
        assert result.q_tilde < 0
        assert result.q_hat == 0.0
        assert result.ci_lo == 0.0
        assert result.ci_hi > 0.0
        assert result.variance >= 1.0 / data.n

    def test_not_spd(self):
        data, h, s2 = _hand_instance()
        with pytest.raises(ArgumentError):
            debias_quadratic(-np.eye(1), _fit([0.7]), _proj([1.0]), data, s2, h)

    def test_zero_theta(self):
        data, h, s2 = _hand_instance()
        with pytest.raises(DegenerateTargetError):
            debias_quadratic(np.eye(1), _fit([0.0]), _proj([1.0]), data, s2, h)


class TestMultipleTesting:
    def test_bonferroni(self):
        assert bonferroni_threshold(1, 0.05) == pytest.approx(1.95996, abs=1e-5)
        assert bonferroni_threshold(10, 0.05) == pytest.approx(2.80703, abs=1e-5)
        values = [bonferroni_threshold(j, 0.05) for j in range(1, 50)]
        assert np.all(np.diff(values) > 0)

    def test_bh_all_large(self):
        result = bh_cutoff(np.full(100, 10.0), 0.05)
        assert result.threshold == pytest.approx(1.95996, abs=1e-5)
        assert result.threshold < bh_search_bound(100)
        assert len(result.rejected) == 100
        assert result.fallback is None

    def test_bh_all_zero(self):
        result = bh_cutoff(np.zeros(100), 0.05)
        assert result.threshold == pytest.approx(np.sqrt(2 * np.log(100)))
        assert len(result.rejected) == 0
        assert result.fallback == "sqrt_2log"

    def test_bh_small_family_uses_bonferroni(self):
        result = bh_cutoff([3.0, 0.5], 0.05)
        assert result.threshold == pytest.approx(bonferroni_threshold(2, 0.05))
        np.testing.assert_array_equal(result.rejected, [0])
        assert result.fallback == "bonferroni"

    def test_bh_empty(self):
        with pytest.raises(ArgumentError):
            bh_cutoff([], 0.05)

    @pytest.mark.parametrize("seed", range(10))
    def test_bh_matches_dense_grid(self, seed):
        rng = make_rng(seed)
        t = np.concatenate([rng.normal(size=40), rng.normal(loc=3.5, size=10)])
        result = bh_cutoff(t, 0.1)
        np.testing.assert_array_equal(result.rejected, np.flatnonzero(np.abs(t) >= result.threshold))

        bound = bh_search_bound(len(t))
        grid = np.arange(0.0, bound, 1e-4)
        counts = np.maximum((np.abs(t)[None, :] >= grid[:, None]).sum(axis=1), 1)
        ratios = len(t) * 2.0 * norm.sf(grid) / counts
        ok = grid[ratios <= 0.1]
        if ok.size:
            assert result.fallback is None
            assert result.threshold <= ok[0] + 1e-12
            assert ok[0] - result.threshold <= 1e-4
            assert bh_ratio(result.threshold, t) <= 0.1 * (1 + 1e-9)
        else:
            assert result.fallback == "sqrt_2log"

    def test_multiple_test_dispatch(self):
        t = np.array([5.0, -4.0, 0.1, 0.2, 3.2])
        assert multiple_test(t, 0.05, "bonferroni").method == "bonferroni"
        assert multiple_test(t, 0.05, "bh").method == "bh"
        with pytest.raises(ArgumentError):
            multiple_test(t, 0.05, "holm")


class TestPipelines:
    def test_deterministic(self, make_instance):
        h, data, _, _ = make_instance(rows=12, cols=12, d=10, seed=1)
        c = np.eye(10)[1]
        a = infer_linear_pipeline(data, h, c, 0.05, rng=make_rng(3))
        b = infer_linear_pipeline(data, h, c, 0.05, rng=make_rng(3))
        assert a.estimate == b.estimate
        assert (a.ci_lo, a.ci_hi) == (b.ci_lo, b.ci_hi)

    def test_report_invariants(self, make_instance):
        h, data, _, _ = make_instance(rows=12, cols=12, d=10, seed=2)
        result = infer_linear_pipeline(data, h, np.eye(10)[1], 0.05, rng=make_rng(0))
        assert result.variance > 0
        assert result.ci_lo <= result.estimate <= result.ci_hi
        assert 0.0 <= result.p_value <= 1.0
        assert result.functional == "coordinate:1"
        report = result.to_report()
        assert set(report) >= {"functional", "estimate", "variance", "ci", "t_stat", "p_value", "projection", "fit"}
        assert set(report["projection"]["residuals"]) == {"inf", "scalar", "max"}

    def test_scaling_keeps_statistic(self, make_instance):
        h, data, _, _ = make_instance(rows=12, cols=12, d=8, seed=3)
        c = np.array([1.0, 0.5, 0, 0, 0, 0, 0, 0])
        a = infer_linear_pipeline(data, h, c, 0.05, rng=make_rng(4))
        b = infer_linear_pipeline(data, h, 2 * c, 0.05, rng=make_rng(4))
        assert b.estimate == pytest.approx(2 * a.estimate, rel=1e-5, abs=1e-8)
        assert np.sqrt(b.variance) == pytest.approx(2 * np.sqrt(a.variance), rel=1e-5)
        assert b.t_stat == pytest.approx(a.t_stat, rel=1e-5, abs=1e-8)

    def test_stage_label_on_projection_failure(self, rng):
        data = Dataset(rng.normal(size=(20, 1)), np.where(rng.random(20) < 0.5, 1.0, -1.0))
        with pytest.raises(PipelineError) as excinfo:
            infer_linear_pipeline(data, Hypergraph(20), np.ones(1), 0.05, rng=rng)
        assert excinfo.value.stage == "projection"

    def test_stage_label_on_split_failure(self, rng):
        data = Dataset(rng.normal(size=(6, 3)), np.where(rng.random(6) < 0.5, 1.0, -1.0))
        h = Hypergraph(6, [tuple(range(6))])
        with pytest.raises(PipelineError) as excinfo:
            infer_linear_pipeline(data, h, np.eye(3)[0], 0.05, rng=rng)
        assert excinfo.value.stage == "split"

    def test_infer_coordinates_shares_fit(self, make_instance):
        h, data, _, _ = make_instance(rows=12, cols=12, d=10, seed=5)
        results = infer_coordinates(data, h, [0, 1, 7], 0.05, rng=make_rng(1))
        assert [r.functional for r in results] == ["coordinate:0", "coordinate:1", "coordinate:7"]
        assert all(r.fit is results[0].fit for r in results)
        with pytest.raises(ArgumentError):
            infer_coordinates(data, h, [10], 0.05, rng=make_rng(1))

    def test_baseline(self, make_instance):
        h, data, _, _ = make_instance(rows=12, cols=12, d=10, seed=6)
        result = baseline_pipeline(data, np.eye(10)[1], 0.05, rng=make_rng(2))
        assert result.functional == "baseline"
        assert result.n_s1 + result.n_s2 == data.n

    def test_quadratic_pipeline(self, make_instance):
        h, data, _, _ = make_instance(rows=12, cols=12, d=10, seed=7)
        result = infer_quadratic_pipeline(data, h, np.eye(10), 0.05, rng=make_rng(3))
        assert result.q_hat >= 0
        assert result.ci_lo >= 0
        assert result.variance >= 1.0 / data.n

    def test_quadratic_fallback(self, make_instance):
        h, data, _, _ = make_instance(rows=12, cols=12, d=10, seed=8)
        cfg = PipelineConfig(lambda_c=100.0)
        result = infer_quadratic_pipeline(data, h, np.eye(10), 0.05, cfg, make_rng(3))
        assert result.degenerate
        assert result.q_hat == 0.0
        assert result.variance == pytest.approx(1.0 / data.n)

    def test_config_validation(self):
        with pytest.raises(ArgumentError):
            PipelineConfig(greedy_order="degree")
