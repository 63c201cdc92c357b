"""
Debiased inference for linear and quadratic functionals of theta.

This module handles:
- Bias correction of c^T theta_tilde with the projection direction u_hat
- Variance estimation, normal confidence intervals and test statistics
- Quadratic functionals theta^T M theta with truncation at zero
- Bonferroni and BH-type multiple testing over a coordinate set
- End-to-end pipelines (independent set -> split -> fit -> projection -> debias)

Quantiles follow the upper-tail convention z_q = Phi^{-1}(1 - q) throughout.
"""

import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy.stats import norm

from app import config
from app.errors import (
    ArgumentError,
    DegenerateTargetError,
    DegenerateVarianceError,
    PipelineError,
)
from app.graph import (
    Hypergraph,
    VertexSplit,
    greedy_strong_independent_set,
    random_order,
    split_independent_set,
)
from app.mple import MpleFit, MpleOptions, fit_mple, lambda_default
from app.mrf import Dataset, cholesky_lower, f_sigmoid
from app.projection import (
    ProjectionResult,
    build_constraint_spec,
    fitted_predictor,
    solve_projection,
    weighted_gram,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    """Tuning shared by every pipeline run."""
    lambda_c: float = config.LAMBDA_C
    qp_consts: tuple[float, float, float] = (config.QP_C1, config.QP_C2, config.QP_C3)
    max_inflations: int = config.QP_MAX_INFLATIONS
    mple: MpleOptions = field(default_factory=MpleOptions)
    greedy_order: str = "ascending"
    null_value: float = 0.0

    def __post_init__(self):
        if self.greedy_order not in ("ascending", "random"):
            raise ArgumentError(f"greedy_order must be 'ascending' or 'random', got '{self.greedy_order}'")
        if self.lambda_c <= 0:
            raise ArgumentError(f"lambda_c must be positive, got {self.lambda_c}")


@dataclass(frozen=True)
class LinearInference:
    """Debiased estimate of c^T theta with interval, test and sub-diagnostics."""
    c: np.ndarray
    estimate: float
    variance: float
    ci_lo: float
    ci_hi: float
    alpha: float
    t_stat: float
    p_value: float
    null_value: float
    reject_one_sided: bool
    functional: str
    fit: MpleFit
    projection: ProjectionResult
    n_s1: int
    n_s2: int
    split: Optional[VertexSplit] = field(default=None, repr=False)

    @property
    def length(self) -> float:
        return self.ci_hi - self.ci_lo

    def covers(self, value: float) -> bool:
        return self.ci_lo <= value <= self.ci_hi

    def to_report(self) -> dict:
        return {
            "functional": self.functional,
            "estimate": self.estimate,
            "variance": self.variance,
            "ci": [self.ci_lo, self.ci_hi],
            "alpha": self.alpha,
            "t_stat": self.t_stat,
            "p_value": self.p_value,
            "null_value": self.null_value,
            "projection": {
                "inflations": self.projection.inflations,
                "residuals": self.projection.residuals,
                "ridge": self.projection.ridge,
            },
            "fit": {
                "lambda": self.fit.lambda_,
                "kkt_residual": self.fit.kkt_residual,
                "iterations": self.fit.iterations,
                "converged": self.fit.converged,
            },
            "split": {"s1": self.n_s1, "s2": self.n_s2},
        }


@dataclass(frozen=True)
class QuadraticInference:
    """Truncated estimate of theta^T M theta with its interval."""
    m_matrix: np.ndarray
    q_tilde: float
    q_hat: float
    variance: float
    ci_lo: float
    ci_hi: float
    alpha: float
    degenerate: bool = False
    fit: Optional[MpleFit] = None
    projection: Optional[ProjectionResult] = None

    @property
    def length(self) -> float:
        return self.ci_hi - self.ci_lo

    def covers(self, value: float) -> bool:
        return self.ci_lo <= value <= self.ci_hi

    def to_report(self) -> dict:
        report = {
            "functional": "quadratic",
            "q_tilde": self.q_tilde,
            "estimate": self.q_hat,
            "variance": self.variance,
            "ci": [self.ci_lo, self.ci_hi],
            "alpha": self.alpha,
            "degenerate": self.degenerate,
        }
        if self.projection is not None:
            report["projection"] = {
                "inflations": self.projection.inflations,
                "residuals": self.projection.residuals,
            }
        if self.fit is not None:
            report["fit"] = {"lambda": self.fit.lambda_, "kkt_residual": self.fit.kkt_residual}
        return report


@dataclass(frozen=True)
class MultipleTestResult:
    """Cutoff on |T_j| and the rejected positions."""
    method: str
    threshold: float
    rejected: np.ndarray
    alpha: float
    fallback: Optional[str] = None


# =============================================================================
# Quantiles, intervals, tests
# =============================================================================

def _check_alpha(alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise ArgumentError(f"alpha must lie in (0, 1), got {alpha}")
    return float(alpha)


def normal_quantile(p: float) -> float:
    """Phi^{-1}(p)."""
    if not 0.0 < p < 1.0:
        raise ArgumentError(f"Quantile level must lie in (0, 1), got {p}")
    return float(norm.ppf(p))


def upper_quantile(q: float) -> float:
    """z_q = Phi^{-1}(1 - q), evaluated through the survival function."""
    if not 0.0 < q < 1.0:
        raise ArgumentError(f"Quantile level must lie in (0, 1), got {q}")
    return float(norm.isf(q))


def conf_interval(estimate: float, variance: float, alpha: float) -> tuple[float, float]:
    """[estimate -+ z_{alpha/2} sqrt(variance)]."""
    if not variance > 0:
        raise DegenerateVarianceError(f"Variance must be positive, got {variance}")
    half = upper_quantile(_check_alpha(alpha) / 2.0) * float(np.sqrt(variance))
    return estimate - half, estimate + half


def test_statistic(estimate: float, null_value: float, variance: float) -> float:
    """T = (estimate - c_star) / sqrt(variance)."""
    if not variance > 0:
        raise DegenerateVarianceError(f"Variance must be positive, got {variance}")
    return (estimate - null_value) / float(np.sqrt(variance))


def two_sided_p_value(t_stat: float) -> float:
    return float(min(1.0, 2.0 * norm.sf(abs(t_stat))))


def one_sided_reject(estimate: float, variance: float, alpha: float, null_value: float = 0.0) -> bool:
    """Reject H0: c^T theta <= c_star when estimate - c_star >= z_alpha sqrt(variance)."""
    if not variance > 0:
        raise DegenerateVarianceError(f"Variance must be positive, got {variance}")
    return estimate - null_value >= upper_quantile(_check_alpha(alpha)) * float(np.sqrt(variance))


# =============================================================================
# Bias correction and variance
# =============================================================================

def _check_functional(c: np.ndarray, d: int) -> np.ndarray:
    c = np.asarray(c, dtype=float).reshape(-1)
    if c.shape[0] != d:
        raise ArgumentError(f"Functional has length {c.shape[0]}, data has d={d}")
    return c


def _scores(proj: ProjectionResult, data: Dataset, s2: np.ndarray) -> np.ndarray:
    u = np.asarray(proj.u_hat, dtype=float)
    if u.shape[0] != data.d:
        raise ArgumentError(f"Projection direction has length {u.shape[0]}, data has d={data.d}")
    return data.x[s2] @ u


def _correction(fit_theta: np.ndarray, proj: ProjectionResult, data: Dataset, s2: Sequence[int], h: Hypergraph) -> float:
    """(1/|S2|) sum (ybar_i - f(v_i)) u^T X_i, without the leading factor."""
    s2 = np.asarray(s2, dtype=np.int64).reshape(-1)
    v = fitted_predictor(data, s2, fit_theta, h)
    resid = data.y_bar[s2] - f_sigmoid(v)
    return float(resid @ _scores(proj, data, s2)) / s2.shape[0]


def debias_linear(
    c: np.ndarray,
    fit: MpleFit,
    proj: ProjectionResult,
    data: Dataset,
    s2: Sequence[int],
    h: Hypergraph,
) -> float:
    """c^T theta_tilde + (2/|S2|) sum_{i in S2} (ybar_i - f(v_i)) u_hat^T X_i."""
    c = _check_functional(c, data.d)
    return float(c @ fit.theta_tilde) + 2.0 * _correction(fit.theta_tilde, proj, data, s2, h)


def _variance(u_proj: ProjectionResult, theta: np.ndarray, data: Dataset, s2: Sequence[int], h: Hypergraph) -> float:
    s2 = np.asarray(s2, dtype=np.int64).reshape(-1)
    p = f_sigmoid(fitted_predictor(data, s2, theta, h))
    scores = _scores(u_proj, data, s2)
    return float(np.sum(4.0 * p * (1.0 - p) * scores ** 2)) / s2.shape[0] ** 2


def estimate_variance(
    proj: ProjectionResult,
    fit: MpleFit,
    data: Dataset,
    s2: Sequence[int],
    h: Hypergraph,
) -> float:
    """V_hat = (1/|S2|^2) sum 4 f(v_i)(1 - f(v_i)) (u_hat^T X_i)^2."""
    variance = _variance(proj, fit.theta_tilde, data, s2, h)
    if variance <= 0:
        raise DegenerateVarianceError("Estimated variance is zero (u_hat^T X_i = 0 on S2)")
    return variance


def oracle_variance(
    proj: ProjectionResult,
    theta: np.ndarray,
    data: Dataset,
    s2: Sequence[int],
    h: Hypergraph,
) -> float:
    """Same form as V_hat with the true theta; only available in simulation."""
    theta = _check_functional(theta, data.d)
    return _variance(proj, theta, data, s2, h)


def _check_spd(m_matrix: np.ndarray, d: int) -> np.ndarray:
    m_matrix = np.asarray(m_matrix, dtype=float)
    if m_matrix.shape != (d, d):
        raise ArgumentError(f"M must be {d}x{d}, got {m_matrix.shape}")
    if not np.allclose(m_matrix, m_matrix.T):
        raise ArgumentError("M must be symmetric")
    cholesky_lower(m_matrix)
    return m_matrix


def debias_quadratic(
    m_matrix: np.ndarray,
    fit: MpleFit,
    proj_m: ProjectionResult,
    data: Dataset,
    s2: Sequence[int],
    h: Hypergraph,
    alpha: float = config.ALPHA,
) -> QuadraticInference:
    """
    Q_tilde = theta_tilde^T M theta_tilde + (4/|S2|) sum (ybar_i - f(v_i)) u_M^T X_i,
    Q_hat = max(Q_tilde, 0), V_M = (16/|S2|^2) sum f(1 - f) (u_M^T X_i)^2 + 1/n.

    Raises:
        ArgumentError: M not symmetric positive definite
        DegenerateTargetError: theta_tilde = 0 (target M theta_tilde vanishes)
    """
    m_matrix = _check_spd(m_matrix, data.d)
    theta = fit.theta_tilde
    if not np.any(m_matrix @ theta):
        raise DegenerateTargetError("theta_tilde = 0 gives a zero quadratic target")

    q_tilde = float(theta @ m_matrix @ theta) + 4.0 * _correction(theta, proj_m, data, s2, h)
    q_hat = max(q_tilde, 0.0)
    # (16/|S2|^2) sum f(1-f) s^2 is four times the linear variance form
    variance = 4.0 * _variance(proj_m, theta, data, s2, h) + 1.0 / data.n
    lo, hi = conf_interval(q_hat, variance, alpha)
    return QuadraticInference(
        m_matrix=m_matrix,
        q_tilde=q_tilde,
        q_hat=q_hat,
        variance=variance,
        ci_lo=max(lo, 0.0),
        ci_hi=hi,
        alpha=alpha,
        fit=fit,
        projection=proj_m,
    )


def quadratic_fallback(m_matrix: np.ndarray, fit: Optional[MpleFit], n: int, alpha: float) -> QuadraticInference:
    """Report for theta_tilde = 0: Q_hat = 0 with the floor variance 1/n."""
    variance = 1.0 / n
    _, hi = conf_interval(0.0, variance, alpha)
    return QuadraticInference(
        m_matrix=np.asarray(m_matrix, dtype=float),
        q_tilde=0.0,
        q_hat=0.0,
        variance=variance,
        ci_lo=0.0,
        ci_hi=hi,
        alpha=alpha,
        degenerate=True,
        fit=fit,
    )


# =============================================================================
# Multiple testing
# =============================================================================

def bonferroni_threshold(j_count: int, alpha: float) -> float:
    """z_{alpha / (2 |J|)}."""
    if j_count < 1:
        raise ArgumentError(f"Need at least one hypothesis, got {j_count}")
    return upper_quantile(_check_alpha(alpha) / (2.0 * j_count))


def bh_search_bound(j_count: int) -> float:
    """Upper end sqrt(2 log |J| - 2 log log |J|) of the cutoff search range (|J| >= 3)."""
    log_j = np.log(j_count)
    return float(np.sqrt(2.0 * log_j - 2.0 * np.log(log_j)))


def bh_ratio(kappa: float, t_stats: np.ndarray) -> float:
    """|J| (2 - 2 Phi(kappa)) / max(#{j : |T_j| >= kappa}, 1)."""
    abs_t = np.abs(np.asarray(t_stats, dtype=float))
    count = max(int(np.count_nonzero(abs_t >= kappa)), 1)
    return abs_t.shape[0] * 2.0 * float(norm.sf(kappa)) / count


def bh_cutoff(t_stats: Sequence[float], alpha: float) -> MultipleTestResult:
    """
    Smallest kappa in [0, sqrt(2 log|J| - 2 log log|J|)] with bh_ratio(kappa) <= alpha.

    Between consecutive sorted |T_j| the rejection count is constant, so on
    each such interval (lo, hi] the condition reduces to kappa >= z_{alpha c / (2|J|)}
    with c = #{|T_j| >= hi}; the first interval where that quantile is
    <= hi yields the cutoff. Falls back to sqrt(2 log |J|) when no kappa in
    range qualifies, and to Bonferroni when |J| < 3.
    """
    abs_t = np.abs(np.asarray(t_stats, dtype=float).reshape(-1))
    j_count = abs_t.shape[0]
    if j_count == 0:
        raise ArgumentError("bh_cutoff needs at least one test statistic")
    alpha = _check_alpha(alpha)

    if j_count < 3:
        threshold = bonferroni_threshold(j_count, alpha)
        return MultipleTestResult("bh", threshold, np.flatnonzero(abs_t >= threshold), alpha, fallback="bonferroni")

    bound = bh_search_bound(j_count)
    inner = np.unique(abs_t[(abs_t > 0) & (abs_t < bound)])
    points = np.concatenate(([0.0], inner, [bound]))

    threshold: Optional[float] = None
    for lo, hi in zip(points[:-1], points[1:]):
        count = max(int(np.count_nonzero(abs_t >= hi)), 1)
        kappa = upper_quantile(alpha * count / (2.0 * j_count))
        if kappa <= hi:
            threshold = max(kappa, float(lo))
            break

    fallback = None
    if threshold is None:
        threshold = float(np.sqrt(2.0 * np.log(j_count)))
        fallback = "sqrt_2log"
    return MultipleTestResult("bh", threshold, np.flatnonzero(abs_t >= threshold), alpha, fallback=fallback)


def multiple_test(t_stats: Sequence[float], alpha: float, method: str = "bh") -> MultipleTestResult:
    """Reject {j : |T_j| >= threshold} with a Bonferroni or BH-type cutoff."""
    abs_t = np.abs(np.asarray(t_stats, dtype=float).reshape(-1))
    if method == "bh":
        return bh_cutoff(abs_t, alpha)
    if method == "bonferroni":
        threshold = bonferroni_threshold(abs_t.shape[0], alpha)
        return MultipleTestResult("bonferroni", threshold, np.flatnonzero(abs_t >= threshold), alpha)
    raise ArgumentError(f"Unknown multiple testing method '{method}'")


# =============================================================================
# Pipelines
# =============================================================================

@contextmanager
def _stage(name: str) -> Iterator[None]:
    """Re-raise any failure inside the block as PipelineError(name)."""
    try:
        yield
    except PipelineError:
        raise
    except Exception as e:
        raise PipelineError(name, e) from e


def _prepare(data: Dataset, h: Hypergraph, cfg: PipelineConfig, rng: np.random.Generator) -> tuple[VertexSplit, MpleFit]:
    with _stage("independent_set"):
        order = random_order(h.n, rng) if cfg.greedy_order == "random" else None
        s = greedy_strong_independent_set(h, order)
    with _stage("split"):
        split = split_independent_set(s, rng)
    return split, _fit(data, h, split, cfg)


def _fit(data: Dataset, h: Hypergraph, split: VertexSplit, cfg: PipelineConfig) -> MpleFit:
    with _stage("fit"):
        lam = lambda_default(data.n, data.d, cfg.lambda_c)
        return fit_mple(data, h, split.s1, lam, cfg.mple)


def _linear_from_fit(
    c: np.ndarray,
    functional: str,
    data: Dataset,
    h: Hypergraph,
    split: VertexSplit,
    fit: MpleFit,
    alpha: float,
    cfg: PipelineConfig,
    gram: Optional[np.ndarray] = None,
) -> LinearInference:
    with _stage("projection"):
        c = _check_functional(c, data.d)
        spec = build_constraint_spec(c, data.n, data.d, cfg.qp_consts)
        proj = solve_projection(spec, data, split.s2, fit.theta_tilde, h, cfg.max_inflations, gram=gram)
    with _stage("debias"):
        estimate = debias_linear(c, fit, proj, data, split.s2, h)
    with _stage("variance"):
        variance = estimate_variance(proj, fit, data, split.s2, h)
        lo, hi = conf_interval(estimate, variance, alpha)
        t_stat = test_statistic(estimate, cfg.null_value, variance)

    return LinearInference(
        c=c,
        estimate=estimate,
        variance=variance,
        ci_lo=lo,
        ci_hi=hi,
        alpha=alpha,
        t_stat=t_stat,
        p_value=two_sided_p_value(t_stat),
        null_value=cfg.null_value,
        reject_one_sided=one_sided_reject(estimate, variance, alpha, cfg.null_value),
        functional=functional,
        fit=fit,
        projection=proj,
        n_s1=len(split.s1),
        n_s2=len(split.s2),
        split=split,
    )


def _describe(c: np.ndarray) -> str:
    nz = np.flatnonzero(c)
    if nz.shape[0] == 1 and c[nz[0]] == 1.0:
        return f"coordinate:{int(nz[0])}"
    return "linear"


def infer_linear_pipeline(
    data: Dataset,
    h: Hypergraph,
    c: np.ndarray,
    alpha: float,
    cfg: Optional[PipelineConfig] = None,
    rng: Optional[np.random.Generator] = None,
) -> LinearInference:
    """
    Greedy set -> split -> MPLE on S1 -> projection on S2 -> debias -> variance -> CI and test.

    Raises:
        PipelineError: carrying the failing stage label and the original error
    """
    cfg = cfg or PipelineConfig()
    rng = rng if rng is not None else np.random.default_rng()
    alpha = _check_alpha(alpha)
    c = _check_functional(c, data.d)
    split, fit = _prepare(data, h, cfg, rng)
    result = _linear_from_fit(c, _describe(c), data, h, split, fit, alpha, cfg)
    logger.debug(
        f"✅ {result.functional}: estimate {result.estimate:.4f}, CI [{result.ci_lo:.4f}, {result.ci_hi:.4f}]"
    )
    return result


def infer_coordinates(
    data: Dataset,
    h: Hypergraph,
    indices: Sequence[int],
    alpha: float,
    cfg: Optional[PipelineConfig] = None,
    rng: Optional[np.random.Generator] = None,
) -> list[LinearInference]:
    """One split, fit and weighted Gram matrix shared by c = e_j for each j in indices."""
    cfg = cfg or PipelineConfig()
    rng = rng if rng is not None else np.random.default_rng()
    alpha = _check_alpha(alpha)
    indices = [int(j) for j in indices]
    if not indices:
        raise ArgumentError("No coordinates requested")
    if min(indices) < 0 or max(indices) >= data.d:
        raise ArgumentError(f"Coordinate index outside [0, {data.d})")

    split, fit = _prepare(data, h, cfg, rng)
    with _stage("projection"):
        gram = weighted_gram(data, split.s2, fit.theta_tilde, h)

    results = []
    for j in indices:
        c = np.zeros(data.d)
        c[j] = 1.0
        results.append(_linear_from_fit(c, f"coordinate:{j}", data, h, split, fit, alpha, cfg, gram=gram))
    return results


def infer_quadratic_pipeline(
    data: Dataset,
    h: Hypergraph,
    m_matrix: np.ndarray,
    alpha: float,
    cfg: Optional[PipelineConfig] = None,
    rng: Optional[np.random.Generator] = None,
) -> QuadraticInference:
    """Quadratic functional theta^T M theta; theta_tilde = 0 yields the floor-variance report."""
    cfg = cfg or PipelineConfig()
    rng = rng if rng is not None else np.random.default_rng()
    alpha = _check_alpha(alpha)
    m_matrix = _check_spd(m_matrix, data.d)

    split, fit = _prepare(data, h, cfg, rng)
    target = m_matrix @ fit.theta_tilde
    if not np.any(target):
        logger.warning("⚠️ theta_tilde = 0, returning the floor-variance quadratic report")
        return quadratic_fallback(m_matrix, fit, data.n, alpha)

    with _stage("projection"):
        spec = build_constraint_spec(target, data.n, data.d, cfg.qp_consts)
        proj = solve_projection(spec, data, split.s2, fit.theta_tilde, h, cfg.max_inflations)
    with _stage("debias"):
        return debias_quadratic(m_matrix, fit, proj, data, split.s2, h, alpha)


def baseline_pipeline(
    data: Dataset,
    c: np.ndarray,
    alpha: float,
    cfg: Optional[PipelineConfig] = None,
    rng: Optional[np.random.Generator] = None,
) -> LinearInference:
    """
    Dependence-blind comparator: the same engine with m_i = 0.

    Fits on a random half of all n vertices and debiases on the other half,
    with no independent-set restriction.
    """
    cfg = cfg or PipelineConfig()
    rng = rng if rng is not None else np.random.default_rng()
    alpha = _check_alpha(alpha)
    c = _check_functional(c, data.d)
    edgeless = Hypergraph(data.n)

    with _stage("split"):
        split = split_independent_set(np.arange(data.n), rng)
    fit = _fit(data, edgeless, split, cfg)
    return _linear_from_fit(c, "baseline", data, edgeless, split, fit, alpha, cfg)
