"""
Dependent binary response model on a hypergraph.

P(y | X) ∝ exp( sum_e g_e y_e + sum_i y_i X_i^T theta ),  y in {-1, +1}^n.

This module handles:
- Local fields m_i(y) and the conditional law of one site
- Systematic-scan Gibbs sampling (numba sweep kernel)
- Exact enumeration of the joint law for small n (test oracle)
- Gaussian covariate generation with AR(rho) or explicit covariance
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
from numba import njit
from scipy.special import expit, logsumexp

from app.errors import ArgumentError, NotPositiveDefiniteError, ResourceError
from app.graph import Hypergraph, edge_products

logger = logging.getLogger(__name__)

# Exact enumeration limit (2^20 configurations)
MAX_EXACT_N = 20

_LOG2 = float(np.log(2.0))


@dataclass(frozen=True)
class ModelSpec:
    """The pair (G_n, theta) defining P_theta(y | X)."""
    graph: Hypergraph
    theta: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).reshape(-1)
        if theta.shape[0] < 1:
            raise ArgumentError("theta must have at least one coordinate")
        if not np.all(np.isfinite(theta)):
            raise ArgumentError("theta must be finite")
        object.__setattr__(self, "theta", theta)

    @property
    def d(self) -> int:
        return self.theta.shape[0]


@dataclass(frozen=True)
class Dataset:
    """Covariates x (n x d, row i = X_i) and responses y in {-1, +1}^n."""
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if x.ndim != 2:
            raise ArgumentError(f"Covariates must be a matrix, got shape {x.shape}")
        if x.shape[0] != y.shape[0]:
            raise ArgumentError(f"x has {x.shape[0]} rows but y has {y.shape[0]} entries")
        if not np.all(np.abs(y) == 1.0):
            raise ArgumentError("Responses must be in {-1, +1}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def y_bar(self) -> np.ndarray:
        """(y + 1) / 2 in {0, 1}."""
        return (self.y + 1.0) / 2.0


@dataclass(frozen=True)
class CovariateSpec:
    """Gaussian covariate law: AR(rho) covariance or an explicit SPD matrix."""
    d: int
    rho: Optional[float] = None
    matrix: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.d < 1:
            raise ArgumentError(f"d must be >= 1, got {self.d}")
        if (self.rho is None) == (self.matrix is None):
            raise ArgumentError("Specify exactly one of rho or matrix")
        if self.rho is not None and not -1.0 < self.rho < 1.0:
            raise ArgumentError(f"AR parameter must lie in (-1, 1), got {self.rho}")
        if self.matrix is not None:
            m = np.asarray(self.matrix, dtype=float)
            if m.shape != (self.d, self.d):
                raise ArgumentError(f"Covariance must be {self.d}x{self.d}, got {m.shape}")
            if not np.allclose(m, m.T):
                raise NotPositiveDefiniteError("Covariance matrix is not symmetric")
            object.__setattr__(self, "matrix", m)

    def covariance(self) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix
        return ar_covariance(self.d, self.rho)


def f_sigmoid(x):
    """f(x) = e^x / (e^x + e^-x) = 1 / (1 + e^(-2x)), overflow-safe."""
    return expit(2.0 * np.asarray(x, dtype=float)) if np.ndim(x) else float(expit(2.0 * x))


def log_cosh(x):
    """log cosh(x) = |x| + log1p(e^(-2|x|)) - log 2."""
    a = np.abs(np.asarray(x, dtype=float))
    out = a + np.log1p(np.exp(-2.0 * a)) - _LOG2
    return out if np.ndim(x) else float(out)


def _check_responses(h: Hypergraph, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != h.n:
        raise ArgumentError(f"Response vector has length {y.shape[0]}, graph has {h.n} vertices")
    return y


def local_field(h: Hypergraph, y: np.ndarray, i: int) -> float:
    """m_i(y) = sum_{e ni i} g_e prod_{j in e, j != i} y_j."""
    y = _check_responses(h, y)
    if not 0 <= int(i) < h.n:
        raise ArgumentError(f"Vertex id {i} outside [0, {h.n})")
    total = 0.0
    for e in h.incidence[int(i)]:
        prod = 1.0
        for j in h.edges[e]:
            if j != i:
                prod *= y[j]
        total += h.weights[e] * prod
    return float(total)


def local_fields(h: Hypergraph, y: np.ndarray) -> np.ndarray:
    """All local fields at once, using y_{e minus i} = y_e * y_i for +-1 spins."""
    y = _check_responses(h, y)
    if h.num_edges == 0:
        return np.zeros(h.n)
    weighted = h.weights * edge_products(h, y)
    return y * np.asarray(h.incidence_matrix @ weighted).reshape(-1)


def _check_design(m: ModelSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (m.graph.n, m.d):
        raise ArgumentError(f"Covariates must be {m.graph.n}x{m.d}, got {x.shape}")
    return x


def conditional_prob_plus(m: ModelSpec, data: Dataset, i: int) -> float:
    """P(y_i = +1 | y_{-i}, X) = f(m_i(y) + X_i^T theta)."""
    x = _check_design(m, data.x)
    v = local_field(m.graph, data.y, i) + float(x[int(i)] @ m.theta)
    return f_sigmoid(v)


@njit(cache=True)
def _gibbs_sweep(y, u, eta, vertex_ptr, vertex_edges, edge_ptr, edge_vertices, weights):
    n = y.shape[0]
    for i in range(n):
        m = 0.0
        for k in range(vertex_ptr[i], vertex_ptr[i + 1]):
            e = vertex_edges[k]
            prod = 1.0
            for q in range(edge_ptr[e], edge_ptr[e + 1]):
                j = edge_vertices[q]
                if j != i:
                    prod *= y[j]
            m += weights[e] * prod
        p = 1.0 / (1.0 + np.exp(-2.0 * (m + eta[i])))
        if u[i] < p:
            y[i] = 1.0
        else:
            y[i] = -1.0


class _SweepKernel:
    """Graph arrays laid out for the compiled sweep."""

    def __init__(self, m: ModelSpec, x: np.ndarray):
        h = m.graph
        self.n = h.n
        self.eta = np.ascontiguousarray(x @ m.theta, dtype=np.float64)
        self.vertex_ptr = np.ascontiguousarray(h.vertex_ptr, dtype=np.int64)
        self.vertex_edges = np.ascontiguousarray(h.vertex_edges, dtype=np.int64)
        self.edge_ptr = np.ascontiguousarray(h.edge_ptr, dtype=np.int64)
        self.edge_vertices = np.ascontiguousarray(h.edge_vertices, dtype=np.int64)
        self.weights = np.array(h.weights, dtype=np.float64)

    def sweep(self, y: np.ndarray, rng: np.random.Generator) -> None:
        u = rng.random(self.n)
        _gibbs_sweep(y, u, self.eta, self.vertex_ptr, self.vertex_edges,
                     self.edge_ptr, self.edge_vertices, self.weights)


def _initial_state(n: int, rng: np.random.Generator, init: Optional[np.ndarray]) -> np.ndarray:
    if init is None:
        return np.where(rng.random(n) < 0.5, 1.0, -1.0)
    y = np.array(init, dtype=np.float64).reshape(-1)
    if y.shape[0] != n or not np.all(np.abs(y) == 1.0):
        raise ArgumentError("Initial state must be a +-1 vector of length n")
    return y


def gibbs_sampler(
    m: ModelSpec,
    x: np.ndarray,
    sweeps: int,
    rng: np.random.Generator,
    init: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Systematic-scan Gibbs sampler; returns the state after `sweeps` sweeps.

    Each sweep visits sites 0..n-1 in order and redraws y_i from its
    conditional law. The initial state defaults to i.i.d. uniform signs.
    """
    if sweeps < 1:
        raise ArgumentError(f"sweeps must be >= 1, got {sweeps}")
    x = _check_design(m, x)
    kernel = _SweepKernel(m, x)
    y = _initial_state(m.graph.n, rng, init)
    for _ in range(sweeps):
        kernel.sweep(y, rng)
    return y


def gibbs_chain(
    m: ModelSpec,
    x: np.ndarray,
    draws: int,
    rng: np.random.Generator,
    burn_in: int = 100,
    thin: int = 1,
    init: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Sample path: `draws` states taken every `thin` sweeps after `burn_in` sweeps."""
    if draws < 1 or thin < 1 or burn_in < 0:
        raise ArgumentError("draws and thin must be >= 1, burn_in >= 0")
    x = _check_design(m, x)
    kernel = _SweepKernel(m, x)
    y = _initial_state(m.graph.n, rng, init)
    for _ in range(burn_in):
        kernel.sweep(y, rng)
    out = np.empty((draws, m.graph.n))
    for k in range(draws):
        for _ in range(thin):
            kernel.sweep(y, rng)
        out[k] = y
    return out


def config_index(y: np.ndarray) -> np.ndarray:
    """Bit index of sign configurations: bit i set iff y_i = +1. Accepts 1-d or rows."""
    y = np.atleast_2d(np.asarray(y))
    bits = (y > 0).astype(np.int64)
    return bits @ (1 << np.arange(y.shape[1], dtype=np.int64))


def exact_distribution(m: ModelSpec, x: np.ndarray) -> np.ndarray:
    """
    Exact joint law over all 2^n sign configurations (n <= 20).

    Entry k is the probability of the configuration whose bit i is set iff
    y_i = +1. Normalization sums over configurations z, not over y.
    """
    h = m.graph
    if h.n > MAX_EXACT_N:
        raise ResourceError(f"Exact enumeration limited to n <= {MAX_EXACT_N}, got {h.n}")
    x = _check_design(m, x)

    idx = np.arange(1 << h.n, dtype=np.int64)
    z = ((idx[:, None] >> np.arange(h.n)) & 1) * 2.0 - 1.0
    energy = z @ (x @ m.theta)
    for e, g in zip(h.edges, h.weights):
        energy += g * np.prod(z[:, list(e)], axis=1)
    return np.exp(energy - logsumexp(energy))


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    """Total-variation distance between two probability vectors."""
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def ar_covariance(d: int, rho: float) -> np.ndarray:
    """Sigma_ij = rho^|i - j|."""
    if d < 1:
        raise ArgumentError(f"d must be >= 1, got {d}")
    if not -1.0 < rho < 1.0:
        raise ArgumentError(f"AR parameter must lie in (-1, 1), got {rho}")
    return scipy.linalg.toeplitz(float(rho) ** np.arange(d))


def cholesky_lower(matrix: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, NotPositiveDefiniteError on failure."""
    try:
        return scipy.linalg.cholesky(np.asarray(matrix, dtype=float), lower=True)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefiniteError(f"Matrix is not positive definite: {e}") from e


def sample_covariates(n: int, spec: CovariateSpec, rng: np.random.Generator) -> np.ndarray:
    """Rows i.i.d. N(0, Sigma), drawn as L z with L the lower Cholesky factor."""
    if n < 1:
        raise ArgumentError(f"n must be >= 1, got {n}")
    chol = cholesky_lower(spec.covariance())
    return rng.standard_normal((n, spec.d)) @ chol.T


def sparse_theta(d: int, s: int, value: float = 1.0) -> np.ndarray:
    """theta_1 = ... = theta_s = value, remaining coordinates 0."""
    if not 0 <= s <= d:
        raise ArgumentError(f"Need 0 <= s <= d, got s={s}, d={d}")
    theta = np.zeros(d)
    theta[:s] = value
    return theta


def simulate_dataset(
    m: ModelSpec,
    cov: CovariateSpec,
    sweeps: int,
    rng: np.random.Generator,
) -> Dataset:
    """Draw X, then y | X by Gibbs sampling from a random start."""
    if cov.d != m.d:
        raise ArgumentError(f"Covariate dimension {cov.d} != theta dimension {m.d}")
    x = sample_covariates(m.graph.n, cov, rng)
    y = gibbs_sampler(m, x, sweeps, rng)
    return Dataset(x=x, y=y)
