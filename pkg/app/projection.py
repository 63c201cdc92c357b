"""
Projection direction for the bias correction.

For a target vector t, the direction u minimizes the weighted quadratic
form q(u) = u^T Gamma u, Gamma = (2/|S2|) sum_{i in S2} f'(v_i) X_i X_i^T,
over the polyhedron

    (a) ||Gamma u - t||_inf            <= r_inf
    (b) |t^T Gamma u - ||t||_2^2|      <= r_scalar
    (c) max_{i in S2} |X_i^T u|        <= r_max

The QP is handed to quadprog (Goldfarb-Idnani dual active set). When the
polyhedron is empty the radius constants are doubled and the solve retried.
"""

import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
import quadprog

from app import config
from app.errors import (
    ArgumentError,
    DegenerateDimensionError,
    DegenerateTargetError,
    InsufficientDataError,
    NumericError,
    ProjectionInfeasibleError,
)
from app.graph import Hypergraph
from app.mrf import Dataset, f_sigmoid, local_fields

logger = logging.getLogger(__name__)

# Relative slack accepted when checking the returned direction
FEASIBILITY_TOL = 1e-8

# quadprog reports infeasibility as a ValueError carrying this text
_INFEASIBLE_MESSAGE = "constraints are inconsistent"


@dataclass(frozen=True)
class ConstraintSpec:
    """Target t, radius constants and the sample/dimension sizes the radii use."""
    target: np.ndarray
    c1: float
    c2: float
    c3: float
    n: int
    d: int

    @property
    def t_norm(self) -> float:
        return float(np.linalg.norm(self.target))

    @property
    def rate(self) -> float:
        return float(np.sqrt(np.log(self.d) / self.n))

    @property
    def r_inf(self) -> float:
        return self.c1 * self.t_norm * self.rate

    @property
    def r_scalar(self) -> float:
        return self.c2 * self.t_norm ** 2 * self.rate

    @property
    def r_max(self) -> float:
        return self.c3 * self.t_norm * float(np.sqrt(np.log(self.n)))

    def inflated(self) -> "ConstraintSpec":
        """Same target with every constant doubled."""
        return replace(self, c1=2 * self.c1, c2=2 * self.c2, c3=2 * self.c3)


@dataclass(frozen=True)
class ProjectionResult:
    """
    Projection direction with its objective and constraint slacks.

    Slacks are <= 0 up to solver round-off: a returned direction may show a
    residual as large as FEASIBILITY_TOL * max(1, radius), never more.
    """
    u_hat: np.ndarray
    objective: float
    residual_inf: float
    residual_scalar: float
    residual_max: float
    inflations: int
    iterations: int
    spec: ConstraintSpec
    used_scalar_constraint: bool
    ridge: float = 0.0

    @property
    def residuals(self) -> dict:
        return {"inf": self.residual_inf, "scalar": self.residual_scalar, "max": self.residual_max}


def weight_fprime(x):
    """f'(x) = 2 f(x) (1 - f(x))."""
    p = f_sigmoid(x)
    return 2.0 * p * (1.0 - p)


def build_constraint_spec(
    t: np.ndarray,
    n: int,
    d: int,
    consts: Sequence[float] = (config.QP_C1, config.QP_C2, config.QP_C3),
) -> ConstraintSpec:
    """
    Radii r_inf = c1 ||t|| sqrt(log d / n), r_scalar = c2 ||t||^2 sqrt(log d / n),
    r_max = c3 ||t|| sqrt(log n), with the full sample size n.

    Raises:
        DegenerateTargetError: t = 0
        DegenerateDimensionError: d < 2
        ArgumentError: n < 2, non-positive constants, or len(t) != d
    """
    t = np.asarray(t, dtype=float).reshape(-1)
    if d < 2:
        raise DegenerateDimensionError(f"Projection radii need d >= 2 (log d > 0), got d={d}")
    if n < 2:
        raise ArgumentError(f"Projection radii need n >= 2, got n={n}")
    if t.shape[0] != d:
        raise ArgumentError(f"Target has length {t.shape[0]}, expected {d}")
    if not np.all(np.isfinite(t)):
        raise NumericError("Non-finite projection target")
    if not np.any(t):
        raise DegenerateTargetError("Projection target is the zero vector")
    c1, c2, c3 = (float(c) for c in consts)
    if min(c1, c2, c3) <= 0:
        raise ArgumentError(f"Radius constants must be positive, got {(c1, c2, c3)}")
    return ConstraintSpec(target=t, c1=c1, c2=c2, c3=c3, n=int(n), d=int(d))


def second_constraint_needed(t: np.ndarray, c1: float = config.QP_C1, c2: float = config.QP_C2) -> bool:
    """
    False when c1 ||t||_1 ||t||_2 <= c2 ||t||_2^2, i.e. when (a) already implies (b).

    |t^T (Gamma u - t)| <= ||t||_1 ||Gamma u - t||_inf, so the scalar
    constraint is redundant in that regime (e.g. t = e_j with c1 = c2).
    """
    t = np.asarray(t, dtype=float)
    l1 = float(np.abs(t).sum())
    l2 = float(np.linalg.norm(t))
    return not c1 * l1 * l2 <= c2 * l2 * l2


def fitted_predictor(data: Dataset, s2: Sequence[int], theta_tilde: np.ndarray, h: Hypergraph) -> np.ndarray:
    """v_i = m_i(y) + X_i^T theta_tilde for i in S2."""
    s2 = np.asarray(s2, dtype=np.int64).reshape(-1)
    if s2.shape[0] == 0:
        raise InsufficientDataError("S2 is empty")
    if data.n != h.n:
        raise ArgumentError(f"Dataset has {data.n} rows, graph has {h.n} vertices")
    theta_tilde = np.asarray(theta_tilde, dtype=float).reshape(-1)
    if theta_tilde.shape[0] != data.d:
        raise ArgumentError(f"theta_tilde has length {theta_tilde.shape[0]}, data has d={data.d}")
    return local_fields(h, data.y)[s2] + data.x[s2] @ theta_tilde


def weighted_gram(data: Dataset, s2: Sequence[int], theta_tilde: np.ndarray, h: Hypergraph) -> np.ndarray:
    """Gamma = (2/|S2|) sum_{i in S2} f'(v_i) X_i X_i^T."""
    v = fitted_predictor(data, s2, theta_tilde, h)
    x_s2 = data.x[np.asarray(s2, dtype=np.int64)]
    gram = 2.0 * (x_s2.T * weight_fprime(v)) @ x_s2 / x_s2.shape[0]
    if not np.all(np.isfinite(gram)):
        raise NumericError("Non-finite weighted Gram matrix")
    return 0.5 * (gram + gram.T)


def constraint_residuals(u: np.ndarray, spec: ConstraintSpec, gram: np.ndarray, x_s2: np.ndarray) -> dict:
    """Slack of each constraint family; <= 0 means satisfied."""
    t = spec.target
    gu = gram @ u
    return {
        "inf": float(np.abs(gu - t).max()) - spec.r_inf,
        "scalar": abs(float(t @ gu) - float(t @ t)) - spec.r_scalar,
        "max": float(np.abs(x_s2 @ u).max()) - spec.r_max,
    }


def _is_feasible(residuals: dict, spec: ConstraintSpec, scalar_needed: bool) -> bool:
    checks = [("inf", spec.r_inf), ("max", spec.r_max)]
    if scalar_needed:
        checks.append(("scalar", spec.r_scalar))
    return all(residuals[key] <= FEASIBILITY_TOL * max(1.0, radius) for key, radius in checks)


def _regularize(gram: np.ndarray) -> tuple[np.ndarray, float]:
    """2 * Gamma, with a ridge when Gamma is numerically singular."""
    eig = np.linalg.eigvalsh(gram)
    scale = max(1.0, float(eig[-1]))
    if eig[0] > 1e-10 * scale:
        return 2.0 * gram, 0.0
    ridge = 1e-8 * scale - min(float(eig[0]), 0.0)
    logger.warning(
        f"⚠️ Weighted Gram matrix is singular (min eigenvalue {eig[0]:.2e}), adding ridge {ridge:.2e}"
    )
    return 2.0 * (gram + ridge * np.eye(gram.shape[0])), ridge


def _constraint_system(spec: ConstraintSpec, gram: np.ndarray, x_s2: np.ndarray, scalar_needed: bool):
    """Stack the constraints in quadprog's form C^T u >= b."""
    t = spec.target
    blocks = [
        (-gram, -(t + spec.r_inf)),
        (gram, t - spec.r_inf),
        (-x_s2, np.full(x_s2.shape[0], -spec.r_max)),
        (x_s2, np.full(x_s2.shape[0], -spec.r_max)),
    ]
    if scalar_needed:
        s = gram @ t
        tt = float(t @ t)
        blocks.append((-s[None, :], np.array([-(tt + spec.r_scalar)])))
        blocks.append((s[None, :], np.array([tt - spec.r_scalar])))
    c_mat = np.vstack([a for a, _ in blocks])
    b_vec = np.concatenate([b for _, b in blocks])
    return c_mat.T, b_vec


def solve_projection(
    spec: ConstraintSpec,
    data: Dataset,
    s2: Sequence[int],
    theta_tilde: np.ndarray,
    h: Hypergraph,
    max_inflations: int = config.QP_MAX_INFLATIONS,
    gram: Optional[np.ndarray] = None,
) -> ProjectionResult:
    """
    Solve the projection QP, doubling (c1, c2, c3) while it is infeasible.

    Args:
        spec: Target and radius constants
        data: Covariates and responses
        s2: Debiasing vertices
        theta_tilde: Initial MPLE estimate
        h: Hypergraph for the local fields
        max_inflations: Maximum number of constant doublings
        gram: Precomputed weighted Gram matrix (shared across targets)

    Raises:
        ProjectionInfeasibleError: still infeasible after max_inflations doublings
        NumericError: NaN in the Gram matrix or the solution
    """
    s2 = np.asarray(s2, dtype=np.int64).reshape(-1)
    if gram is None:
        gram = weighted_gram(data, s2, theta_tilde, h)
    if gram.shape != (spec.d, spec.d):
        raise ArgumentError(f"Gram matrix is {gram.shape}, expected {(spec.d, spec.d)}")
    x_s2 = data.x[s2]
    quad, ridge = _regularize(gram)

    scalar_needed = second_constraint_needed(spec.target, spec.c1, spec.c2)
    last_residuals: dict = {}
    current = spec

    for inflation in range(max_inflations + 1):
        c_mat, b_vec = _constraint_system(current, gram, x_s2, scalar_needed)
        try:
            u, _, _, iters, _, _ = quadprog.solve_qp(quad, np.zeros(spec.d), c_mat, b_vec, 0)
        except ValueError as e:
            if _INFEASIBLE_MESSAGE not in str(e):
                raise NumericError(f"Projection QP failed: {e}") from e
            logger.debug(f"🔍 quadprog reports infeasible at c=({current.c1:g}, {current.c2:g}, {current.c3:g}): {e}")
            u = None

        if u is not None:
            if not np.all(np.isfinite(u)):
                raise NumericError("Non-finite projection direction")
            last_residuals = constraint_residuals(u, current, gram, x_s2)
            if _is_feasible(last_residuals, current, scalar_needed):
                if inflation:
                    logger.warning(f"⚠️ Projection QP needed {inflation} constant inflation(s)")
                return ProjectionResult(
                    u_hat=u,
                    objective=float(u @ gram @ u),
                    residual_inf=last_residuals["inf"],
                    residual_scalar=last_residuals["scalar"],
                    residual_max=last_residuals["max"],
                    inflations=inflation,
                    iterations=int(iters[0]),
                    spec=current,
                    used_scalar_constraint=scalar_needed,
                    ridge=ridge,
                )

        if inflation < max_inflations:
            current = current.inflated()

    if not last_residuals:
        candidate = np.linalg.lstsq(gram, spec.target, rcond=None)[0]
        last_residuals = constraint_residuals(candidate, current, gram, x_s2)
    raise ProjectionInfeasibleError(
        f"Projection QP infeasible after {max_inflations} inflations "
        f"(c1={current.c1:g}, c2={current.c2:g}, c3={current.c3:g})",
        residuals=last_residuals,
    )
