"""
Monte Carlo coverage experiments.

This module handles:
- Declarative experiment configuration (pydantic, validated from JSON)
- Replicates with independent seed streams; failures are recorded, not raised
- Aggregation into coverage, median and maximum interval length
- The beta, network and dimension grids of the coverage tables
"""

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path
from typing import Annotated, Literal, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy.stats import kstest

from app import config
from app.errors import ArgumentError, ExperimentError, InsufficientDataError, NetGlmError
from app.graph import Hypergraph, check_assumptions, from_ising, lattice2d, random_regular
from app.inference import (
    LinearInference,
    PipelineConfig,
    baseline_pipeline,
    infer_coordinates,
    infer_linear_pipeline,
    infer_quadratic_pipeline,
    multiple_test,
    oracle_variance,
)
from app.mrf import CovariateSpec, ModelSpec, simulate_dataset, sparse_theta
from app.storage import TABLE_COLUMNS, load_graph
from app.templates import render_template
from app.utils import format_validation_error, make_rng, mix_seed

logger = logging.getLogger(__name__)

# Seed stream of the experiment graph; replicates use streams 0..reps-1
GRAPH_STREAM = 1 << 40

METHODS = ("proposed", "baseline")

TABLE_GRIDS = {
    1: (0.1, 0.15, 0.2, 0.25, 0.3),
    2: (4, 5, 6, 7, 8),
    3: (100, 125, 150, 175, 200),
}

TABLE_TITLES = {
    1: "Coverage for varying inverse temperature beta",
    2: "Coverage for random Delta-regular networks",
    3: "Coverage for varying dimension d",
}

# Failures of a single replicate that are recorded instead of aborting the run
_REPLICATE_ERRORS = (NetGlmError, ValueError, RuntimeError, ArithmeticError)


# =============================================================================
# Configuration
# =============================================================================

class LatticeGraph(BaseModel):
    kind: Literal["lattice"] = "lattice"
    rows: int = Field(ge=2)
    cols: int = Field(ge=2)


class RegularGraph(BaseModel):
    kind: Literal["regular"] = "regular"
    n: int = Field(ge=2)
    delta: int = Field(ge=1)
    method: Literal["rejection", "pairing"] = "rejection"


class FileGraph(BaseModel):
    """Graph JSON; weights are used as stored unless degree_norm requests the Ising conversion."""
    kind: Literal["file"] = "file"
    path: str
    degree_norm: Optional[float] = Field(default=None, gt=0)


GraphConfig = Annotated[Union[LatticeGraph, RegularGraph, FileGraph], Field(discriminator="kind")]


class ExperimentConfig(BaseModel):
    """One coverage experiment: network, model, replicates, target and methods."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    graph: GraphConfig
    beta: float = Field(default=0.2, ge=0)
    d: int = Field(default=100, ge=2)
    s: int = Field(default=5, ge=0)
    theta_value: float = 1.0
    rho: float = Field(default=0.2, gt=-1, lt=1)
    sweeps: int = Field(default=config.GIBBS_SWEEPS, ge=1)
    reps: int = Field(default=100, ge=1)
    alpha: float = Field(default=config.ALPHA, gt=0, lt=1)
    target: Literal["coordinate", "quadratic", "multiple"] = "coordinate"
    index: int = Field(default=1, ge=0)
    indices: Optional[list[int]] = None
    test_method: Literal["bh", "bonferroni"] = "bh"
    null_value: float = 0.0
    method: Literal["proposed", "baseline", "both"] = "both"
    seed: int = Field(default=0, ge=0, lt=1 << 64)
    lambda_c: float = Field(default=config.LAMBDA_C, gt=0)
    qp_consts: tuple[float, float, float] = (config.QP_C1, config.QP_C2, config.QP_C3)
    greedy_order: Literal["ascending", "random"] = "ascending"

    @model_validator(mode="after")
    def _check_consistency(self) -> "ExperimentConfig":
        if self.s > self.d:
            raise ValueError(f"s={self.s} exceeds d={self.d}")
        if self.index >= self.d:
            raise ValueError(f"index={self.index} outside [0, {self.d})")
        if min(self.qp_consts) <= 0:
            raise ValueError("qp_consts must be positive")
        if self.indices is not None:
            if not self.indices or min(self.indices) < 0 or max(self.indices) >= self.d:
                raise ValueError(f"indices must be a non-empty subset of [0, {self.d})")
            if self.index not in self.indices:
                raise ValueError(f"index={self.index} must belong to indices")
        if self.target != "coordinate" and self.method != "proposed":
            raise ValueError(f"target '{self.target}' is only available with method 'proposed'")
        return self

    @property
    def methods(self) -> tuple[str, ...]:
        return METHODS if self.method == "both" else (self.method,)

    @property
    def tested_indices(self) -> list[int]:
        return list(self.indices) if self.indices is not None else list(range(self.d))

    def true_theta(self) -> np.ndarray:
        return sparse_theta(self.d, self.s, self.theta_value)

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            lambda_c=self.lambda_c,
            qp_consts=tuple(self.qp_consts),
            greedy_order=self.greedy_order,
            null_value=self.null_value,
        )


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read and validate a UTF-8 JSON experiment config."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        return ExperimentConfig.model_validate_json(text)
    except ValidationError as e:
        raise ArgumentError(f"Invalid experiment config {path}: {format_validation_error(e)}") from e


def build_graph(cfg: ExperimentConfig) -> Hypergraph:
    """Interaction graph of the experiment; random graphs use the dedicated graph stream."""
    spec = cfg.graph
    if isinstance(spec, LatticeGraph):
        h = from_ising(lattice2d(spec.rows, spec.cols), cfg.beta, 0.25)
    elif isinstance(spec, RegularGraph):
        rng = make_rng(mix_seed(cfg.seed, GRAPH_STREAM))
        base = random_regular(spec.n, spec.delta, rng, method=spec.method)
        h = from_ising(base, cfg.beta, 1.0 / spec.delta)
    else:
        h = load_graph(spec.path)
        if spec.degree_norm is not None:
            h = from_ising(h, cfg.beta, spec.degree_norm)
    check_assumptions(h)
    return h


# =============================================================================
# Replicates
# =============================================================================

@dataclass(frozen=True)
class ReplicateRecord:
    """Outcome of one method on one replicate; error is set when it failed."""
    rep: int
    method: str
    seed: int
    truth: float = float("nan")
    estimate: float = float("nan")
    ci_lo: float = float("nan")
    ci_hi: float = float("nan")
    variance: float = float("nan")
    t_stat: float = float("nan")
    covered: bool = False
    reject_one_sided: bool = False
    variance_ratio: float = float("nan")
    kkt_residual: float = float("nan")
    converged: bool = False
    inflations: int = 0
    rejections: int = 0
    fdp: float = float("nan")
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    @property
    def length(self) -> float:
        return self.ci_hi - self.ci_lo

    @property
    def standardized_error(self) -> float:
        return (self.estimate - self.truth) / float(np.sqrt(self.variance))


def _linear_record(
    result: LinearInference,
    theta: np.ndarray,
    rep: int,
    seed: int,
    method: str,
    **extra,
) -> ReplicateRecord:
    truth = float(result.c @ theta)
    return ReplicateRecord(
        rep=rep,
        method=method,
        seed=seed,
        truth=truth,
        estimate=result.estimate,
        ci_lo=result.ci_lo,
        ci_hi=result.ci_hi,
        variance=result.variance,
        t_stat=result.t_stat,
        covered=result.covers(truth),
        reject_one_sided=result.reject_one_sided,
        kkt_residual=result.fit.kkt_residual,
        converged=result.fit.converged,
        inflations=result.projection.inflations,
        **extra,
    )


def _variance_ratio(result: LinearInference, theta: np.ndarray, data, h: Hypergraph) -> float:
    oracle = oracle_variance(result.projection, theta, data, result.split.s2, h)
    return result.variance / oracle if oracle > 0 else float("nan")


def _run_method(
    cfg: ExperimentConfig,
    method: str,
    data,
    h: Hypergraph,
    theta: np.ndarray,
    rng: np.random.Generator,
    rep: int,
    seed: int,
) -> ReplicateRecord:
    pcfg = cfg.pipeline_config()
    c = np.zeros(cfg.d)
    c[cfg.index] = 1.0

    if method == "baseline":
        return _linear_record(baseline_pipeline(data, c, cfg.alpha, pcfg, rng), theta, rep, seed, method)

    if cfg.target == "coordinate":
        result = infer_linear_pipeline(data, h, c, cfg.alpha, pcfg, rng)
        ratio = _variance_ratio(result, theta, data, h)
        return _linear_record(result, theta, rep, seed, method, variance_ratio=ratio)

    if cfg.target == "quadratic":
        result = infer_quadratic_pipeline(data, h, np.eye(cfg.d), cfg.alpha, pcfg, rng)
        truth = float(theta @ theta)
        return ReplicateRecord(
            rep=rep,
            method=method,
            seed=seed,
            truth=truth,
            estimate=result.q_hat,
            ci_lo=result.ci_lo,
            ci_hi=result.ci_hi,
            variance=result.variance,
            covered=result.covers(truth),
            kkt_residual=result.fit.kkt_residual if result.fit is not None else float("nan"),
            converged=result.fit.converged if result.fit is not None else False,
            inflations=result.projection.inflations if result.projection is not None else 0,
        )

    indices = cfg.tested_indices
    results = infer_coordinates(data, h, indices, cfg.alpha, pcfg, rng)
    test = multiple_test([r.t_stat for r in results], cfg.alpha, cfg.test_method)
    rejected = [indices[k] for k in test.rejected]
    n_false = sum(1 for j in rejected if theta[j] == cfg.null_value)
    fdp = n_false / max(len(rejected), 1)
    primary = results[indices.index(cfg.index)]
    return _linear_record(primary, theta, rep, seed, method, rejections=len(rejected), fdp=fdp)


def run_replicate(cfg: ExperimentConfig, rep: int, graph: Optional[Hypergraph] = None) -> list[ReplicateRecord]:
    """
    Simulate one dataset and run every configured method on it.

    X and y are redrawn from the replicate seed mix_seed(cfg.seed, rep); each
    method gets its own sub-stream, so adding or dropping a method leaves the
    other one unchanged. Failures are logged and recorded.

    Returns:
        One record per method, in cfg.methods order
    """
    if not 0 <= rep < cfg.reps:
        raise ArgumentError(f"Replicate index {rep} outside [0, {cfg.reps})")
    h = graph if graph is not None else build_graph(cfg)
    seed = mix_seed(cfg.seed, rep)
    theta = cfg.true_theta()

    try:
        data = simulate_dataset(ModelSpec(h, theta), CovariateSpec(cfg.d, rho=cfg.rho), cfg.sweeps, make_rng(seed))
    except _REPLICATE_ERRORS as e:
        logger.warning(f"⚠️ Replicate {rep}: simulation failed: {e}")
        return [ReplicateRecord(rep=rep, method=m, seed=seed, error=f"simulate: {e}") for m in cfg.methods]

    records = []
    for method in cfg.methods:
        rng = make_rng(mix_seed(seed, METHODS.index(method)))
        try:
            records.append(_run_method(cfg, method, data, h, theta, rng, rep, seed))
        except _REPLICATE_ERRORS as e:
            logger.warning(f"⚠️ Replicate {rep} ({method}) failed: {e}")
            records.append(ReplicateRecord(rep=rep, method=method, seed=seed, error=str(e)))
    return records


# =============================================================================
# Experiments and aggregation
# =============================================================================

def records_frame(records: Sequence[ReplicateRecord]) -> pd.DataFrame:
    rows = [{**asdict(r), "length": r.length} for r in records]
    return pd.DataFrame(rows)


def summarize(records: Sequence[ReplicateRecord]) -> pd.DataFrame:
    """
    Per-method coverage, median/max interval length and failure count.

    Failed replicates are excluded from every statistic except 'failures'.
    The result does not depend on the order of records.
    """
    if not records:
        raise InsufficientDataError("No replicate records to summarize")
    frame = records_frame(records)

    rows = []
    for method, group in frame.groupby("method", sort=True):
        ok = group[group["error"].isna()]
        rows.append({
            "method": method,
            "coverage": float(ok["covered"].mean()) if len(ok) else float("nan"),
            "median_len": float(ok["length"].median()) if len(ok) else float("nan"),
            "max_len": float(ok["length"].max()) if len(ok) else float("nan"),
            "rejection_rate": float(ok["reject_one_sided"].mean()) if len(ok) else float("nan"),
            "fdr": float(ok["fdp"].mean()) if ok["fdp"].notna().any() else float("nan"),
            "reps": int(group["rep"].nunique()),
            "failures": int(len(group) - len(ok)),
        })
    return pd.DataFrame(rows)


def normality_check(records: Sequence[ReplicateRecord], method: str = "proposed") -> float:
    """Kolmogorov-Smirnov p-value of (estimate - truth) / sqrt(variance) against N(0, 1)."""
    z = [r.standardized_error for r in records if r.method == method and not r.failed]
    if len(z) < 2:
        raise InsufficientDataError(f"Need at least 2 successful '{method}' replicates, got {len(z)}")
    return float(kstest(z, "norm").pvalue)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[ReplicateRecord] = field(default_factory=list)
    runtime: float = 0.0

    def summary(self) -> pd.DataFrame:
        return summarize(self.records)

    def _stat(self, method: str, column: str) -> float:
        row = self.summary().set_index("method")
        if method not in row.index:
            raise ArgumentError(f"Method '{method}' was not run")
        return float(row.loc[method, column])

    def coverage(self, method: str = "proposed") -> float:
        return self._stat(method, "coverage")

    def median_length(self, method: str = "proposed") -> float:
        return self._stat(method, "median_len")

    def max_length(self, method: str = "proposed") -> float:
        return self._stat(method, "max_len")

    def failures(self, method: str = "proposed") -> int:
        return int(self._stat(method, "failures"))


def run_experiment(cfg: ExperimentConfig, workers: Optional[int] = None) -> ExperimentResult:
    """
    Run cfg.reps replicates on a process pool capped by NETGLM_THREADS.

    The graph is built once. Records come back in replicate order whatever
    the scheduling.

    Raises:
        ExperimentError: every replicate failed
    """
    start = time.perf_counter()
    h = build_graph(cfg)
    workers = max(1, min(workers or config.THREADS, cfg.reps))
    logger.info(f"🚀 Running {cfg.reps} replicate(s) of {'/'.join(cfg.methods)} on {workers} worker(s)")

    job = partial(run_replicate, cfg, graph=h)
    if workers == 1:
        batches = [job(rep) for rep in range(cfg.reps)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(job, range(cfg.reps)))

    records = [record for batch in batches for record in batch]
    if all(r.failed for r in records):
        raise ExperimentError(f"All {cfg.reps} replicate(s) failed; first error: {records[0].error}")

    result = ExperimentResult(config=cfg, records=records, runtime=time.perf_counter() - start)
    for _, row in result.summary().iterrows():
        logger.info(
            f"✅ {row['method']}: coverage {row['coverage']:.2f}, median length {row['median_len']:.3f}, "
            f"{row['failures']} failure(s)"
        )
    return result


# =============================================================================
# Coverage tables
# =============================================================================

def table_configs(
    table: int,
    scale: str = "full",
    seed: int = 0,
    reps: int = 100,
    sweeps: int = config.GIBBS_SWEEPS,
) -> list[tuple[float, ExperimentConfig]]:
    """
    Grid of a coverage table as (row parameter, config) pairs.

    Full scale is the 40x40 lattice (n = 1600) with d = 100 and s = 5; desk
    scale halves the lattice side and d. Every row uses the same seed.
    """
    if table not in TABLE_GRIDS:
        raise ArgumentError(f"Unknown table {table}, expected one of {sorted(TABLE_GRIDS)}")
    if scale not in ("full", "desk"):
        raise ArgumentError(f"Unknown scale '{scale}', expected 'full' or 'desk'")

    side = 40 if scale == "full" else 20
    d_base = 100 if scale == "full" else 50

    grid = []
    for value in TABLE_GRIDS[table]:
        graph: Union[LatticeGraph, RegularGraph] = LatticeGraph(rows=side, cols=side)
        beta, d = 0.2, d_base
        if table == 1:
            beta = value
        elif table == 2:
            # full rejection almost never succeeds for delta >= 7
            graph = RegularGraph(n=side * side, delta=value, method="pairing" if value >= 7 else "rejection")
        else:
            d = value if scale == "full" else value // 2
        cfg = ExperimentConfig(graph=graph, beta=beta, d=d, s=5, reps=reps, sweeps=sweeps, seed=seed, method="both")
        grid.append((value, cfg))
    return grid


def reproduce_table(
    table: int,
    scale: str = "full",
    seed: int = 0,
    reps: int = 100,
    sweeps: int = config.GIBBS_SWEEPS,
    workers: Optional[int] = None,
) -> list[dict]:
    """Run every grid point of a coverage table with both methods; one row per (point, method)."""
    rows = []
    for value, cfg in table_configs(table, scale, seed, reps, sweeps):
        logger.info(f"📊 Table {table} ({scale}): row {value}")
        summary = run_experiment(cfg, workers).summary()
        for _, s in summary.iterrows():
            rows.append({
                "table": table,
                "row_param": value,
                "method": s["method"],
                "coverage": s["coverage"],
                "median_len": s["median_len"],
                "max_len": s["max_len"],
                "reps": cfg.reps,
                "failures": int(s["failures"]),
                "seed": cfg.seed,
            })
    return rows


def render_table_report(rows: Sequence[dict], path: Optional[Union[str, Path]] = None) -> str:
    """Markdown summary of reproduced table rows, optionally written to path."""
    if not rows:
        raise InsufficientDataError("No table rows to report")
    frame = pd.DataFrame(list(rows), columns=TABLE_COLUMNS)
    table = int(frame["table"].iloc[0])
    wide = frame.pivot(index="row_param", columns="method", values="coverage").sort_index()

    text = render_template(
        "table_report.md.j2",
        table=table,
        title=TABLE_TITLES.get(table, f"Table {table}"),
        methods=list(wide.columns),
        rows=[{"param": param, "coverage": dict(values)} for param, values in wide.iterrows()],
        details=frame.to_dict(orient="records"),
        seed=int(frame["seed"].iloc[0]),
        reps=int(frame["reps"].iloc[0]),
    )
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
        logger.info(f"📝 Table report written to {path}")
    return text


