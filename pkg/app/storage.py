"""
File formats for netglm.

This module handles:
- Graph JSON: {"n": int, "edges": [{"v": [int, ...], "g": float}, ...]}
- Dataset CSV: columns y, x1..xd
- Fit JSON and inference report JSON
- Experiment table CSV with a fixed column order

All text files are UTF-8.
"""

import json
import logging
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, ValidationError

from app.errors import ArgumentError
from app.graph import Hypergraph
from app.mple import MpleFit
from app.mrf import Dataset
from app.utils import format_validation_error

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

TABLE_COLUMNS = [
    "table", "row_param", "method", "coverage", "median_len", "max_len", "reps", "failures", "seed",
]


class EdgeEntry(BaseModel):
    v: list[int] = Field(min_length=2)
    g: float = Field(default=1.0, ge=0)


class GraphFile(BaseModel):
    n: int = Field(ge=0)
    edges: list[EdgeEntry] = Field(default_factory=list)


def _read_json(path: PathLike) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except UnicodeDecodeError as e:
            raise ArgumentError(f"{path}: not UTF-8 text ({e.reason})") from e
        except json.JSONDecodeError as e:
            raise ArgumentError(f"{path}: invalid JSON ({e})") from e


def _read_csv(path: PathLike) -> pd.DataFrame:
    try:
        return pd.read_csv(path, encoding="utf-8")
    except UnicodeDecodeError as e:
        raise ArgumentError(f"{path}: not UTF-8 text ({e.reason})") from e
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise ArgumentError(f"{path}: invalid CSV ({e})") from e


def _write_json(obj: dict, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, ensure_ascii=False)
        fh.write("\n")


def graph_to_dict(h: Hypergraph) -> dict:
    return {
        "n": h.n,
        "edges": [{"v": list(e), "g": float(g)} for e, g in zip(h.edges, h.weights)],
    }


def graph_from_dict(raw: dict) -> Hypergraph:
    """Validate a parsed graph document and build the Hypergraph."""
    try:
        doc = GraphFile.model_validate(raw)
    except ValidationError as e:
        raise ArgumentError(f"Invalid graph file: {format_validation_error(e)}") from e
    return Hypergraph(doc.n, [e.v for e in doc.edges], [e.g for e in doc.edges])


def save_graph(h: Hypergraph, path: PathLike) -> None:
    _write_json(graph_to_dict(h), path)
    logger.info(f"💾 Graph with {h.n} vertices and {h.num_edges} edges written to {path}")


def load_graph(path: PathLike) -> Hypergraph:
    return graph_from_dict(_read_json(path))


def save_dataset(data: Dataset, path: PathLike) -> None:
    frame = pd.DataFrame(data.x, columns=[f"x{k + 1}" for k in range(data.d)])
    frame.insert(0, "y", data.y.astype(int))
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.info(f"💾 Dataset n={data.n}, d={data.d} written to {path}")


def load_dataset(path: PathLike) -> Dataset:
    """Read a y, x1..xd CSV; covariate columns are taken in x1..xd order."""
    frame = _read_csv(path)
    if "y" not in frame.columns:
        raise ArgumentError(f"{path}: missing 'y' column")
    x_cols = sorted((c for c in frame.columns if c != "y"), key=_covariate_position)
    if not x_cols:
        raise ArgumentError(f"{path}: no covariate columns")
    return Dataset(x=frame[x_cols].to_numpy(dtype=float), y=frame["y"].to_numpy(dtype=float))


def _covariate_position(name: str) -> int:
    if not (name.startswith("x") and name[1:].isdigit()):
        raise ArgumentError(f"Unexpected dataset column '{name}'")
    return int(name[1:])


def fit_to_dict(fit: MpleFit, s1: np.ndarray) -> dict:
    return {
        "theta_tilde": [float(v) for v in fit.theta_tilde],
        "lambda": fit.lambda_,
        "kkt_residual": fit.kkt_residual,
        "iterations": fit.iterations,
        "objective": fit.objective,
        "converged": fit.converged,
        "s1": [int(v) for v in s1],
    }


def save_fit(fit: MpleFit, s1: np.ndarray, path: PathLike) -> None:
    _write_json(fit_to_dict(fit, s1), path)
    logger.info(f"💾 Fit (lambda={fit.lambda_:.4g}, KKT {fit.kkt_residual:.2e}) written to {path}")


def load_fit(path: PathLike) -> tuple[MpleFit, np.ndarray]:
    raw = _read_json(path)
    try:
        fit = MpleFit(
            theta_tilde=np.asarray(raw["theta_tilde"], dtype=float),
            lambda_=float(raw["lambda"]),
            iterations=int(raw["iterations"]),
            objective=float(raw["objective"]),
            kkt_residual=float(raw["kkt_residual"]),
            converged=bool(raw["converged"]),
            n_s1=len(raw["s1"]),
        )
    except KeyError as e:
        raise ArgumentError(f"{path}: missing field {e}") from e
    return fit, np.asarray(raw["s1"], dtype=np.int64)


def to_jsonable(obj):
    """Convert numpy scalars and arrays for json."""
    if isinstance(obj, dict):
        return {k: to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def save_report(report: Union[dict, list], path: PathLike) -> None:
    _write_json(to_jsonable(report), path)
    logger.info(f"💾 Inference report written to {path}")


def write_table(rows: list[dict], path: PathLike) -> pd.DataFrame:
    """Experiment table CSV with the fixed column order."""
    frame = pd.DataFrame(rows, columns=TABLE_COLUMNS)
    frame.to_csv(path, index=False, float_format="%.6f")
    logger.info(f"💾 {len(frame)} table row(s) written to {path}")
    return frame


def read_table(path: PathLike) -> pd.DataFrame:
    frame = _read_csv(path)
    missing = [c for c in TABLE_COLUMNS if c not in frame.columns]
    if missing:
        raise ArgumentError(f"{path}: missing table columns {missing}")
    return frame[TABLE_COLUMNS]
