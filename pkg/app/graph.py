"""
Hypergraph structures for the network response model.

This module handles:
- The weighted Hypergraph type (canonical sorted hyperedges, cached incidence)
- Neighborhoods and the bounded-degree report
- Greedy strong independent sets and their random halving
- Generators: 2d lattice, random regular graphs, Ising weight conversion

Vertex ids are dense 0-based integers. All objects are immutable after
construction and safe to share read-only across workers.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from app.errors import ArgumentError, GenerationFailureError, InsufficientDataError

logger = logging.getLogger(__name__)

# Attempt budget for random regular graph generation
MAX_GENERATION_ATTEMPTS = 100_000


class Hypergraph:
    """
    Weighted hypergraph G_n = ([n], E) with interaction weights g_e >= 0.

    Hyperedges are stored as strictly increasing vertex tuples so duplicate
    detection is exact. The per-vertex incidence index and the sparse
    incidence matrix are derived lazily and cached.
    """

    def __init__(self, n: int, edges: Iterable[Sequence[int]] = (), weights: Optional[Sequence[float]] = None):
        """
        Build and validate a hypergraph.

        Args:
            n: Number of vertices
            edges: Iterable of vertex-id sequences, each of length >= 2
            weights: Per-edge weights g_e (default: all 1)

        Raises:
            ArgumentError: out-of-range ids, repeated vertices within an edge,
                duplicate edges, negative or non-finite weights
        """
        if int(n) != n or n < 0:
            raise ArgumentError(f"Vertex count must be a non-negative integer, got {n}")
        self._n = int(n)

        canonical: list[tuple[int, ...]] = []
        seen: set[tuple[int, ...]] = set()
        for raw in edges:
            verts = tuple(sorted(int(v) for v in raw))
            if len(verts) < 2:
                raise ArgumentError(f"Hyperedge {tuple(raw)} must contain at least 2 vertices")
            if len(set(verts)) != len(verts):
                raise ArgumentError(f"Hyperedge {tuple(raw)} repeats a vertex")
            if verts[0] < 0 or verts[-1] >= self._n:
                raise ArgumentError(f"Hyperedge {tuple(raw)} has a vertex outside [0, {self._n})")
            if verts in seen:
                raise ArgumentError(f"Duplicate hyperedge {verts}")
            seen.add(verts)
            canonical.append(verts)
        self._edges = tuple(canonical)

        if weights is None:
            w = np.ones(len(self._edges))
        else:
            w = np.asarray(weights, dtype=float).reshape(-1)
        if w.shape[0] != len(self._edges):
            raise ArgumentError(f"Got {w.shape[0]} weights for {len(self._edges)} edges")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ArgumentError("Edge weights must be finite and non-negative")
        w = w.copy()
        w.setflags(write=False)
        self._weights = w

    @property
    def n(self) -> int:
        return self._n

    @property
    def edges(self) -> tuple[tuple[int, ...], ...]:
        return self._edges

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @property
    def num_edges(self) -> int:
        return len(self._edges)

    def is_pairwise(self) -> bool:
        return all(len(e) == 2 for e in self._edges)

    def with_weights(self, weights: Sequence[float]) -> "Hypergraph":
        """Same vertex and edge sets, new weights."""
        return Hypergraph(self._n, self._edges, weights)

    def rebuild_incidence(self) -> tuple[tuple[int, ...], ...]:
        """Recompute the per-vertex incident edge index from the edge list."""
        per_vertex: list[list[int]] = [[] for _ in range(self._n)]
        for idx, verts in enumerate(self._edges):
            for v in verts:
                per_vertex[v].append(idx)
        return tuple(tuple(lst) for lst in per_vertex)

    @cached_property
    def incidence(self) -> tuple[tuple[int, ...], ...]:
        return self.rebuild_incidence()

    @cached_property
    def edge_ptr(self) -> np.ndarray:
        """CSR row pointer over the flattened edge vertex list."""
        sizes = np.fromiter((len(e) for e in self._edges), dtype=np.int64, count=len(self._edges))
        return np.concatenate(([0], np.cumsum(sizes))).astype(np.int64)

    @cached_property
    def edge_vertices(self) -> np.ndarray:
        if not self._edges:
            return np.zeros(0, dtype=np.int64)
        return np.fromiter((v for e in self._edges for v in e), dtype=np.int64)

    @cached_property
    def vertex_ptr(self) -> np.ndarray:
        """CSR row pointer over the flattened incidence index."""
        sizes = np.fromiter((len(inc) for inc in self.incidence), dtype=np.int64, count=self._n)
        return np.concatenate(([0], np.cumsum(sizes))).astype(np.int64)

    @cached_property
    def vertex_edges(self) -> np.ndarray:
        if not self._edges:
            return np.zeros(0, dtype=np.int64)
        return np.fromiter((e for inc in self.incidence for e in inc), dtype=np.int64)

    @cached_property
    def incidence_matrix(self) -> sp.csr_matrix:
        """Sparse n x |E| 0/1 matrix, entry (i, e) = 1 iff i in e."""
        rows = self.edge_vertices
        cols = np.repeat(np.arange(self.num_edges), np.diff(self.edge_ptr))
        data = np.ones(rows.shape[0])
        return sp.csr_matrix((data, (rows, cols)), shape=(self._n, self.num_edges))

    @cached_property
    def neighbor_lists(self) -> tuple[np.ndarray, ...]:
        adjacency: list[set[int]] = [set() for _ in range(self._n)]
        for verts in self._edges:
            for v in verts:
                adjacency[v].update(verts)
        for v in range(self._n):
            adjacency[v].discard(v)
        return tuple(np.array(sorted(a), dtype=np.int64) for a in adjacency)

    def __repr__(self) -> str:
        return f"Hypergraph(n={self._n}, edges={self.num_edges})"


@dataclass(frozen=True)
class DegreeReport:
    """Bounded-degree quantities: max |N_i| and max_i sum_{e ni i} g_e."""
    max_neighbors: int
    max_field_sum: float


@dataclass(frozen=True)
class VertexSplit:
    """Strong independent set S split into S1 (estimation) and S2 (debiasing)."""
    s_full: np.ndarray
    s1: np.ndarray
    s2: np.ndarray


def _check_vertex(h: Hypergraph, i: int) -> int:
    if not 0 <= int(i) < h.n:
        raise ArgumentError(f"Vertex id {i} outside [0, {h.n})")
    return int(i)


def neighbors(h: Hypergraph, i: int) -> frozenset[int]:
    """
    Neighborhood N_i = { j != i : some edge contains both i and j }.

    Raises:
        ArgumentError: if i is out of range
    """
    i = _check_vertex(h, i)
    return frozenset(int(j) for j in h.neighbor_lists[i])


def field_sums(h: Hypergraph) -> np.ndarray:
    """Per-vertex sum of incident edge weights."""
    if h.num_edges == 0:
        return np.zeros(h.n)
    return np.asarray(h.incidence_matrix @ h.weights).reshape(-1)


def degree_report(h: Hypergraph) -> DegreeReport:
    """Max neighborhood size and max incident weight sum over vertices."""
    if h.n == 0:
        return DegreeReport(0, 0.0)
    max_neighbors = max(len(nb) for nb in h.neighbor_lists)
    return DegreeReport(int(max_neighbors), float(field_sums(h).max()))


def check_assumptions(h: Hypergraph) -> DegreeReport:
    """
    Degree report plus a warning when the field-sum bound exceeds 1.

    The sampler and estimators stay well-defined; only the asymptotic
    guarantees lapse, so this never raises.
    """
    report = degree_report(h)
    if report.max_field_sum > 1.0:
        logger.warning(
            f"⚠️ Bounded-degree condition violated: max field sum {report.max_field_sum:.4f} > 1 "
            f"(max neighbors {report.max_neighbors})"
        )
    return report


def is_strong_independent(h: Hypergraph, vertices: Iterable[int]) -> bool:
    """True iff every hyperedge contains at most one of the given vertices."""
    mask = np.zeros(h.n, dtype=bool)
    mask[np.asarray(list(vertices), dtype=np.int64)] = True
    return all(int(mask[list(e)].sum()) <= 1 for e in h.edges)


def random_order(n: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded random vertex permutation for the greedy scan."""
    return rng.permutation(n).astype(np.int64)


def greedy_strong_independent_set(h: Hypergraph, order: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    Greedy strong independent set.

    Scans vertices in `order` (ascending id by default) and accepts a vertex
    when none of its neighbors has been accepted. The result meets every
    hyperedge at most once and has size >= floor(n / (Delta + 1)).

    Args:
        h: Hypergraph
        order: Permutation of range(n)

    Returns:
        Sorted array of accepted vertex ids
    """
    if order is None:
        order = np.arange(h.n)
    order = np.asarray(order, dtype=np.int64)
    if order.shape != (h.n,) or not np.array_equal(np.sort(order), np.arange(h.n)):
        raise ArgumentError("Greedy order must be a permutation of range(n)")

    blocked = np.zeros(h.n, dtype=bool)
    accepted: list[int] = []
    nbrs = h.neighbor_lists
    for v in order:
        if blocked[v]:
            continue
        accepted.append(int(v))
        blocked[nbrs[v]] = True

    return np.array(sorted(accepted), dtype=np.int64)


def split_independent_set(s: Sequence[int], rng: np.random.Generator) -> VertexSplit:
    """
    Uniform random split of S into halves; S1 gets the extra vertex when |S| is odd.

    Raises:
        InsufficientDataError: if |S| < 2
    """
    s_full = np.array(sorted(int(v) for v in s), dtype=np.int64)
    if s_full.shape[0] < 2:
        raise InsufficientDataError(f"Need at least 2 vertices to split, got {s_full.shape[0]}")

    shuffled = rng.permutation(s_full)
    k = (s_full.shape[0] + 1) // 2
    return VertexSplit(s_full=s_full, s1=np.sort(shuffled[:k]), s2=np.sort(shuffled[k:]))


def lattice2d(rows: int, cols: int) -> Hypergraph:
    """
    rows x cols grid graph without wraparound, unit weights.

    Vertex (r, c) has id r * cols + c.
    """
    if rows < 2 or cols < 2:
        raise ArgumentError(f"Lattice dimensions must be >= 2, got {rows}x{cols}")

    edges = []
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            if c + 1 < cols:
                edges.append((v, v + 1))
            if r + 1 < rows:
                edges.append((v, v + cols))
    return Hypergraph(rows * cols, edges)


def _rejection_attempt(n: int, delta: int, rng: np.random.Generator) -> Optional[np.ndarray]:
    stubs = np.repeat(np.arange(n, dtype=np.int64), delta)
    pairs = rng.permutation(stubs).reshape(-1, 2)
    a = pairs.min(axis=1)
    b = pairs.max(axis=1)
    if np.any(a == b):
        return None
    keys = a * n + b
    if np.unique(keys).shape[0] != keys.shape[0]:
        return None
    return np.sort(keys)


def _suitable(edges: set, potential_edges: dict) -> bool:
    # Generation has failed if every remaining stub pair is already an edge
    if not potential_edges:
        return True
    for s1 in potential_edges:
        for s2 in potential_edges:
            if s1 == s2:
                break
            a, b = (s1, s2) if s1 < s2 else (s2, s1)
            if (a, b) not in edges:
                return True
    return False


def _pairing_attempt(n: int, delta: int, rng: np.random.Generator) -> Optional[np.ndarray]:
    edges: set[tuple[int, int]] = set()
    stubs = np.repeat(np.arange(n, dtype=np.int64), delta)

    while stubs.size:
        potential_edges: dict[int, int] = defaultdict(int)
        stubs = rng.permutation(stubs)
        for s1, s2 in stubs.reshape(-1, 2):
            a, b = (int(s1), int(s2)) if s1 < s2 else (int(s2), int(s1))
            if a != b and (a, b) not in edges:
                edges.add((a, b))
            else:
                potential_edges[a] += 1
                potential_edges[b] += 1

        if not _suitable(edges, potential_edges):
            return None

        stubs = np.array(
            [node for node, count in potential_edges.items() for _ in range(count)],
            dtype=np.int64,
        )

    return np.sort(np.array([a * n + b for a, b in edges], dtype=np.int64))


def random_regular(
    n: int,
    delta: int,
    rng: np.random.Generator,
    method: str = "rejection",
    max_attempts: int = MAX_GENERATION_ATTEMPTS,
) -> Hypergraph:
    """
    Simple delta-regular graph on n vertices with unit weights.

    Methods:
    - "rejection": configuration model, resampling the whole stub matching
      until it has no self-loop or multi-edge (exactly uniform)
    - "pairing": incremental stub pairing that only re-pairs failed stubs
      (asymptotically uniform, terminates quickly for large delta)

    Raises:
        ArgumentError: n * delta odd, delta >= n, or unknown method
        GenerationFailureError: attempt budget exhausted
    """
    if delta < 0 or delta >= n:
        raise ArgumentError(f"Need 0 <= delta < n, got delta={delta}, n={n}")
    if (n * delta) % 2 != 0:
        raise ArgumentError(f"n * delta must be even, got n={n}, delta={delta}")
    attempt_fn = {"rejection": _rejection_attempt, "pairing": _pairing_attempt}.get(method)
    if attempt_fn is None:
        raise ArgumentError(f"Unknown regular graph method '{method}'")

    if delta == 0:
        return Hypergraph(n)

    for attempt in range(1, max_attempts + 1):
        keys = attempt_fn(n, delta, rng)
        if keys is not None:
            logger.debug(f"🎲 {delta}-regular graph on {n} vertices after {attempt} attempt(s) ({method})")
            return Hypergraph(n, [(int(k // n), int(k % n)) for k in keys])

    raise GenerationFailureError(
        f"No simple {delta}-regular graph on {n} vertices after {max_attempts} attempts ({method})"
    )


def from_ising(h: Hypergraph, beta: float, degree_norm: float) -> Hypergraph:
    """
    Convert a pairwise graph to Ising interaction weights.

    Each edge gets g_ij = 2 * beta * degree_norm, so that the local field
    m_i(y) = sum_j 2 beta (A_n)_ij y_j with A_n = degree_norm * A(G_n).
    Use degree_norm = 1/4 for the lattice and 1/Delta for Delta-regular graphs.
    """
    if not h.is_pairwise():
        raise ArgumentError("Ising conversion requires a pairwise graph")
    if degree_norm <= 0:
        raise ArgumentError(f"degree_norm must be positive, got {degree_norm}")
    return h.with_weights(np.full(h.num_edges, 2.0 * beta * degree_norm))


def edge_products(h: Hypergraph, y: np.ndarray) -> np.ndarray:
    """y_e = prod_{j in e} y_j for every edge."""
    if h.num_edges == 0:
        return np.zeros(0)
    y = np.asarray(y, dtype=float)
    return np.multiply.reduceat(y[h.edge_vertices], h.edge_ptr[:-1])
