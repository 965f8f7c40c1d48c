"""Sparse graph structures and score propagation.

A directed edge list is loaded into a CSR :class:`Graph`, symmetrized and
self-looped into a row-stochastic :class:`NormalizedAdjacency`, and applied
repeatedly to a dense score matrix so every node's row becomes an average
over its closed neighbourhood.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import FormatError

__all__ = [
    "Graph",
    "NormalizedAdjacency",
    "load_edge_list",
    "build_normalized_adjacency",
    "propagate",
]


@dataclass(frozen=True)
class Graph:
    """Directed adjacency in CSR form; duplicate edges are collapsed."""

    num_nodes: int
    row_offsets: np.ndarray
    col_indices: np.ndarray

    @property
    def num_edges(self) -> int:
        return int(self.col_indices.size)

    @classmethod
    def from_edges(cls, num_nodes: int, src, dst) -> "Graph":
        if num_nodes < 1:
            raise ValueError("num_nodes must be positive")
        src = np.asarray(src, dtype=np.int64).ravel()
        dst = np.asarray(dst, dtype=np.int64).ravel()
        if src.size != dst.size:
            raise ValueError("src and dst must have equal length")
        if src.size:
            ids = np.concatenate([src, dst])
            if ids.min() < 0 or ids.max() >= num_nodes:
                bad = ids[(ids < 0) | (ids >= num_nodes)][0]
                raise ValueError(f"node id {bad} outside [0, {num_nodes})")
        # Collapse duplicates and sort by (row, col) in one pass.
        code = np.unique(src * np.int64(num_nodes) + dst)
        rows = code // num_nodes
        cols = code % num_nodes
        offsets = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=num_nodes), out=offsets[1:])
        return cls(num_nodes, offsets, cols)

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (src, dst) arrays in CSR order."""
        src = np.repeat(
            np.arange(self.num_nodes, dtype=np.int64), np.diff(self.row_offsets)
        )
        return src, self.col_indices.copy()


def load_edge_list(path, num_nodes: int) -> Graph:
    """Parse "src dst" lines into a :class:`Graph`.

    Lines starting with '#' and blank lines are skipped; node ids outside
    [0, num_nodes) are rejected with the offending line number.
    """
    src: list[int] = []
    dst: list[int] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.strip()
            if not body or body.startswith("#"):
                continue
            parts = body.split()
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected 'src dst', got {body!r}")
            try:
                s, d = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: non-integer node id in {body!r}") from exc
            if not (0 <= s < num_nodes) or not (0 <= d < num_nodes):
                raise FormatError(f"{path}:{lineno}: node id outside [0, {num_nodes})")
            src.append(s)
            dst.append(d)
    return Graph.from_edges(num_nodes, src, dst)


@dataclass(frozen=True)
class NormalizedAdjacency:
    """Row-stochastic CSR of the symmetrized, self-looped adjacency."""

    num_nodes: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def to_csr(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.values, self.col_indices, self.row_offsets),
            shape=(self.num_nodes, self.num_nodes),
        )

    def row(self, i: int) -> dict[int, float]:
        """Stored entries of row i as {column: weight}."""
        lo, hi = self.row_offsets[i], self.row_offsets[i + 1]
        return dict(
            zip(self.col_indices[lo:hi].tolist(), self.values[lo:hi].tolist())
        )


def build_normalized_adjacency(g: Graph) -> NormalizedAdjacency:
    """Symmetrize, add self-loops, and row-normalize.

    Input edges are mirrored, a self-loop is added to every node (collapsing
    with any pre-existing one), and each row of the resulting binary matrix
    is divided by its entry count, which makes every row sum to one.
    """
    n = g.num_nodes
    loops = np.arange(n, dtype=np.int64)
    src, dst = g.edges()
    rows = np.concatenate([src, dst, loops])
    cols = np.concatenate([dst, src, loops])
    m = sp.coo_matrix(
        (np.ones(rows.size, dtype=np.float64), (rows, cols)), shape=(n, n)
    ).tocsr()
    m.sum_duplicates()
    m.sort_indices()
    m.data[:] = 1.0
    degree = np.diff(m.indptr)
    m.data /= np.repeat(degree, degree)
    return NormalizedAdjacency(
        n,
        m.indptr.astype(np.int64),
        m.indices.astype(np.int64),
        m.data.astype(np.float64),
    )


def propagate(z, adj: NormalizedAdjacency, steps: int) -> np.ndarray:
    """Apply `steps` rounds of neighbourhood averaging to a score matrix.

    Each step multiplies by the row-stochastic adjacency; the input array is
    never modified. `steps=0` returns a copy.
    """
    if steps < 0:
        raise ValueError("steps must be a nonnegative integer")
    out = np.array(z, dtype=np.float64)
    if out.ndim != 2:
        raise ValueError("score matrix must be 2-D")
    if out.shape[0] != adj.num_nodes:
        raise ValueError(
            f"score matrix has {out.shape[0]} rows for a {adj.num_nodes}-node graph"
        )
    if steps == 0:
        return out
    mat = adj.to_csr()
    for _ in range(steps):
        out = mat @ out
    return np.ascontiguousarray(out)
