"""Interference structures: random geometric graphs, edge lists, Gaussian ensembles."""

from __future__ import annotations

import io
import logging
import math
import os
import re
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)


class GraphError(ValueError):
    pass


class EdgeListParseError(GraphError):
    def __init__(self, lineno: int, line: str, reason: str = "expected two integer node ids"):
        super().__init__(f"line {lineno}: {reason}: {line!r}")
        self.lineno = lineno


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph stored as a symmetric CSR adjacency matrix.

    ``adjacency[i]`` is the sorted neighbor array of node ``i``. Isolated
    nodes are allowed.
    """

    csr: sp.csr_matrix
    metadata: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_edges(cls, n: int, edges: np.ndarray, metadata: dict | None = None) -> "Graph":
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise GraphError("edge endpoint out of range")
        edges = edges[edges[:, 0] != edges[:, 1]]
        rows = np.concatenate([edges[:, 0], edges[:, 1]])
        cols = np.concatenate([edges[:, 1], edges[:, 0]])
        mat = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n)).tocsr()
        # collapse duplicate edges
        mat.data[:] = 1.0
        mat.sort_indices()
        for arr in (mat.data, mat.indices, mat.indptr):
            arr.setflags(write=False)
        return cls(mat, dict(metadata or {}))

    @property
    def n(self) -> int:
        return self.csr.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.csr.indptr)

    @property
    def adjacency(self) -> list[np.ndarray]:
        ip, ix = self.csr.indptr, self.csr.indices
        return [ix[ip[i]:ip[i + 1]] for i in range(self.n)]

    def neighbors(self, i: int) -> np.ndarray:
        return self.csr.indices[self.csr.indptr[i]:self.csr.indptr[i + 1]]

    @property
    def n_edges(self) -> int:
        return int(self.csr.nnz // 2)

    def edge_set(self) -> set[tuple[int, int]]:
        coo = self.csr.tocoo()
        keep = coo.row < coo.col
        return set(zip(coo.row[keep].tolist(), coo.col[keep].tolist()))

    def neighbor_mean(self, x: np.ndarray) -> np.ndarray:
        """Average of ``x`` over each node's neighbors; 0 for isolated nodes."""
        deg = self.degrees
        sums = self.csr @ x
        out = np.zeros_like(sums, dtype=float)
        np.divide(sums, deg, out=out, where=deg > 0)
        return out


@dataclass(frozen=True)
class RggSpec:
    n: int
    target_avg_degree: float
    seed: int | None = None

    @property
    def radius(self) -> float:
        return math.sqrt(self.target_avg_degree / (math.pi * self.n))


def generate_rgg(spec: RggSpec, rng: np.random.Generator | None = None) -> Graph:
    """Random geometric graph on the unit square.

    Nodes are uniform points; i ~ j iff their distance is at most
    ``r = sqrt(kappa / (pi n))``, so ``kappa`` is the expected degree of an
    interior node.
    """
    if spec.n < 1:
        raise GraphError("n must be >= 1")
    if not spec.target_avg_degree > 0:
        raise GraphError("target_avg_degree must be positive")
    r = spec.radius
    if r > math.sqrt(2.0):
        raise GraphError(f"radius {r:.4g} exceeds sqrt(2): complete graph requested")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    pts = rng.random((spec.n, 2))
    pairs = cKDTree(pts).query_pairs(r, output_type="ndarray")
    return Graph.from_edges(spec.n, pairs, {"radius": r, "points": pts})


_SPLIT = re.compile(r"[,\s]+")


def load_edge_list(source: TextIO | Iterable[str] | str | os.PathLike) -> Graph:
    """Parse an edge list; ids are relabeled 0..n-1 by first appearance.

    Self-loop lines are dropped and counted in ``metadata["self_loops_skipped"]``.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as fh:
            return load_edge_list(fh)
    index: dict[int, int] = {}
    edges: list[tuple[int, int]] = []
    self_loops = 0
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p for p in _SPLIT.split(line) if p]
        if len(parts) != 2:
            raise EdgeListParseError(lineno, line)
        try:
            a, b = int(parts[0]), int(parts[1])
        except ValueError:
            raise EdgeListParseError(lineno, line) from None
        if a == b:
            self_loops += 1
            continue
        ia = index.setdefault(a, len(index))
        ib = index.setdefault(b, len(index))
        edges.append((ia, ib))
    if self_loops:
        logger.warning("skipped %d self-loop line(s)", self_loops)
    meta = {"self_loops_skipped": self_loops, "original_ids": np.array(list(index), dtype=np.int64)}
    return Graph.from_edges(len(index), np.array(edges, dtype=np.int64).reshape(-1, 2), meta)


def loads_edge_list(text: str) -> Graph:
    return load_edge_list(io.StringIO(text))


@dataclass(frozen=True, eq=False)
class InterferenceMatrix:
    entries: np.ndarray
    mu: float
    sigma: float

    @property
    def n(self) -> int:
        return self.entries.shape[0]


def sample_gaussian_interference(
    n: int, mu: float, sigma: float, seed=None, rng: np.random.Generator | None = None
) -> InterferenceMatrix:
    """Dense n x n matrix with i.i.d. Normal(mu/n, sigma^2/n) entries."""
    if n < 1:
        raise GraphError("n must be >= 1")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if rng is None:
        rng = np.random.default_rng(seed)
    entries = mu / n + (sigma / math.sqrt(n)) * rng.standard_normal((n, n))
    entries.setflags(write=False)
    return InterferenceMatrix(entries, float(mu), float(sigma))
