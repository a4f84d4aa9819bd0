"""Mixing-matrix construction and validation for gossip averaging.

Builds doubly stochastic mixing matrices for ring, 2D-grid, complete, and
custom graphs using Metropolis-Hastings weights, and exposes the spectral
gap quantity rho = ||W - J||_2 that controls the consensus contraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Graph",
    "MixingMatrix",
    "ValidationReport",
    "TopologyError",
    "build_topology",
    "validate_mixing",
    "spectral_gap",
    "load_edge_list",
]

STOCHASTICITY_TOL = 1e-12


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Graph:
    """Undirected graph on agents 0..n-1 with no self-loops."""

    n: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        if self.n < 2:
            raise TopologyError(f"need at least 2 agents, got n={self.n}")
        norm = set()
        for i, j in self.edges:
            if i == j:
                raise TopologyError(f"self-loop ({i},{i}) not allowed")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise TopologyError(f"edge ({i},{j}) out of range for n={self.n}")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.n, self.n), dtype=bool)
        for i, j in self.edges:
            A[i, j] = A[j, i] = True
        return A

    def is_connected(self) -> bool:
        A = self.adjacency()
        seen = np.zeros(self.n, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            v = stack.pop()
            for w in np.nonzero(A[v])[0]:
                if not seen[w]:
                    seen[w] = True
                    stack.append(int(w))
        return bool(seen.all())


@dataclass(frozen=True)
class MixingMatrix:
    """Doubly stochastic weight matrix with cached spectral gap."""

    n: int
    W: np.ndarray
    rho: float
    graph: Graph = field(repr=False)

    def neighbors(self, i: int) -> list[int]:
        return sorted(j for j in range(self.n)
                      if j != i and self.W[j, i] > 0)

    def out_degree(self, i: int) -> int:
        return len(self.neighbors(i))


@dataclass(frozen=True)
class ValidationReport:
    nonnegative: bool
    row_sum_residual: float
    col_sum_residual: float
    stochastic: bool
    respects_mask: bool
    rho: float
    rho_ok: bool
    eigenvalue_one_simple: bool

    @property
    def all_pass(self) -> bool:
        return (self.nonnegative and self.stochastic and self.respects_mask
                and self.rho_ok and self.eigenvalue_one_simple)


def ring_graph(n: int) -> Graph:
    edges = {(i, (i + 1) % n) for i in range(n)}
    if n == 2:
        edges = {(0, 1)}
    return Graph(n, frozenset(edges))


def grid2d_graph(n: int) -> Graph:
    """Non-toroidal square grid; edge nodes have fewer neighbors."""
    side = round(n ** 0.5)
    if side * side != n:
        raise TopologyError(f"grid2d needs a perfect-square agent count, got n={n}")
    edges = set()
    for r in range(side):
        for c in range(side):
            v = r * side + c
            if c + 1 < side:
                edges.add((v, v + 1))
            if r + 1 < side:
                edges.add((v, v + side))
    return Graph(n, frozenset(edges))


def complete_graph(n: int) -> Graph:
    return Graph(n, frozenset((i, j) for i in range(n) for j in range(i + 1, n)))


def metropolis_weights(graph: Graph) -> np.ndarray:
    """Metropolis-Hastings weights: symmetric, doubly stochastic by construction."""
    n = graph.n
    deg = graph.degrees()
    W = np.zeros((n, n))
    for i, j in graph.edges:
        w = 1.0 / (1.0 + max(deg[i], deg[j]))
        W[i, j] = W[j, i] = w
    np.fill_diagonal(W, 1.0 - W.sum(axis=1))
    return W


def spectral_gap(W: np.ndarray) -> float:
    """Spectral norm of W - J, J = ones/n, via power iteration on (W-J)^T (W-J).

    Deterministic start vector for reproducibility; tolerance 1e-12 on the
    eigenvalue estimate, capped at 10000 iterations.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise TopologyError(f"expected a square matrix, got shape {W.shape}")
    n = W.shape[0]
    M = W - np.ones((n, n)) / n
    A = M.T @ M
    if not np.any(A):
        return 0.0
    v = np.ones(n) + 1e-3 * np.cos(np.arange(n))
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(10000):
        w = A @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        lam_new = float(v @ (A @ v))
        if abs(lam_new - lam) <= 1e-12 * max(1.0, abs(lam_new)):
            lam = lam_new
            break
        lam = lam_new
    return float(np.sqrt(max(lam, 0.0)))


def build_topology(kind: str, n: int, graph: Graph | None = None) -> MixingMatrix:
    """Build a mixing matrix for a named topology or a custom graph.

    kind is one of "ring", "grid2d", "complete", "custom". A custom graph
    must be connected.
    """
    if n < 2:
        raise TopologyError(f"need at least 2 agents, got n={n}")
    if kind == "ring":
        g = ring_graph(n)
    elif kind == "grid2d":
        g = grid2d_graph(n)
    elif kind == "complete":
        g = complete_graph(n)
    elif kind == "custom":
        if graph is None:
            raise TopologyError("custom topology requires a graph")
        if graph.n != n:
            raise TopologyError(f"graph has n={graph.n}, expected {n}")
        g = graph
    else:
        raise TopologyError(f"unknown topology kind {kind!r}")
    if not g.is_connected():
        raise TopologyError("graph is not connected")
    if kind == "complete":
        # uniform weights give W = J exactly, hence rho = 0
        W = np.full((n, n), 1.0 / n)
        rho = 0.0
    else:
        W = metropolis_weights(g)
        rho = spectral_gap(W)
    return MixingMatrix(n=n, W=W, rho=rho, graph=g)


def validate_mixing(W: np.ndarray, graph: Graph | None = None) -> ValidationReport:
    """Check all mixing-matrix conditions; always returns a report."""
    W = np.asarray(W, dtype=float)
    n = W.shape[0]
    nonneg = bool((W >= -STOCHASTICITY_TOL).all())
    row_res = float(np.max(np.abs(W.sum(axis=1) - 1.0)))
    col_res = float(np.max(np.abs(W.sum(axis=0) - 1.0)))
    stochastic = row_res <= STOCHASTICITY_TOL and col_res <= STOCHASTICITY_TOL
    if graph is not None:
        mask = graph.adjacency()
        off = ~np.eye(n, dtype=bool)
        respects = bool(np.all(W[off & ~mask] == 0.0))
    else:
        respects = True
    rho = spectral_gap(W)
    eigvals = np.linalg.eigvals(W)
    n_one = int(np.sum(np.abs(eigvals - 1.0) < 1e-8))
    return ValidationReport(
        nonnegative=nonneg,
        row_sum_residual=row_res,
        col_sum_residual=col_res,
        stochastic=stochastic,
        respects_mask=respects,
        rho=rho,
        rho_ok=rho < 1.0,
        eigenvalue_one_simple=n_one == 1,
    )


def load_edge_list(path) -> Graph:
    """Load a custom graph from a plain-text edge list.

    One "i j" pair per line, 0-indexed; '#' starts a comment.
    """
    edges = []
    max_v = -1
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise TopologyError(f"{path}:{lineno}: expected 'i j', got {line!r}")
            i, j = int(parts[0]), int(parts[1])
            edges.append((i, j))
            max_v = max(max_v, i, j)
    if max_v < 1:
        raise TopologyError(f"{path}: no edges found")
    return Graph(max_v + 1, frozenset(edges))
