"""Road graph construction, normalized Laplacian, spectral basis and hop masks."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError


@dataclass
class RoadGraph:
    n_nodes: int
    adjacency: np.ndarray
    kind: str = "graph"
    grid: tuple | None = None
    edges: list = field(default_factory=list)

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=np.float64)
        if self.adjacency.shape != (self.n_nodes, self.n_nodes):
            raise InputError(f"adjacency shape {self.adjacency.shape} does not match n_nodes={self.n_nodes}")
        if not np.isin(self.adjacency, (0.0, 1.0)).all():
            raise InputError("adjacency must be binary")

    @property
    def n_edges(self):
        return int(self.adjacency.sum())


@dataclass
class SpectralBasis:
    u_spe: np.ndarray
    eigenvalues: np.ndarray

    @property
    def k(self):
        return self.u_spe.shape[1]


@dataclass
class AttentionMasks:
    m_spat: np.ndarray
    m_geo: np.ndarray


def build_adjacency(n_nodes=None, edges=None, grid=None):
    """Directed binary adjacency from an edge list, or a 4-neighborhood grid.

    ``grid=(rows, cols)`` numbers cells row-major and connects each cell to
    its up/down/left/right neighbors in both directions.
    """
    if grid is not None:
        rows, cols = (int(v) for v in grid)
        if rows <= 0 or cols <= 0:
            raise InputError(f"grid dimensions must be positive, got {rows}x{cols}")
        n = rows * cols
        edge_list = []
        for r in range(rows):
            for c in range(cols):
                i = r * cols + c
                if c + 1 < cols:
                    edge_list += [(i, i + 1), (i + 1, i)]
                if r + 1 < rows:
                    edge_list += [(i, i + cols), (i + cols, i)]
        g = build_adjacency(n, edge_list)
        g.kind, g.grid = "grid", (rows, cols)
        return g

    if n_nodes is None or n_nodes < 1:
        raise InputError("n_nodes must be a positive count")
    a = np.zeros((n_nodes, n_nodes))
    edge_list = []
    for src, dst in edges or ():
        src, dst = int(src), int(dst)
        if not (0 <= src < n_nodes and 0 <= dst < n_nodes):
            raise InputError(f"edge ({src},{dst}) out of range for {n_nodes} nodes")
        a[src, dst] = 1.0
        edge_list.append((src, dst))
    return RoadGraph(n_nodes, a, "graph", None, edge_list)


def ring_graph(n_nodes):
    """Undirected ring (both directions stored)."""
    if n_nodes < 2:
        return build_adjacency(n_nodes, [])
    edges = []
    for i in range(n_nodes):
        j = (i + 1) % n_nodes
        edges += [(i, j), (j, i)]
    return build_adjacency(n_nodes, sorted(set(edges)))


def normalized_laplacian(graph, self_loops=True):
    """L = I - D^-1/2 A_sym D^-1/2 with A_sym = max(A, A^T) (+ I).

    Without self-loops an isolated node keeps degree clamped to 1 so no
    division by zero can occur.
    """
    adj = graph.adjacency if isinstance(graph, RoadGraph) else np.asarray(graph, dtype=np.float64)
    a = np.maximum(adj, adj.T)
    n = a.shape[0]
    if self_loops:
        a = np.maximum(a, np.eye(n))
    deg = a.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(np.maximum(deg, 1.0))
    lap = np.eye(n) - inv_sqrt[:, None] * a * inv_sqrt[None, :]
    return 0.5 * (lap + lap.T)


def _fix_signs(vecs, tol=1e-12):
    vecs = vecs.copy()
    for j in range(vecs.shape[1]):
        col = vecs[:, j]
        nz = np.flatnonzero(np.abs(col) > tol)
        if nz.size and col[nz[0]] < 0:
            vecs[:, j] = -col
    return vecs


def topk_eigenvectors(lap, k, order="smallest"):
    """k eigenpairs of a symmetric matrix, eigenvalues ascending.

    ``order="smallest"`` (default) keeps the low-frequency end of the
    spectrum, ``"largest"`` the high end.  Each eigenvector is sign-fixed so
    its first nonzero component is positive.
    """
    lap = np.asarray(lap, dtype=np.float64)
    n = lap.shape[0]
    if lap.ndim != 2 or lap.shape[1] != n:
        raise InputError(f"expected a square matrix, got shape {lap.shape}")
    if not np.allclose(lap, lap.T, rtol=0.0, atol=1e-10):
        raise InputError("matrix is not symmetric within 1e-10")
    if not 1 <= k <= n:
        raise InputError(f"k={k} outside [1, {n}]")
    vals, vecs = np.linalg.eigh(0.5 * (lap + lap.T))
    if order == "smallest":
        sel = slice(0, k)
    elif order == "largest":
        sel = slice(n - k, n)
    else:
        raise InputError(f"unknown eigen order {order!r}")
    return SpectralBasis(_fix_signs(vecs[:, sel]), vals[sel].copy())


def hop_distances(graph):
    """All-pairs undirected hop distance by BFS; unreachable pairs are inf."""
    adj = graph.adjacency if isinstance(graph, RoadGraph) else np.asarray(graph)
    und = (adj + adj.T) > 0
    n = und.shape[0]
    neighbors = [np.flatnonzero(und[i]) for i in range(n)]
    dist = np.full((n, n), np.inf)
    for s in range(n):
        dist[s, s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v in neighbors[u]:
                if dist[s, v] == np.inf:
                    dist[s, v] = dist[s, u] + 1
                    queue.append(v)
    return dist


def hop_masks(graph, d_spat=1, d_geo=3):
    if not 1 <= d_spat <= d_geo:
        raise InputError(f"need 1 <= d_spat <= d_geo, got d_spat={d_spat}, d_geo={d_geo}")
    dist = hop_distances(graph)
    return AttentionMasks((dist <= d_spat).astype(np.float64), (dist <= d_geo).astype(np.float64))
