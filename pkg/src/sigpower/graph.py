"""Sensor correlation graphs: KNN construction, Laplacian, spectrum and GMRF sampling."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist


@dataclass(frozen=True)
class Graph:
    """Undirected weighted graph with nonnegative weights.

    ``edges`` holds ``(n, k, w)`` triples with ``n < k``; the dense matrices
    are derived from them once at construction.
    """

    n_nodes: int
    edges: tuple[tuple[int, int, float], ...] = ()
    weight_matrix: np.ndarray = field(init=False, repr=False)
    degree_matrix: np.ndarray = field(init=False, repr=False)
    laplacian: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        W = np.zeros((self.n_nodes, self.n_nodes))
        for n, k, w in self.edges:
            if n == k:
                raise ValueError("self-loops are not allowed")
            if w <= 0:
                raise ValueError(f"edge ({n}, {k}) has non-positive weight {w}")
            W[n, k] = W[k, n] = w
        D = np.diag(W.sum(axis=1))
        for name, value in (("weight_matrix", W), ("degree_matrix", D), ("laplacian", D - W)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @classmethod
    def from_weights(cls, W) -> "Graph":
        W = np.asarray(W, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError("weight matrix must be square")
        if not np.allclose(W, W.T) or np.any(W < 0) or np.any(np.diag(W) != 0):
            raise ValueError("weight matrix must be symmetric, nonnegative, zero diagonal")
        rows, cols = np.nonzero(np.triu(W, 1))
        return cls(W.shape[0], tuple((int(n), int(k), float(W[n, k])) for n, k in zip(rows, cols)))


@dataclass(frozen=True)
class GraphSpectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def gft(self, x) -> np.ndarray:
        """Graph Fourier coefficients ``V^T x``."""
        return self.eigenvectors.T @ np.asarray(x, dtype=float)

    def igft(self, alpha) -> np.ndarray:
        return self.eigenvectors @ np.asarray(alpha, dtype=float)


class GmrfModel:
    """Zero-mean Gaussian Markov random field with precision ``L + delta*I``."""

    def __init__(self, graph: Graph, delta: float = 0.01):
        if not delta > 0:
            raise ValueError(f"delta must be positive, got {delta}")
        self.delta = float(delta)
        self.precision = graph.laplacian + self.delta * np.eye(graph.n_nodes)
        self.cholesky_factor = np.linalg.cholesky(self.precision)

    @property
    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.precision)

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        return sample_gmrf(self, rng, size)


def build_knn_graph(positions, k: int, sigma2: float) -> Graph:
    """Symmetric KNN graph with weights ``exp(-distance / sigma2)``.

    An edge is kept if either endpoint is among the other's ``k`` nearest
    neighbours (union symmetrization). Distance ties are broken by node index.
    """
    P = np.asarray(positions, dtype=float)
    if P.ndim != 2 or P.shape[1] != 2:
        raise ValueError("positions must be an (n, 2) array")
    n = P.shape[0]
    if k < 1 or n < k + 1:
        raise ValueError(f"need at least k+1={k + 1} nodes, got {n}")
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    if len(np.unique(P, axis=0)) != n:
        raise ValueError("positions must be distinct")

    dist = cdist(P, P)
    np.fill_diagonal(dist, np.inf)
    neighbours = np.argsort(dist, axis=1, kind="stable")[:, :k]
    adjacent = np.zeros((n, n), dtype=bool)
    adjacent[np.repeat(np.arange(n), k), neighbours.ravel()] = True
    adjacent |= adjacent.T

    rows, cols = np.nonzero(np.triu(adjacent, 1))
    weights = np.exp(-dist[rows, cols] / sigma2)
    return Graph(n, tuple((int(a), int(b), float(w)) for a, b, w in zip(rows, cols, weights)))


def laplacian(g: Graph) -> np.ndarray:
    """Combinatorial Laplacian ``D - W``."""
    return g.laplacian


def smoothness(x, g: Graph) -> float:
    """Graph total variation ``x^T L x``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (g.n_nodes,):
        raise ValueError(f"signal has shape {x.shape}, graph has {g.n_nodes} nodes")
    return max(float(x @ g.laplacian @ x), 0.0)


def smoothness_edge_sum(x, g: Graph) -> float:
    x = np.asarray(x, dtype=float)
    return float(sum(w * (x[n] - x[k]) ** 2 for n, k, w in g.edges))


def eigendecompose(g: Graph) -> GraphSpectrum:
    """Ascending eigenpairs of the Laplacian.

    Each eigenvector is flipped so that its first entry with magnitude above
    1e-12 is positive, which makes the basis reproducible.
    """
    lam, V = scipy.linalg.eigh(g.laplacian)
    V = V.copy()
    for j in range(V.shape[1]):
        nz = np.flatnonzero(np.abs(V[:, j]) > 1e-12)
        if nz.size and V[nz[0], j] < 0:
            V[:, j] = -V[:, j]
    return GraphSpectrum(lam, V)


def sample_gmrf(model: GmrfModel, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw ``x = C^{-T} z`` so that ``x ~ N(0, (L + delta I)^{-1})``.

    With ``size`` given, returns a ``(size, n)`` array of independent draws.
    """
    n = model.precision.shape[0]
    z = rng.standard_normal(n if size is None else (n, size))
    x = scipy.linalg.solve_triangular(model.cholesky_factor, z, lower=True, trans="T")
    return x if size is None else x.T
