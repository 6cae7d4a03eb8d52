"""Spectral (Laplacian eigenvector) and Weisfeiler-Lehman positional encodings."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .graph import Graph

__all__ = [
    "ConvergenceError",
    "LapPE",
    "SpectralDecomposition",
    "WlRoleVocabulary",
    "WlRoles",
    "lap_pe",
    "normalized_laplacian",
    "random_sign_flip",
    "symmetric_eigendecompose",
    "wl_roles",
]

ZERO_EIGENVALUE_TOL = 1e-8
SIGN_TOL = 1e-10
MAX_SWEEPS = 100


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.T


@dataclass(frozen=True, eq=False)
class LapPE:
    """Per-node positional encoding (``n x k``) and the eigenvalues it came from."""

    encodings: np.ndarray
    eigenvalues: np.ndarray

    @property
    def k(self) -> int:
        return self.encodings.shape[1]


@dataclass(frozen=True, eq=False)
class WlRoles:
    role_id: np.ndarray
    num_roles: int
    iterations_used: int


def _adjacency(g: Graph) -> np.ndarray:
    a = np.zeros((g.num_nodes, g.num_nodes))
    a[g.edge_dst, g.edge_src] = 1.0
    np.fill_diagonal(a, 0.0)
    return a


def normalized_laplacian(g: Graph) -> np.ndarray:
    """``I - D^-1/2 A D^-1/2`` over the binary adjacency (self-loops ignored).

    Isolated nodes get a zero row and column.
    """
    a = _adjacency(g)
    if not np.array_equal(a, a.T):
        raise ValueError("normalized_laplacian needs a symmetric edge set; add the reverse edges first")
    deg = a.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    np.divide(1.0, np.sqrt(deg), out=inv_sqrt, where=deg > 0)
    lap = np.diag((deg > 0).astype(np.float64)) - inv_sqrt[:, None] * a * inv_sqrt[None, :]
    return 0.5 * (lap + lap.T)


def symmetric_eigendecompose(m, tol: float = 1e-10, max_sweeps: int = MAX_SWEEPS) -> SpectralDecomposition:
    """Cyclic Jacobi eigendecomposition of a real symmetric matrix.

    Sweeps over every ``(p, q)`` pair with ``p < q``, annihilating the
    off-diagonal entry with a plane rotation, until the largest off-diagonal
    magnitude is at most ``tol``.  Eigenpairs are returned in ascending order.
    """
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {a.shape}")
    if np.max(np.abs(a - a.T)) > 1e-12:
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    v = np.eye(n)

    def off_max():
        return np.max(np.abs(a - np.diag(np.diag(a)))) if n > 1 else 0.0

    sweeps = 0
    while off_max() > tol:
        if sweeps == max_sweeps:
            raise ConvergenceError(
                f"Jacobi did not converge in {max_sweeps} sweeps (max off-diagonal {off_max():.3e})")
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.copysign(1.0, theta) / (abs(theta) + np.hypot(theta, 1.0))
                c = 1.0 / np.hypot(t, 1.0)
                s = t * c
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq

    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return SpectralDecomposition(eigenvalues=w[order], eigenvectors=v[:, order])


def _canonical_sign(vecs: np.ndarray) -> np.ndarray:
    vecs = vecs.copy()
    for c in range(vecs.shape[1]):
        nz = np.flatnonzero(np.abs(vecs[:, c]) > SIGN_TOL)
        if len(nz) and vecs[nz[0], c] < 0:
            vecs[:, c] *= -1.0
    return vecs


def lap_pe(g: Graph, k: int, tol: float = 1e-10) -> LapPE:
    """Eigenvectors of the k smallest non-trivial Laplacian eigenvalues.

    Every eigenvalue below 1e-8 counts as trivial (one per connected
    component).  Missing columns are zero-padded so the width is always
    ``k``; each kept eigenvector is flipped so its first nonzero entry is
    positive.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = g.num_nodes
    enc = np.zeros((n, k))
    if n == 0:
        return LapPE(enc, np.zeros(0))
    spec = symmetric_eigendecompose(normalized_laplacian(g), tol=tol)
    # isolated nodes have a zero Laplacian row, so they also yield zero eigenvalues
    first = int(np.sum(spec.eigenvalues < ZERO_EIGENVALUE_TOL))
    take = min(k, n - first)
    enc[:, :take] = _canonical_sign(spec.eigenvectors[:, first:first + take])
    return LapPE(enc, spec.eigenvalues[first:first + take].copy())


def random_sign_flip(pe: LapPE, rng: np.random.Generator, signs: Optional[np.ndarray] = None) -> LapPE:
    """Multiply each encoding column by an independent random sign."""
    if signs is None:
        signs = rng.choice(np.array([-1.0, 1.0]), size=pe.k)
    return LapPE(pe.encodings * np.asarray(signs, dtype=np.float64)[None, :], pe.eigenvalues)


# ---------------------------------------------------------------------------
# Weisfeiler-Lehman roles


def _neighbor_lists(g: Graph) -> list[np.ndarray]:
    return [np.unique(g.in_neighbors(i)) for i in range(g.num_nodes)]


def _refine(colors: list, neighbors: list, table: dict) -> list:
    out = []
    for i, nb in enumerate(neighbors):
        sig = (colors[i], tuple(sorted(colors[j] for j in nb)))
        out.append(table.setdefault(sig, len(table)))
    return out


def wl_roles(g: Graph, max_iterations: int = 3) -> WlRoles:
    """1-WL colour refinement starting from node degree.

    Stops early once the colour partition is stable.  Role ids are assigned in
    order of first appearance over the node ids, so they never depend on the
    internal colour encoding.
    """
    if max_iterations < 1:
        raise ValueError("max_iterations must be >= 1")
    neighbors = _neighbor_lists(g)
    colors = [len(nb) for nb in neighbors]
    used = 0
    for _ in range(max_iterations):
        new = _refine(colors, neighbors, {})
        used += 1
        if len(set(new)) == len(set(colors)):
            break
        colors = new
    ids: dict = {}
    role = np.array([ids.setdefault(c, len(ids)) for c in colors], dtype=np.int64)
    return WlRoles(role_id=role, num_roles=len(ids), iterations_used=used)


class WlRoleVocabulary:
    """Dataset-wide WL role ids, comparable across graphs.

    Runs a fixed number of refinement rounds with one shared signature table,
    so a role id means the same rooted unfolding in every graph.  Roles first
    seen after :meth:`fit` (or beyond ``max_roles - 1``) map to the last id.
    """

    def __init__(self, max_roles: int = 64, iterations: int = 3):
        self.max_roles = max_roles
        self.iterations = iterations

    def _colors(self, g: Graph, table: dict) -> list:
        neighbors = _neighbor_lists(g)
        colors = [table.setdefault(("deg", len(nb)), len(table)) for nb in neighbors]
        for _ in range(self.iterations):
            colors = _refine(colors, neighbors, table)
        return colors

    def fit(self, graphs) -> "WlRoleVocabulary":
        self.table_ = {}
        self.roles_ = {}
        for g in graphs:
            for c in self._colors(g, self.table_):
                if c not in self.roles_ and len(self.roles_) < self.max_roles - 1:
                    self.roles_[c] = len(self.roles_)
        return self

    def transform_one(self, g: Graph) -> np.ndarray:
        table = dict(self.table_)
        unknown = self.max_roles - 1
        return np.array([self.roles_.get(c, unknown) for c in self._colors(g, table)], dtype=np.int64)

    def transform(self, graphs) -> list[np.ndarray]:
        return [self.transform_one(g) for g in graphs]
