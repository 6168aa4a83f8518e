"""Discrete Laplace-Beltrami operator on a :class:`SurfaceMesh`.

Scalar fields are plain float arrays with one value per vertex.  Integrals use
the lumped (diagonal) mass, so ``integrate(u) == sum(vertex_area * u)``.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla
from scipy.special import logsumexp

from .errors import AssemblyError, ConvergenceError
from .surface import SurfaceMesh

POISSON_RTOL = 1e-10
DIRECT_SOLVE_LIMIT = 20_000


class DiscreteOperators:
    """Cotangent stiffness and lumped mass of a mesh.

    ``stiffness`` is symmetric positive semi-definite with constants in its
    kernel, and ``u @ stiffness @ u`` is the Dirichlet energy of ``u``.
    ``mass`` holds the vertex areas and sums to one.
    """

    def __init__(self, mesh: SurfaceMesh, stiffness: sparse.csr_matrix, mass: np.ndarray):
        self.mesh = mesh
        self.stiffness = stiffness
        self.mass = mass
        self._lock = threading.Lock()
        self._factor = None
        # log of the computed total mass, so that log_int_exp(0) is exactly 0
        self._log_total = float(logsumexp(np.zeros(len(mass)), b=mass))

    @property
    def n(self) -> int:
        return len(self.mass)

    # -- integrals -----------------------------------------------------
    def integrate(self, u) -> float:
        return float(self.mass @ u)

    def mean(self, u) -> float:
        # total area is one, so the average is the integral
        return float(self.mass @ u)

    def log_int_exp(self, u) -> float:
        """``log(integral of exp(u))`` via a max-shifted log-sum-exp."""
        return float(logsumexp(u, b=self.mass)) - self._log_total

    def dirichlet(self, u) -> float:
        """Discrete Dirichlet energy, the integral of |grad u|^2."""
        return float(u @ (self.stiffness @ u))

    def mass_norm(self, r) -> float:
        return float(np.sqrt(np.sum(self.mass * r * r)))

    def inner(self, u, v) -> float:
        return float(np.sum(self.mass * u * v))

    def laplacian(self, u) -> np.ndarray:
        """Pointwise ``-Delta u`` as ``M^{-1} K u``."""
        return (self.stiffness @ u) / self.mass

    def face_gradients(self, u) -> np.ndarray:
        """Per-face gradient of the piecewise-linear interpolant of ``u``."""
        mesh = self.mesh
        e0, e1, e2 = mesh.face_edge_vectors()
        f = mesh.faces
        n = np.cross(e0, -e2)
        area2 = np.linalg.norm(n, axis=1)
        nhat = n / area2[:, None]
        # grad of hat function at vertex c is (nhat x opposite edge) / (2A)
        g = (
            u[f[:, 0], None] * np.cross(nhat, e1)
            + u[f[:, 1], None] * np.cross(nhat, e2)
            + u[f[:, 2], None] * np.cross(nhat, e0)
        )
        return g / area2[:, None]

    # -- linear solves -------------------------------------------------
    def _pinned_factor(self):
        with self._lock:
            if self._factor is None:
                K = self.stiffness.tocsc()[1:, 1:]
                self._factor = spla.splu(K.tocsc())
            return self._factor

    def solve_rhs(self, b) -> np.ndarray:
        """Mean-zero ``u`` with ``K u = b`` for a load vector ``b`` summing to zero."""
        b = np.asarray(b, dtype=float)
        b = b - self.mass * b.sum()
        if self.n < DIRECT_SOLVE_LIMIT:
            u = np.zeros(self.n)
            u[1:] = self._pinned_factor().solve(b[1:])
        else:
            u = self._cg(b)
        u -= self.mean(u)
        res = np.linalg.norm(self.stiffness @ u - b)
        scale = np.linalg.norm(b)
        if res > POISSON_RTOL * max(scale, 1e-300) and scale > 0:
            raise ConvergenceError("Poisson solve did not reach rtol 1e-10", res / scale)
        return u

    def _cg(self, b):
        # b is orthogonal to the constant kernel, so CG on the singular system
        # stays in the range; the mean is removed by the caller
        K = self.stiffness
        P = sparse.diags(1.0 / K.diagonal())
        u, info = spla.cg(K, b, rtol=POISSON_RTOL * 0.1, atol=0.0, M=P, maxiter=20 * self.n)
        if info != 0:
            res = np.linalg.norm(K @ u - b) / np.linalg.norm(b)
            raise ConvergenceError(f"conjugate gradient stopped (info={info})", res)
        return u

    def to_json(self) -> str:
        return json.dumps(
            {"V": self.n, "nnz": int(self.stiffness.nnz), "total_mass": float(self.mass.sum())},
            sort_keys=True,
        )


def assemble(mesh: SurfaceMesh) -> DiscreteOperators:
    """Cotangent stiffness and barycentric lumped mass."""
    e0, e1, e2 = mesh.face_edge_vectors()
    f = mesh.faces
    area2 = np.linalg.norm(np.cross(e0, -e2), axis=1)
    tiny = 1e-14 * max(float(np.max(area2)), 1e-300)
    if np.any(area2 <= tiny):
        bad = int(np.argmin(area2))
        raise AssemblyError(bad, 0.5 * float(area2[bad]))

    # cot of the angle at each corner, opposite the listed edge
    cot0 = np.sum(-e0 * e2, axis=1) / area2  # corner 0, opposite edge (1, 2)
    cot1 = np.sum(-e1 * e0, axis=1) / area2  # corner 1, opposite edge (2, 0)
    cot2 = np.sum(-e2 * e1, axis=1) / area2  # corner 2, opposite edge (0, 1)
    i = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
    j = np.concatenate([f[:, 2], f[:, 0], f[:, 1]])
    w = 0.5 * np.concatenate([cot0, cot1, cot2])
    V = mesh.n_vertices
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    W = sparse.csr_matrix((w, (lo, hi)), shape=(V, V))
    W = W + W.T
    K = sparse.diags(np.asarray(W.sum(axis=1)).ravel()) - W
    K = sparse.csr_matrix(K)
    K.sort_indices()
    return DiscreteOperators(mesh, K, np.array(mesh.vertex_area))


def solve_poisson(ops: DiscreteOperators, f) -> np.ndarray:
    """Mean-zero solution of ``-Delta u = f`` for mean-zero data ``f``."""
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)):
        raise ValueError("right-hand side has non-finite entries")
    mf = ops.mean(f)
    if abs(mf) > 1e-10:
        raise ValueError(f"right-hand side must have mean zero, got {mf:.3e}")
    if not np.any(f):
        return np.zeros(ops.n)
    return ops.solve_rhs(ops.mass * f)


@dataclass(frozen=True)
class GreenColumn:
    source: int
    values: np.ndarray


def green_column(ops: DiscreteOperators, x: int) -> GreenColumn:
    """Column ``G(x, .)`` of the mean-zero Green function: ``-Delta G = delta_x - 1``."""
    if not 0 <= int(x) < ops.n:
        raise IndexError(f"vertex {x} out of range")
    b = -ops.mass.copy()
    b[x] += 1.0
    return GreenColumn(int(x), ops.solve_rhs(b))


def low_eigenpairs(ops: DiscreteOperators, count: int):
    """Lowest ``count`` generalized eigenpairs of (stiffness, mass).

    Returns ``(eigenvalues, vectors)`` with vectors as columns, ascending and
    mass-orthonormal.  The sign of each vector is fixed so that its entry of
    largest magnitude is positive.
    """
    count = int(count)
    if count < 1:
        raise ValueError("count must be at least 1")
    n = ops.n
    if count >= n:
        raise ValueError(f"count {count} must be smaller than the vertex count {n}")
    K, m = ops.stiffness, ops.mass
    if n <= 600:
        s = 1.0 / np.sqrt(m)
        A = (K.toarray() * s[:, None]) * s[None, :]
        lam, Y = np.linalg.eigh(A)
        lam, vec = lam[:count], Y[:, :count] * s[:, None]
    else:
        shift = -1e-3 * float(K.diagonal().mean() / m.mean()) / n
        v0 = np.cos(np.arange(n) * 0.7311) + 1.0
        try:
            lam, vec = spla.eigsh(
                K.tocsc(), k=count, M=sparse.diags(m).tocsc(), sigma=shift, which="LM", v0=v0, tol=1e-12
            )
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceError("eigensolver did not converge", float("nan")) from exc
        order = np.argsort(lam)
        lam, vec = lam[order], vec[:, order]
    norms = np.sqrt(np.sum(m[:, None] * vec * vec, axis=0))
    vec = vec / norms
    idx = np.argmax(np.abs(vec), axis=0)
    vec = vec * np.sign(vec[idx, np.arange(vec.shape[1])])
    lam = np.maximum(lam, 0.0)
    return lam, vec


def eigen_report(values) -> str:
    return json.dumps({"eigenvalues": [float(v) for v in values]})
