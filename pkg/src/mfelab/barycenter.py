"""Formal barycenters, distances of densities to them, and bubble test functions.

A barycenter of order ``k`` is a probability measure ``sum t_i delta_{x_i}``
with at most ``k`` atoms, here always placed at mesh vertices.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ResolutionError
from .operators import DiscreteOperators, assemble, low_eigenpairs
from .surface import SurfaceMesh, ball_incidence, pairwise_distances

EXACT_TRANSPORT_LIMIT = 2000


@dataclass(frozen=True)
class BarycenterMeasure:
    """Atoms ``(weight, vertex)``; duplicate vertices are merged on construction."""

    weights: tuple
    vertices: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        v = np.asarray(self.vertices, dtype=np.int64).ravel()
        if w.shape != v.shape or w.size == 0:
            raise ValueError("need matching, non-empty weight and vertex lists")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and non-negative")
        if np.any(v < 0):
            raise ValueError("vertex indices must be non-negative")
        total = float(w.sum())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to one, got {total!r}")
        uniq, inv = np.unique(v, return_inverse=True)
        merged = np.zeros(len(uniq))
        np.add.at(merged, inv.ravel(), w)
        merged /= merged.sum()
        object.__setattr__(self, "weights", tuple(float(x) for x in merged))
        object.__setattr__(self, "vertices", tuple(int(x) for x in uniq))

    @classmethod
    def delta(cls, vertex: int) -> "BarycenterMeasure":
        return cls((1.0,), (vertex,))

    @classmethod
    def uniform(cls, vertices) -> "BarycenterMeasure":
        vertices = list(vertices)
        return cls(tuple([1.0 / len(vertices)] * len(vertices)), tuple(vertices))

    @property
    def k(self) -> int:
        return len(self.vertices)

    def to_dict(self) -> dict:
        return {"atoms": [{"w": w, "vertex": v} for w, v in zip(self.weights, self.vertices)]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "BarycenterMeasure":
        atoms = d["atoms"]
        return cls(tuple(a["w"] for a in atoms), tuple(a["vertex"] for a in atoms))


def pair(sigma: BarycenterMeasure, phi) -> float:
    """Action of the measure on a vertex function: ``sum t_i phi(x_i)``."""
    phi = np.asarray(phi, dtype=float)
    return float(np.dot(sigma.weights, phi[list(sigma.vertices)]))


# -- bubbles -----------------------------------------------------------

def test_function(mesh: SurfaceMesh, sigma: BarycenterMeasure, scale: float) -> np.ndarray:
    """Bubble profile ``log sum t_i (lam / (1 + lam^2 d_i^2))^2 - log pi`` at every vertex."""
    lam = float(scale)
    if lam < 1.0:
        raise ValueError(f"bubble scale must be >= 1, got {lam}")
    t = np.asarray(sigma.weights)
    keep = t > 0
    d = pairwise_distances(mesh, np.asarray(sigma.vertices)[keep])
    logs = np.log(t[keep])[:, None] + 2.0 * math.log(lam) - 2.0 * np.log1p((lam * d) ** 2)
    top = logs.max(axis=0)
    return top + np.log(np.exp(logs - top).sum(axis=0)) - math.log(math.pi)


test_function.__test__ = False  # not a pytest test


def bubble_density(ops: DiscreteOperators, sigma: BarycenterMeasure, scale: float) -> np.ndarray:
    """``e^phi`` normalized to unit mass."""
    phi = test_function(ops.mesh, sigma, scale)
    return np.exp(phi - ops.log_int_exp(phi))


@dataclass
class SlopeReport:
    lambdas: list
    mean: list
    log_pos_exp: list
    log_neg_exp: list
    dirichlet: list
    mean_slope: float
    pos_exp_range: float
    neg_exp_slope: float
    dirichlet_coeff: float
    k: int
    grad_lambda_ratio: float
    grad_dmin_ratio: float
    grad_bounds_ok: bool

    def rows(self):
        for i, lam in enumerate(self.lambdas):
            yield {
                "lambda": lam,
                "mean": self.mean[i],
                "log_int_exp": self.log_pos_exp[i],
                "log_int_exp_neg": self.log_neg_exp[i],
                "dirichlet": self.dirichlet[i],
            }

    def summary(self) -> dict:
        return {
            "k": self.k,
            "mean_slope": self.mean_slope,
            "neg_exp_slope": self.neg_exp_slope,
            "dirichlet_coeff": self.dirichlet_coeff,
            "pos_exp_spread": self.pos_exp_range,
            "grad_lambda_ratio": self.grad_lambda_ratio,
            "grad_dmin_ratio": self.grad_dmin_ratio,
            "grad_bounds_ok": self.grad_bounds_ok,
        }


def _slope(x, y):
    return float(np.polyfit(x, y, 1)[0])


def check_resolution(mesh: SurfaceMesh, lambda_grid, max_lambda_h: float = 10.0):
    lams = np.asarray(lambda_grid, dtype=float)
    if lams.size < 2:
        raise ResolutionError("lambda grid needs at least two values")
    if np.any(np.diff(lams) <= 0):
        raise ResolutionError("lambda grid must be strictly ascending")
    if lams[0] < 1.0:
        raise ResolutionError("bubble scales must be >= 1")
    if lams[-1] / lams[0] < 10.0 * (1 - 1e-12):
        raise ResolutionError(
            f"lambda grid spans {lams[-1] / lams[0]:.3g}x; at least one decade is needed"
        )
    h = mesh.mean_edge
    if lams[-1] * h > max_lambda_h:
        raise ResolutionError(
            f"bubble under-resolved: lambda_max * h = {lams[-1] * h:.3g} exceeds {max_lambda_h} "
            f"(h = {h:.4g}); refine the mesh or lower lambda_max"
        )


def asymptotic_slopes(
    mesh: SurfaceMesh,
    sigma: BarycenterMeasure,
    lambda_grid,
    ops: DiscreteOperators | None = None,
    mesh_tol: float = 0.2,
) -> SlopeReport:
    """Fit the growth of the bubble integrals against ``log lambda``.

    Expected limits: mean slope -2, ``log int e^-phi`` slope +2, bounded
    ``log int e^phi``, and Dirichlet coefficient at most ``32 k pi``.

    The pointwise gradient checks use the per-face gradient of the linear
    interpolant.  ``grad_lambda_ratio`` is ``max |grad phi| / lambda`` (the
    analytic bound is 2); ``grad_dmin_ratio`` is ``max |grad phi| d_min / 4``
    over faces not touching an atom, with ``d_min`` the smallest vertex
    distance to the atoms on that face.  Since ``grad phi`` is a multiple of
    ``grad d_min``, each face is divided by ``max(1, |grad d_min|)`` of the
    interpolated distance; this only matters on faces straddling the cut
    locus, where the interpolant of a distance function is steeper than 1.
    Both ratios must stay below ``1 + mesh_tol`` (times 2 for the first).
    """
    check_resolution(mesh, lambda_grid)
    ops = ops if ops is not None else assemble(mesh)
    lams = [float(x) for x in lambda_grid]
    d_atoms = pairwise_distances(mesh, list(sigma.vertices)).min(axis=0)
    face_dmin = d_atoms[mesh.faces].min(axis=1)
    away = face_dmin > 0
    dgrad = np.maximum(1.0, np.linalg.norm(ops.face_gradients(d_atoms), axis=1))
    mean, pos, neg, dir_, gl, gd = [], [], [], [], [], []
    for lam in lams:
        phi = test_function(mesh, sigma, lam)
        mean.append(ops.mean(phi))
        pos.append(ops.log_int_exp(phi))
        neg.append(ops.log_int_exp(-phi))
        dir_.append(ops.dirichlet(phi))
        g = np.linalg.norm(ops.face_gradients(phi), axis=1)
        gl.append(float(g.max() / lam))
        gd.append(float((g[away] * face_dmin[away] / dgrad[away]).max() / 4.0))
    x = np.log(lams)
    ok = max(gl) <= 2.0 * (1 + mesh_tol) and max(gd) <= 1 + mesh_tol
    return SlopeReport(
        lambdas=lams,
        mean=mean,
        log_pos_exp=pos,
        log_neg_exp=neg,
        dirichlet=dir_,
        mean_slope=_slope(x, mean),
        pos_exp_range=float(np.ptp(pos)),
        neg_exp_slope=_slope(x, neg),
        dirichlet_coeff=_slope(x, dir_),
        k=sigma.k,
        grad_lambda_ratio=max(gl),
        grad_dmin_ratio=max(gd),
        grad_bounds_ok=bool(ok),
    )


# -- projection onto barycenters ----------------------------------------

def _validate_density(mesh, f, tol=1e-10):
    f = np.asarray(f, dtype=float)
    if f.shape != (mesh.n_vertices,):
        raise ValueError("density must have one value per vertex")
    if np.any(f < 0):
        raise ValueError("density must be non-negative")
    total = float(np.sum(mesh.vertex_area * f))
    if abs(total - 1.0) > tol:
        raise ValueError(f"density must have unit mass, got {total!r}")
    return f


def default_cluster_radius(mesh: SurfaceMesh) -> float:
    return 0.05 * mesh.diameter


def project_to_barycenters(mesh: SurfaceMesh, f, k: int, r_cluster: float | None = None) -> BarycenterMeasure:
    """Greedy peak picking: ``k`` rounds of "heaviest geodesic ball becomes an atom".

    Each round takes the vertex whose ball of radius ``r_cluster`` holds the most
    remaining mass (lowest index on ties), records that mass as the atom
    weight and removes it.  Weights are renormalized at the end.
    """
    f = _validate_density(mesh, f)
    r = default_cluster_radius(mesh) if r_cluster is None else float(r_cluster)
    B = ball_incidence(mesh, r)
    mu = mesh.vertex_area * f
    weights, atoms = [], []
    for _ in range(int(k)):
        ball_mass = B @ mu
        c = int(np.argmax(ball_mass))
        if ball_mass[c] <= 0:
            break
        atoms.append(c)
        weights.append(float(ball_mass[c]))
        mu = mu.copy()
        mu[B[c].indices] = 0.0
    w = np.asarray(weights)
    return BarycenterMeasure(tuple(w / w.sum()), tuple(atoms))


# -- distance to barycenters -------------------------------------------

@dataclass
class DistanceBracket:
    lower: float
    upper: float
    argmin: BarycenterMeasure
    path: str
    transport_cost: float
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "lower": self.lower,
            "upper": self.upper,
            "argmin": self.argmin.to_dict(),
            "path": self.path,
            "transport_cost": self.transport_cost,
            **self.extra,
        }


def _local_maxima(mesh, f):
    A = mesh.adjacency.tocsr()
    nb_max = np.full(mesh.n_vertices, -np.inf)
    rows = np.repeat(np.arange(mesh.n_vertices), np.diff(A.indptr))
    np.maximum.at(nb_max, rows, f[A.indices])
    return np.nonzero(f >= nb_max)[0]


def _assignment(dist_rows, mu):
    """Nearest-atom transport: cost and the induced atom weights."""
    nearest = np.argmin(dist_rows, axis=0)
    cost = float(np.sum(mu * dist_rows[nearest, np.arange(len(mu))]))
    w = np.bincount(nearest, weights=mu, minlength=len(dist_rows))
    return cost, w


def _best_sets(mesh, f, mu, k, max_candidates, r_cluster):
    """Best atom sets for 1..k, each extending the previous one, then swap-refined."""
    maxima = _local_maxima(mesh, f)
    maxima = maxima[np.argsort(-f[maxima], kind="stable")][:max_candidates]
    best, best_cost = [], math.inf
    history = []
    cache = {}

    def drow(v):
        if v not in cache:
            cache[v] = pairwise_distances(mesh, [v])[0]
        return cache[v]

    def cost_of(s):
        return _assignment(np.array([drow(v) for v in s]), mu)[0]

    for j in range(1, k + 1):
        proj = project_to_barycenters(mesh, f, j, r_cluster).vertices
        pool = [int(v) for v in dict.fromkeys(list(maxima) + list(proj) + best)]
        cur, cur_cost = None, math.inf
        for c in pool:
            if c in best:
                continue
            s = best + [c]
            cst = cost_of(s)
            if cst < cur_cost:
                cur, cur_cost = s, cst
        if cur is None:
            cur, cur_cost = best, best_cost
        proj_cost = cost_of(list(proj))
        if proj_cost < cur_cost:
            cur, cur_cost = list(proj), proj_cost
        improved = True
        while improved and len(cur) > 1:
            improved = False
            for i in range(len(cur)):
                for c in pool:
                    if c in cur:
                        continue
                    s = cur[:i] + [c] + cur[i + 1 :]
                    cst = cost_of(s)
                    if cst < cur_cost - 1e-15:
                        cur, cur_cost, improved = s, cst, True
        best, best_cost = cur, cur_cost
        history.append(best_cost)
    rows = np.array([drow(v) for v in best])
    return best, rows, history


def _transport(mesh, mu, sigma, rows):
    """Cross-check of the transport cost with a general solver."""
    os.environ.setdefault("POT_BACKEND_DISABLE_TENSORFLOW", "1")
    os.environ.setdefault("POT_BACKEND_DISABLE_PYTORCH", "1")
    os.environ.setdefault("POT_BACKEND_DISABLE_JAX", "1")
    os.environ.setdefault("POT_BACKEND_DISABLE_CUPY", "1")
    import ot

    a = mu / mu.sum()
    b = np.asarray(sigma.weights)
    C = np.ascontiguousarray(rows.T)
    if len(a) <= EXACT_TRANSPORT_LIMIT:
        return "network_simplex", float(ot.emd2(a, b, C, numItermax=1_000_000))
    reg = 0.01 * mesh.diameter
    plan = ot.sinkhorn(a, b, C, reg, method="sinkhorn_log", numItermax=500, stopThr=1e-12, warn=False)
    return "entropic", float(np.sum(plan * C))


def _dictionary(ops, eig_count, centers, bump_radius):
    mesh = ops.mesh
    count = min(eig_count, ops.n - 1)
    _, vecs = low_eigenpairs(ops, count)
    funcs = [vecs[:, i] for i in range(1, count)]
    for c in centers:
        d = pairwise_distances(mesh, [c])[0]
        funcs.append(np.where(d < bump_radius, 0.5 * (1 + np.cos(np.pi * d / bump_radius)), 0.0))
    return funcs


def dist_to_barycenters(
    mesh: SurfaceMesh,
    f,
    k: int,
    ops: DiscreteOperators | None = None,
    max_candidates: int = 40,
    eig_count: int = 30,
    r_cluster: float | None = None,
    transport_check: bool = True,
) -> DistanceBracket:
    """Bracket the dual-C^1 distance of a density to barycenters of order ``k``.

    ``upper`` is the transport cost from ``f`` to the best candidate measure,
    with weights chosen optimally for its atom positions (every vertex sends
    its mass to the nearest atom, which is an exact optimal transport plan for
    those weights).  Any test function with C^1 norm at most one is
    1-Lipschitz and pairs to zero with constants, so this dominates the
    distance.  ``lower`` maximizes the pairing defect over a finite dictionary
    (low eigenfunctions, smooth bumps at the atoms, and the distance-to-atoms
    potential), each scaled so that both its C^1 norm and its Lipschitz
    constant against the atoms are at most one; hence ``lower <= upper``.
    """
    f = _validate_density(mesh, f)
    if int(k) < 1:
        raise ValueError("k must be at least 1")
    ops = ops if ops is not None else assemble(mesh)
    mu = mesh.vertex_area * f
    atoms, rows, history = _best_sets(mesh, f, mu, int(k), max_candidates, r_cluster)
    upper, w = _assignment(rows, mu)
    w = w / w.sum()
    sigma = BarycenterMeasure(tuple(w), tuple(atoms))
    rows = pairwise_distances(mesh, list(sigma.vertices))
    path, tcost = ("assignment", upper)
    if transport_check:
        path, tcost = _transport(mesh, mu, sigma, rows)

    funcs = _dictionary(ops, eig_count, sigma.vertices, max(4 * mesh.mean_edge, 0.1 * mesh.diameter))
    potential = rows.min(axis=0)
    funcs.append(potential - 0.5 * potential.max())
    lower = 0.0
    at = list(sigma.vertices)
    for phi in funcs:
        grad = np.linalg.norm(ops.face_gradients(phi), axis=1).max()
        c1 = np.abs(phi).max() + grad
        diff = np.abs(phi[None, :] - phi[at][:, None])
        with np.errstate(divide="ignore", invalid="ignore"):
            lip = np.where(rows > 0, diff / rows, 0.0).max()
        norm = max(c1, lip)
        if norm <= 0:
            continue
        lower = max(lower, abs(float(mu @ phi) - pair(sigma, phi)) / norm)
    return DistanceBracket(lower, upper, sigma, path, tcost, {"upper_by_order": history})
