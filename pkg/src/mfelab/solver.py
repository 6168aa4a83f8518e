"""Critical points of the mean field functional.

Three drivers:

* :func:`minimize` for the coercive range (both parameters at most 8 pi),
* :func:`minmax_solve` for ``rho1`` between ``8 k pi`` and ``8 (k+1) pi``: the
  explicit cone ``s * phi_{sigma, lambda_bar}`` over sampled barycenters gives
  a min-max seed, which a trust-region Newton iteration on the residual
  turns into a critical point,
* :func:`continue_in_t` for the scaled family ``(t rho1, t rho2)``.

Only the final residual is claimed to be accurate.  The reported min-max level
is the maximum of the energy over the sampled cone, an upper estimate.
"""
from __future__ import annotations

import io
import csv
import itertools
import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .barycenter import BarycenterMeasure, test_function
from .functional import (
    EIGHT_PI,
    MFEParams,
    energy,
    hessian_dense,
    normalize_exp,
    random_low_mode_fields,
    residual,
)
from .operators import DiscreteOperators, low_eigenpairs
from .surface import farthest_point_sample

logger = logging.getLogger(__name__)

DENSE_LIMIT = 4000
TRIVIAL_TOL = 1e-6


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("MFE_THREADS", "")))
    except ValueError:
        return os.cpu_count() or 1


def classify_regime(p: MFEParams):
    """Return ``(label, k)`` with label in subcritical / supercritical / boundary."""
    r1, r2 = p.effective
    for r in (r1, r2):
        if r > 0 and math.isclose(r / EIGHT_PI, round(r / EIGHT_PI), rel_tol=0, abs_tol=1e-12):
            return "boundary", int(round(r1 / EIGHT_PI)) if r1 > 0 else 0
    if r1 < EIGHT_PI and r2 < EIGHT_PI:
        return "subcritical", 0
    return "supercritical", max(0, int(math.floor(r1 / EIGHT_PI)))


@dataclass
class SolveReport:
    u: np.ndarray
    energy: float
    residual_norm: float
    iterations: int
    converged: bool
    regime: str
    params: MFEParams
    tol: float
    method: str = "minimize"
    minmax_level: float | None = None
    trivial_flag: bool = False
    k: int | None = None
    lambda_bar: float | None = None
    L: float | None = None
    boundary_max: float | None = None
    bracket_ok: bool | None = None
    notes: list = field(default_factory=list)
    log: list = field(default_factory=list)

    def to_dict(self, include_field: bool = False) -> dict:
        d = {
            "energy": self.energy,
            "residual_norm": self.residual_norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "regime": self.regime,
            "rho1": self.params.rho1,
            "rho2": self.params.rho2,
            "t": self.params.t,
            "tol": self.tol,
            "method": self.method,
            "minmax_level": self.minmax_level,
            "trivial_flag": self.trivial_flag,
            "k": self.k,
            "lambda_bar": self.lambda_bar,
            "L": self.L,
            "boundary_max": self.boundary_max,
            "bracket_ok": self.bracket_ok,
            "notes": list(self.notes),
            "u_max": float(np.max(self.u)),
            "u_min": float(np.min(self.u)),
        }
        if include_field:
            d["u"] = [float(x) for x in self.u]
        return d

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "energy", "residual_norm"])
        for row in self.log:
            w.writerow([row[0], repr(row[1]), repr(row[2])])
        return buf.getvalue()


def _finish(ops, u, p, its, tol, log, regime, method, **extra) -> SolveReport:
    u = normalize_exp(ops, u)
    r = residual(ops, u, p)
    rn = ops.mass_norm(r)
    trivial = float(np.max(np.abs(u - ops.mean(u)))) < TRIVIAL_TOL
    return SolveReport(
        u=u,
        energy=energy(ops, u, p),
        residual_norm=rn,
        iterations=its,
        converged=bool(rn < tol),
        regime=regime,
        params=p,
        tol=tol,
        method=method,
        trivial_flag=trivial,
        log=log,
        **extra,
    )


# -- Newton machinery ------------------------------------------------

class _Spectrum:
    """Eigen-decomposition of the mass-scaled Hessian ``M^-1/2 H M^-1/2``."""

    def __init__(self, ops, u, p):
        H = hessian_dense(ops, u, p)
        self.s = 1.0 / np.sqrt(ops.mass)
        Ht = H * self.s[:, None] * self.s[None, :]
        self.lam, self.V = np.linalg.eigh(0.5 * (Ht + Ht.T))
        self.cut = 1e-10 * max(1.0, float(np.abs(self.lam).max()))

    def coefficients(self, g):
        return self.V.T @ (g * self.s)

    def newton(self, coef, mu=0.0):
        lam = self.lam
        if mu == 0.0:
            inv = np.where(np.abs(lam) > self.cut, 1.0 / np.where(lam == 0, 1, lam), 0.0)
        else:
            inv = lam / (lam**2 + mu)
        return -(self.V @ (inv * coef)) * self.s

    def descent(self, coef, floor):
        inv = 1.0 / np.maximum(np.abs(self.lam), floor)
        return -(self.V @ (inv * coef)) * self.s


def _mnorm(ops, d):
    return ops.mass_norm(d)


def _lm_step(eig, coef, ops, radius):
    """Newton step, or the Levenberg-Marquardt step of mass-norm ``radius``."""
    d = eig.newton(coef)
    if _mnorm(ops, d) <= radius:
        return d
    lo, hi = 0.0, 1.0
    while _mnorm(ops, eig.newton(coef, hi)) > radius:
        lo, hi = hi, hi * 10.0
        if hi > 1e30:
            break
    for _ in range(60):
        mid = math.sqrt(max(lo, 1e-300) * hi) if lo > 0 else hi / 10.0
        if _mnorm(ops, eig.newton(coef, mid)) > radius:
            lo = mid
        else:
            hi = mid
        if lo > 0 and hi / lo < 1.01:
            break
    return eig.newton(coef, hi)


def _sparse_newton(ops, u, p, g):
    """Newton direction for large meshes via MINRES on the Hessian operator."""
    from .functional import _centered, _densities

    w = _centered(ops, u)
    r1, r2 = p.effective
    d1, d2 = _densities(ops, w)
    m1, m2 = ops.mass * d1, ops.mass * d2
    K = ops.stiffness
    diag = r1 * m1 + r2 * m2

    def mv(x):
        return K @ x - diag * x + r1 * m1 * (m1 @ x) + r2 * m2 * (m2 @ x) + ops.mass * (ops.mass @ x)

    A = spla.LinearOperator(K.shape, matvec=mv, dtype=float)
    d, _ = spla.minres(A, -g, rtol=1e-10, maxiter=5 * ops.n)
    return d - ops.mean(d)


def newton_solve(ops, u, p, tol=1e-8, max_iter=60, radius=None, log=None, it0=0):
    """Trust-region Newton iteration driving the residual mass-norm to ``tol``.

    The merit function is the residual norm, so the iteration converges to
    saddle points as readily as to minima.  Returns ``(u, iterations)``.
    """
    u = np.array(u, dtype=float)
    u -= ops.mean(u)
    r = residual(ops, u, p)
    rn = ops.mass_norm(r)
    radius = radius if radius is not None else max(1.0, 0.5 * float(np.max(np.abs(u))))
    it = 0
    while rn >= tol and it < max_iter:
        it += 1
        g = ops.mass * r
        if ops.n <= DENSE_LIMIT:
            eig = _Spectrum(ops, u, p)
            coef = eig.coefficients(g)
        accepted = False
        for _ in range(30):
            if ops.n <= DENSE_LIMIT:
                d = _lm_step(eig, coef, ops, radius)
            else:
                d = _sparse_newton(ops, u, p, g)
                n = _mnorm(ops, d)
                if n > radius:
                    d *= radius / n
            trial = u + d
            trial -= ops.mean(trial)
            r_t = residual(ops, trial, p)
            rn_t = ops.mass_norm(r_t)
            if np.isfinite(rn_t) and rn_t < rn * (1 - 1e-4):
                step = _mnorm(ops, d)
                if rn_t < 0.5 * rn and step >= 0.99 * radius:
                    radius *= 2.0
                u, r, rn = trial, r_t, rn_t
                accepted = True
                break
            radius *= 0.25
        if log is not None:
            log.append((it0 + it, energy(ops, u, p), rn))
        if not accepted:
            break
    return u, it


def _sobolev_factor(ops):
    A = (ops.stiffness + sparse.diags(ops.mass)).tocsc()
    return spla.splu(A)


def minimize(
    ops: DiscreteOperators,
    p: MFEParams,
    u0=None,
    tol: float = 1e-8,
    max_iter: int = 2000,
    newton: bool = True,
    armijo: float = 1e-4,
) -> SolveReport:
    """Descend the energy from ``u0`` until the residual mass-norm drops below ``tol``.

    Steps are Sobolev gradient steps with Armijo backtracking; when ``newton``
    is set, a curvature-corrected Newton step (Hessian eigenvalues replaced by
    their absolute values) is tried first and kept only if it lowers the
    energy.  The energy of accepted iterates never increases.  Hitting the
    iteration cap yields ``converged=False``.
    """
    regime, _ = classify_regime(p)
    notes = []
    r1, r2 = p.effective
    if r1 > EIGHT_PI or r2 > EIGHT_PI:
        msg = f"functional unbounded below for rho = ({r1:.6g}, {r2:.6g}); descent may not settle"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    u = np.zeros(ops.n) if u0 is None else np.array(u0, dtype=float)
    u -= ops.mean(u)
    E = energy(ops, u, p)
    r = residual(ops, u, p)
    rn = ops.mass_norm(r)
    log = [(0, E, rn)]
    factor = None
    it = 0
    while rn >= tol and it < max_iter:
        it += 1
        g = ops.mass * r
        slope_ok = False
        if newton and ops.n <= DENSE_LIMIT:
            eig = _Spectrum(ops, u, p)
            floor = max(eig.cut, 1e-8 * float(np.abs(eig.lam).max()))
            d = eig.descent(eig.coefficients(g), floor)
            slope_ok = g @ d < 0
        if not slope_ok:
            if factor is None:
                factor = _sobolev_factor(ops)
            d = -factor.solve(g)
        gd = float(g @ d)
        if gd >= 0:
            break
        alpha, accepted = 1.0, False
        for _ in range(60):
            trial = u + alpha * d
            trial -= ops.mean(trial)
            E_t = energy(ops, trial, p)
            if np.isfinite(E_t) and E_t <= E + armijo * alpha * gd and E_t <= E:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            notes.append("line search stalled")
            break
        u, E = trial, E_t
        r = residual(ops, u, p)
        rn = ops.mass_norm(r)
        log.append((it, E, rn))
    rep = _finish(ops, u, p, it, tol, log, regime, "minimize", notes=notes)
    return rep


# -- the cone over barycenters -------------------------------------------

@dataclass
class MinMaxConfig:
    k: int = 1
    lambda_bar: float | None = None
    L: float | None = None
    sigma_samples: int = 12
    weight_levels: int = 3
    max_sigmas: int = 120
    cone_s_steps: int = 41
    t0: float = 0.1
    newton_tol: float = 1e-8
    max_newton: int = 80
    random_fields: int = 64
    random_amplitude: float = 0.1
    seed: int = 0
    lambda_start: float = 2.0
    lambda_growth: float = 1.2
    allow_out_of_regime: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be a positive integer")
        if self.L is not None and not self.L > 0:
            raise ValueError("L must be positive")
        if not 0 < self.t0 <= 0.2:
            raise ValueError("t0 must lie in (0, 0.2]")


@dataclass
class Cone:
    sigmas: list
    lambda_bar: float
    L: float
    s_grid: np.ndarray
    profiles: np.ndarray  # one bubble profile per sigma

    def point(self, i, s):
        return s * self.profiles[i]


def sample_barycenters(mesh, k, samples, levels, cap):
    """Barycenters on the top stratum: distinct atoms and interior simplex weights."""
    atoms = farthest_point_sample(mesh, max(samples, k))
    if k == 1:
        return [BarycenterMeasure.delta(int(a)) for a in atoms][:cap]
    m = max(levels, k)
    grid = [c for c in itertools.product(range(1, m + 1), repeat=k) if sum(c) == m]
    out = []
    for combo in itertools.combinations(atoms, k):
        for c in grid:
            out.append(BarycenterMeasure(tuple(x / m for x in c), tuple(int(a) for a in combo)))
            if len(out) >= cap:
                return out
    return out


def cone_point(mesh, sigma: BarycenterMeasure, lambda_bar: float, s: float) -> np.ndarray:
    """Point ``s * phi_{sigma, lambda_bar}`` of the explicit cone map."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"cone parameter must lie in [0, 1], got {s}")
    phi = test_function(mesh, sigma, lambda_bar)
    return phi if s == 1.0 else s * phi


def _max_energy(ops, profiles, p):
    with ThreadPoolExecutor(thread_count()) as ex:
        return max(ex.map(lambda phi: energy(ops, phi, p), profiles))


def median_random_energy(ops, p, count, amplitude, seed, modes=30):
    lam, vec = low_eigenpairs(ops, min(modes + 1, ops.n - 1))
    rng = np.random.default_rng(seed)
    fields = random_low_mode_fields(vec, lam, count, rng, amplitude)
    return float(np.median([energy(ops, u, p) for u in fields]))


def build_cone(ops: DiscreteOperators, p: MFEParams, cfg: MinMaxConfig) -> Cone:
    """Sample barycenters, then calibrate ``L`` and ``lambda_bar``.

    ``L`` defaults to ten times the magnitude of the median energy of seeded
    random low-mode fields.  ``lambda_bar`` grows geometrically until the
    largest boundary energy, evaluated at the least supercritical scale
    ``t = 1 - t0``, falls below ``-2 L``.
    """
    mesh = ops.mesh
    sigmas = sample_barycenters(mesh, cfg.k, cfg.sigma_samples, cfg.weight_levels, cfg.max_sigmas)
    p_low = p.scaled(p.t * (1.0 - cfg.t0))
    L = cfg.L
    if L is None:
        L = 10.0 * abs(median_random_energy(ops, p, cfg.random_fields, cfg.random_amplitude, cfg.seed))
        if not L > 0:
            raise ValueError("calibrated L is zero; set L explicitly")
    lam_cap = 10.0 / mesh.mean_edge
    lam = cfg.lambda_bar
    if lam is None:
        lam = cfg.lambda_start
        while True:
            profiles = [test_function(mesh, s, lam) for s in sigmas]
            if _max_energy(ops, profiles, p_low) < -2.0 * L:
                break
            lam *= cfg.lambda_growth
            if lam > lam_cap:
                raise ValueError(
                    f"could not calibrate lambda_bar below the resolution cap {lam_cap:.3g} "
                    f"for L = {L:.4g}; lower L or refine the mesh"
                )
    profiles = np.array([test_function(mesh, s, lam) for s in sigmas])
    return Cone(sigmas, float(lam), float(L), np.linspace(0.0, 1.0, cfg.cone_s_steps), profiles)


def cone_energies(ops, cone: Cone, p: MFEParams) -> np.ndarray:
    """Energy on the sampled cone, shape ``(len(sigmas), len(s_grid))``."""

    def row(phi):
        return [energy(ops, s * phi, p) for s in cone.s_grid]

    with ThreadPoolExecutor(thread_count()) as ex:
        return np.array(list(ex.map(row, cone.profiles)))


def check_regime(p: MFEParams, k: int):
    r1, r2 = p.effective
    ok1 = 8 * k * math.pi < r1 < 8 * (k + 1) * math.pi
    ok2 = r2 < 4 * math.pi
    return ok1 and ok2


def minmax_solve(
    ops: DiscreteOperators,
    p: MFEParams,
    cfg: MinMaxConfig | None = None,
    cone: Cone | None = None,
    u_start=None,
) -> SolveReport:
    """Barycenter-seeded min-max critical point for ``rho1`` in ``(8k pi, 8(k+1) pi)``.

    The maximum of the energy over the sampled cone seeds a trust-region
    Newton iteration on the residual.  If that fails, the solve is retried
    by continuation from ``t = 1 + t0`` down to the requested scale.
    """
    cfg = cfg or MinMaxConfig()
    if not check_regime(p, cfg.k) and not cfg.allow_out_of_regime:
        r1, r2 = p.effective
        raise ValueError(
            f"rho = ({r1:.6g}, {r2:.6g}) outside the min-max regime for k = {cfg.k}; "
            "set allow_out_of_regime to override"
        )
    regime, _ = classify_regime(p)
    cone = cone or build_cone(ops, p, cfg)
    E = cone_energies(ops, cone, p)
    level = float(E.max())
    boundary_max = float(E[:, -1].max())
    bracket = bool(boundary_max < -2.0 * cone.L < -0.5 * cone.L < level)
    extra = dict(
        minmax_level=level,
        k=cfg.k,
        lambda_bar=cone.lambda_bar,
        L=cone.L,
        boundary_max=boundary_max,
        bracket_ok=bracket,
    )
    log = []
    if u_start is None:
        i, j = np.unravel_index(int(np.argmax(E)), E.shape)
        u_start = cone.point(i, cone.s_grid[j])
    u, its = newton_solve(ops, u_start, p, cfg.newton_tol, cfg.max_newton, log=log)
    rep = _finish(ops, u, p, its, cfg.newton_tol, log, regime, "minmax-newton", **extra)
    if rep.converged:
        return rep
    logger.info("Newton from the cone seed stalled at %.3e; trying t-continuation", rep.residual_norm)
    grid = list(np.linspace(1.0 + cfg.t0, 1.0, 5) * p.t)
    chain = continue_in_t(ops, p.scaled(p.t), cfg, [t / p.t for t in grid], cone=cone, _fallback=False)
    if chain.reports and chain.reports[-1].converged and math.isclose(chain.reports[-1].params.t, p.t):
        last = chain.reports[-1]
        last.method = "minmax-continuation"
        for key, val in extra.items():
            setattr(last, key, val)
        last.iterations += its
        last.log = log + last.log
        return last
    rep.notes.append("Newton and t-continuation both failed to converge")
    return rep


# -- continuation in t ------------------------------------------------

@dataclass
class ContinuationResult:
    reports: list
    t_values: list
    alpha: list
    alpha_over_t: list
    monotone_ok: bool
    complete: bool
    identity_error: float | None = None

    def to_dict(self):
        return {
            "t": self.t_values,
            "alpha": self.alpha,
            "alpha_over_t": self.alpha_over_t,
            "monotone_ok": self.monotone_ok,
            "complete": self.complete,
            "reports": [r.to_dict() for r in self.reports],
        }


def scaled_energy_gap(ops, u, p: MFEParams, t: float, t_prime: float):
    """Both sides of ``J_t(u)/t - J_t'(u)/t' = (1/t - 1/t') D(u) / 2``."""
    lhs = energy(ops, u, p.scaled(t)) / t - energy(ops, u, p.scaled(t_prime)) / t_prime
    rhs = 0.5 * (1.0 / t - 1.0 / t_prime) * ops.dirichlet(np.asarray(u) - ops.mean(u))
    return lhs, rhs


def continue_in_t(
    ops: DiscreteOperators,
    p: MFEParams,
    cfg: MinMaxConfig | None = None,
    t_grid=None,
    cone: Cone | None = None,
    _fallback: bool = True,
) -> ContinuationResult:
    """Solve along ``t_grid`` (descending to 1), warm-starting each step.

    The min-max level estimate at each ``t`` is the cone maximum of the scaled
    functional over one fixed cone; ``alpha_t / t`` must be non-increasing in
    ``t`` within 1e-6.  A failed step is bisected once; if the retry also
    fails the partial chain is returned.
    """
    cfg = cfg or MinMaxConfig()
    t_grid = [float(t) for t in (t_grid if t_grid is not None else np.linspace(1 + cfg.t0, 1.0, 5))]
    if any(b >= a for a, b in zip(t_grid, t_grid[1:])):
        raise ValueError("t_grid must be strictly descending")
    if not math.isclose(t_grid[-1], 1.0):
        raise ValueError("t_grid must end at 1")
    if min(t_grid) < 1 - cfg.t0 - 1e-12 or max(t_grid) > 1 + cfg.t0 + 1e-12:
        raise ValueError(f"t_grid must lie in [1 - t0, 1 + t0] with t0 = {cfg.t0}")
    cone = cone or build_cone(ops, p, cfg)

    reports, ts, alpha = [], [], []
    u = None
    sub = replace(cfg, allow_out_of_regime=True)
    complete = True

    def solve_at(t, start):
        q = p.scaled(p.t * t)
        if start is None:
            return minmax_solve(ops, q, sub, cone=cone) if _fallback else _seeded(ops, q, sub, cone)
        v, its = newton_solve(ops, start, q, cfg.newton_tol, cfg.max_newton, log=[])
        return _finish(ops, v, q, its, cfg.newton_tol, [], classify_regime(q)[0], "continuation")

    prev_t = None
    for t in t_grid:
        rep = solve_at(t, u)
        if not rep.converged and prev_t is not None:
            mid = 0.5 * (prev_t + t)
            rmid = solve_at(mid, u)
            if rmid.converged:
                rep = solve_at(t, rmid.u)
        if not rep.converged:
            complete = False
            break
        q = p.scaled(p.t * t)
        a = float(cone_energies(ops, cone, q).max())
        rep.minmax_level = a
        rep.lambda_bar, rep.L, rep.k = cone.lambda_bar, cone.L, cfg.k
        reports.append(rep)
        ts.append(t)
        alpha.append(a)
        u = rep.u
        prev_t = t
    ratio = [a / t for a, t in zip(alpha, ts)]
    # t descends along the chain, so alpha/t must not decrease along it
    mono = all(b >= a - 1e-6 for a, b in zip(ratio, ratio[1:]))
    return ContinuationResult(reports, ts, alpha, ratio, bool(mono), complete)


def _seeded(ops, q, cfg, cone):
    E = cone_energies(ops, cone, q)
    i, j = np.unravel_index(int(np.argmax(E)), E.shape)
    log = []
    v, its = newton_solve(ops, cone.point(i, cone.s_grid[j]), q, cfg.newton_tol, cfg.max_newton, log=log)
    return _finish(ops, v, q, its, cfg.newton_tol, log, classify_regime(q)[0], "continuation")
