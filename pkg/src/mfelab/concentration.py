"""Blow-up classification for families of normalized fields.

Given fields ``u_1, ..., u_N`` ordered by a blow-up parameter, points where
``u`` (resp. ``-u``) peaks and keeps growing form ``S1`` (resp. ``S2``).  Local
masses are ``rho_i`` times the share of the normalized density ``e^u / int e^u``
(resp. ``e^-u / int e^-u``) inside a geodesic ball, extrapolated to the limit
of the family.  One-sided points are compared with ``8 pi``; points in both
sets are tested against ``(m1 - m2)^2 = 8 pi (m1 + m2)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from .operators import DiscreteOperators, solve_poisson
from .surface import distances_from

EIGHT_PI = 8.0 * math.pi


@dataclass
class ConcentrationReport:
    alternative: str
    points_S1: list
    points_S2: list
    masses: dict
    quantization_residual: list
    one_sided: list = field(default_factory=list)
    r_mass: float = 0.0
    rho: tuple = (0.0, 0.0)
    decomposition: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rho"] = list(self.rho)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _local_peaks(mesh, w, threshold):
    A = mesh.adjacency.tocsr()
    nb = np.full(mesh.n_vertices, -np.inf)
    rows = np.repeat(np.arange(mesh.n_vertices), np.diff(A.indptr))
    np.maximum.at(nb, rows, w[A.indices])
    return np.nonzero((w >= nb) & (w > threshold))[0]


def _ball_share(ops, w, ball):
    """Share of ``e^w / int e^w`` inside the vertex set ``ball``."""
    return float(np.exp(logsumexp(w[ball], b=ops.mass[ball]) - logsumexp(w, b=ops.mass)))


def _extrapolate(shares, peaks):
    """Linear fit of ``share`` against ``exp(-peak)``, evaluated at zero.

    For a bubble of scale ``lambda`` the missing share outside a fixed ball and
    ``exp(-peak)`` both decay like ``lambda^-2``.
    """
    x = np.exp(-np.asarray(peaks) + np.max(peaks))  # rescaled, the intercept is unaffected
    y = np.asarray(shares)
    if np.ptp(x) < 1e-12 * max(np.max(x), 1.0):
        return float(y[-1])
    slope, intercept = np.polyfit(x, y, 1)
    return float(min(intercept, 1.0))


def _detect(ops, fields, sign, r_mass, growth_min, n_std):
    """Growing peaks of ``sign * u``; returns ``[(vertex, ball, per-member peak)]``."""
    mesh = ops.mesh
    w_last = sign * (fields[-1] - ops.mean(fields[-1]))
    cands = _local_peaks(mesh, w_last, n_std * float(np.std(w_last)))
    cands = cands[np.argsort(-w_last[cands], kind="stable")]
    found, taken = [], np.zeros(mesh.n_vertices, dtype=bool)
    for x in cands:
        if taken[x]:
            continue
        d = distances_from(mesh, int(x))
        ball = np.nonzero(d <= r_mass)[0]
        taken[ball] = True
        peaks = [float(np.max(sign * (u[ball] - ops.mean(u)))) for u in fields]
        growing = all(b > a for a, b in zip(peaks, peaks[1:]))
        if growing and peaks[-1] - peaks[0] >= growth_min:
            found.append((int(x), ball, peaks))
    return found


def classify_concentration(
    ops: DiscreteOperators,
    family,
    rho,
    r_mass: float | None = None,
    growth_min: float = 1.0,
    n_std: float = 3.0,
) -> ConcentrationReport:
    """Label a family of fields as compact, one-sided or two-sided concentrating.

    Parameters
    ----------
    ops : DiscreteOperators
    family : sequence of arrays
        At least three fields, ordered by the blow-up parameter.
    rho : (float, float)
        Parameters weighting the positive and negative densities.
    r_mass : float, optional
        Ball radius for local masses and for merging points of S1 and S2;
        defaults to ten mean edge lengths.
    growth_min : float
        Minimal total growth of the ball maximum across the family.
    n_std : float
        Peak threshold in standard deviations above the mean.
    """
    fields = [np.asarray(u, dtype=float) for u in family]
    if len(fields) < 3:
        raise ValueError(f"family needs at least 3 members to show a trend, got {len(fields)}")
    for u in fields:
        if u.shape != (ops.n,) or not np.all(np.isfinite(u)):
            raise ValueError("family members must be finite fields on the mesh")
    rho1, rho2 = (float(r) for r in rho)
    r_mass = 10.0 * ops.mesh.mean_edge if r_mass is None else float(r_mass)

    s1 = _detect(ops, fields, 1.0, r_mass, growth_min, n_std) if rho1 > 0 else []
    s2 = _detect(ops, fields, -1.0, r_mass, growth_min, n_std) if rho2 > 0 else []

    def mass(sign, rho_i, ball, peaks):
        shares = [_ball_share(ops, sign * (u - ops.mean(u)), ball) for u in fields]
        return rho_i * _extrapolate(shares, peaks)

    m1 = {x: mass(1.0, rho1, ball, pk) for x, ball, pk in s1}
    m2 = {y: mass(-1.0, rho2, ball, pk) for y, ball, pk in s2}

    pairs, used2 = [], set()
    for x, _, _ in s1:
        d = distances_from(ops.mesh, x)
        close = [y for y, _, _ in s2 if y not in used2 and d[y] <= r_mass]
        if close:
            y = min(close, key=lambda v: (d[v], v))
            used2.add(y)
            pairs.append((x, y))

    quant = []
    for x, y in pairs:
        a, b = m1[x], m2[y]
        res = (a - b) ** 2 - EIGHT_PI * (a + b)
        quant.append({"x": x, "y": y, "m1": a, "m2": b, "residual": res, "relative": res / EIGHT_PI**2})
    paired1 = {x for x, _ in pairs}
    one_sided = [
        {"vertex": x, "side": 1, "mass": m, "error": m - EIGHT_PI, "relative": m / EIGHT_PI - 1.0}
        for x, m in m1.items()
        if x not in paired1
    ] + [
        {"vertex": y, "side": 2, "mass": m, "error": m - EIGHT_PI, "relative": m / EIGHT_PI - 1.0}
        for y, m in m2.items()
        if y not in used2
    ]

    if not s1 and not s2:
        alt = "compactness"
    elif pairs:
        alt = "two_sided"
    else:
        alt = "one_sided"

    return ConcentrationReport(
        alternative=alt,
        points_S1=[x for x, _, _ in s1],
        points_S2=[y for y, _, _ in s2],
        masses={"m1": [m1[x] for x, _, _ in s1], "m2": [m2[y] for y, _, _ in s2]},
        quantization_residual=quant,
        one_sided=one_sided,
        r_mass=r_mass,
        rho=(rho1, rho2),
        decomposition=[decompose(ops, u, rho2) for u in fields],
    )


def decompose(ops: DiscreteOperators, u, rho2: float) -> dict:
    """Split ``u = v + w`` with ``-Delta w = rho2 (1 - e^-u / int e^-u)``.

    Then ``e^u = e^v e^w``, and a lower bound on ``w`` turns integral bounds on
    ``e^v`` into bounds on ``e^u``.  Returns the range of ``w`` and the error of
    the product identity in log-integral form.
    """
    u = np.asarray(u, dtype=float)
    c = u - ops.mean(u)
    q = np.exp(-c - ops.log_int_exp(-c))
    rhs = rho2 * (1.0 - q)
    rhs -= ops.mean(rhs)
    w = solve_poisson(ops, rhs) if rho2 else np.zeros(ops.n)
    v = u - w
    err = abs(ops.log_int_exp(v + w) - ops.log_int_exp(u))
    return {"w_min": float(w.min()), "w_max": float(w.max()), "identity_error": err}
