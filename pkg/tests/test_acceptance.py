"""Acceptance suite: fourteen end-to-end criteria, one PASS/FAIL line each.

Run under pytest (``pytest -v tests/test_acceptance.py``) or directly
(``python tests/test_acceptance.py``).
"""
import math
import sys
import time

import numpy as np
import pytest

from mfelab.barycenter import (
    BarycenterMeasure,
    asymptotic_slopes,
    bubble_density,
    dist_to_barycenters,
    project_to_barycenters,
    test_function as bubble,
)
from mfelab.concentration import classify_concentration
from mfelab.functional import (
    MFEParams,
    energy,
    mt_check,
    normalize_exp,
    random_low_mode_fields,
    residual,
)
from mfelab.operators import assemble, low_eigenpairs
from mfelab.solver import MinMaxConfig, continue_in_t, minmax_solve, scaled_energy_gap
from mfelab.surface import (
    build_flat_torus,
    build_unit_volume_sphere,
    distances_from,
    farthest_point_sample,
    pairwise_distances,
)

EIGHT_PI = 8 * math.pi
GRID = [10.0, 20.0, 50.0, 100.0, 200.0]
_memo = {}


def _memoize(key, make):
    if key not in _memo:
        _memo[key] = make()
    return _memo[key]


def _sphere(level):
    return _memoize(("sphere", level), lambda: build_unit_volume_sphere(level))


def _ops(level):
    return _memoize(("ops", level), lambda: assemble(_sphere(level)))


def _sweep():
    def make():
        t = time.perf_counter()
        rep = asymptotic_slopes(_sphere(5), BarycenterMeasure.delta(0), GRID, ops=_ops(5))
        return rep, time.perf_counter() - t

    return _memoize("sweep", make)


# -- criteria -------------------------------------------------------------------

def criterion_1():
    rep, secs = _sweep()
    ok = abs(rep.mean_slope + 2) <= 0.05 * 2 and secs < 30
    return ok, f"mean slope {rep.mean_slope:.4f} (target -2 +- 5%), sweep {secs:.1f}s"


def criterion_2():
    rep, _ = _sweep()
    ok = abs(rep.neg_exp_slope - 2) <= 0.05 * 2
    return ok, f"neg-exp slope {rep.neg_exp_slope:.4f} (target +2 +- 5%)"


def criterion_3():
    rep, _ = _sweep()
    c1 = rep.dirichlet_coeff / (32 * math.pi)
    mesh = _sphere(5)
    far = int(np.argmax(distances_from(mesh, 0)))
    rep2 = asymptotic_slopes(mesh, BarycenterMeasure.uniform([0, far]), GRID, ops=_ops(5))
    c2 = rep2.dirichlet_coeff / (64 * math.pi)
    ok = 0.8 <= c1 <= 1.1 and c2 <= 1.1
    return ok, f"k=1 coeff {c1:.4f} x 32pi (in [0.8, 1.1]); k=2 antipodal {c2:.4f} x 64pi (<= 1.1)"


def criterion_4():
    rep, _ = _sweep()
    return rep.pos_exp_range < 1.0, f"spread of log int e^phi {rep.pos_exp_range:.4f} (< 1.0)"


def criterion_5():
    ops = _ops(4)
    lam, vec = low_eigenpairs(ops, 31)
    rng = np.random.default_rng(20260101)
    # fixed Dirichlet shells cycling through 1/4, 1 and 4 times 16 pi
    shells = 16 * math.pi * np.resize([0.25, 1.0, 4.0], 1000)
    fields = random_low_mode_fields(vec, lam, 1000, rng, dirichlet=shells)
    off = np.array([mt_check(ops, u).offset for u in fields])
    a, b = off[:500].max(), off[500:].max()
    gap = abs(a - b) / max(abs(a), abs(b))
    ok = bool(np.all(np.isfinite(off))) and gap < 0.10
    return ok, f"C_mesh = {off.max():.5f}; half maxima {a:.5f}, {b:.5f}; relative gap {gap:.3%} (< 10%)"


def criterion_6():
    mesh, ops = _sphere(5), _ops(5)
    p = MFEParams(10 * math.pi, 0.0)
    e = [energy(ops, bubble(mesh, BarycenterMeasure.delta(0), lam), p) for lam in GRID]
    ok = all(y < x for x, y in zip(e, e[1:]))
    return ok, "energies " + ", ".join(f"{x:.2f}" for x in e) + " (strictly decreasing)"


def criterion_7():
    ops = _ops(3)
    rng = np.random.default_rng(7)
    worst = 0.0
    eps = 1e-5
    for _ in range(100):
        p = MFEParams(*rng.uniform(0, 40, 2))
        u, v = rng.standard_normal(ops.n), rng.standard_normal(ops.n)
        fd = (energy(ops, u + eps * v, p) - energy(ops, u - eps * v, p)) / (2 * eps)
        exact = ops.inner(residual(ops, u, p), v)
        worst = max(worst, abs(fd - exact) / max(abs(exact), abs(fd)))
    return worst < 1e-6, f"max relative error {worst:.2e} over 100 pairs (< 1e-6)"


def criterion_8():
    ops = _ops(3)
    lam, vec = low_eigenpairs(ops, 31)
    rng = np.random.default_rng(8)
    smooth = random_low_mode_fields(vec, lam, 500, rng, amplitude=3.0)
    rough = rng.standard_normal((500, ops.n)) * rng.uniform(0.1, 10, (500, 1)) + rng.uniform(-50, 50, (500, 1))
    bad = 0
    for u in np.vstack([smooth, rough]):
        w = normalize_exp(ops, u)
        m = ops.mean(w)
        if not (m <= 0 and ops.log_int_exp(-(w - m)) >= 0):
            bad += 1
    return bad == 0, f"{bad} violations over 1000 fields"


def criterion_9():
    ops = _ops(3)
    rng = np.random.default_rng(9)
    worst = max(
        float(np.abs(residual(ops, np.zeros(ops.n), MFEParams(*rng.uniform(0, 100, 2)))).max()) for _ in range(20)
    )
    return worst <= 1e-15, f"max |residual(0)| = {worst:.1e} over 20 parameter pairs"


def _torus32():
    return _memoize("t32", lambda: assemble(build_flat_torus(32, 32)))


def criterion_10():
    ops = _torus32()
    t = time.perf_counter()
    rep = minmax_solve(ops, MFEParams(10 * math.pi, 0.0), MinMaxConfig(k=1))
    secs = time.perf_counter() - t
    order = rep.boundary_max < -2 * rep.L < -rep.L / 2 < rep.minmax_level
    ok = rep.converged and rep.residual_norm < 1e-6 and order and secs < 300
    return ok, (
        f"residual {rep.residual_norm:.2e}, boundary max {rep.boundary_max:.3f} < -2L = {-2 * rep.L:.3f} "
        f"< -L/2 = {-rep.L / 2:.3f} < level {rep.minmax_level:.3f}; trivial={rep.trivial_flag}; {secs:.1f}s"
    )


def criterion_11():
    ops = _ops(3)
    rng = np.random.default_rng(11)
    worst = worst_abs = 0.0
    for _ in range(50):
        p = MFEParams(*rng.uniform(0, 60, 2))
        u = rng.standard_normal(ops.n) * rng.uniform(0.1, 5)
        t, tp = sorted(rng.uniform(0.8, 1.2, 2))
        lhs, rhs = scaled_energy_gap(ops, u, p, t, tp)
        # rounding scales with the energies being subtracted
        scale = max(1.0, abs(energy(ops, u, p.scaled(t)) / t), abs(energy(ops, u, p.scaled(tp)) / tp))
        worst = max(worst, abs(lhs - rhs) / scale)
        worst_abs = max(worst_abs, abs(lhs - rhs))
    chains = []
    for ops_c, rho in ((assemble(build_flat_torus(16, 16)), 10), (assemble(build_flat_torus(16, 16)), 12), (_torus32(), 10)):
        res = continue_in_t(ops_c, MFEParams(rho * math.pi, 0.0), MinMaxConfig(k=1, sigma_samples=4))
        chains.append(res)
    good = [c for c in chains if c.complete]
    mono = all(c.monotone_ok for c in good)
    ok = worst <= 1e-12 and mono and len(good) == len(chains)
    return ok, f"identity error {worst:.1e} relative (<= 1e-12), {worst_abs:.1e} absolute; {len(good)}/{len(chains)} chains complete, alpha/t monotone: {mono}"


def criterion_12():
    mesh, ops = _sphere(4), _ops(4)
    lams = (50.0, 100.0, 200.0)
    one = classify_concentration(ops, [normalize_exp(ops, bubble(mesh, BarycenterMeasure.delta(0), l)) for l in lams], (EIGHT_PI, 0))
    m1 = one.masses["m1"]
    ok1 = one.alternative == "one_sided" and one.points_S1 == [0] and len(m1) == 1 and abs(m1[0] / EIGHT_PI - 1) < 0.05
    d = distances_from(mesh, 0)
    y = int(np.argmin(np.abs(d - 3 * mesh.mean_edge)))
    fam = [
        normalize_exp(ops, 2.0 * (bubble(mesh, BarycenterMeasure.delta(0), l) - bubble(mesh, BarycenterMeasure.delta(y), l)))
        for l in lams
    ]
    two = classify_concentration(ops, fam, (24 * math.pi, EIGHT_PI))
    rows = two.quantization_residual
    rel = rows[0]["relative"] if rows else float("nan")
    ok2 = two.alternative == "two_sided" and len(rows) == 1 and abs(rel) <= 0.05
    return ok1 and ok2, (
        f"one-sided m1 = {m1[0] / EIGHT_PI:.4f} x 8pi at {one.points_S1}; "
        f"two-sided residual {rel:+.4f} x (8pi)^2 (within 0.05)"
    )


def criterion_13():
    mesh = _sphere(6)
    ops = _memoize(("ops", 6), lambda: assemble(mesh))
    h = mesh.mean_edge
    weights = {1: (1.0,), 2: (0.35, 0.65), 3: (0.2, 0.3, 0.5)}
    worst_d, worst_w = 0.0, 0.0
    for k, w in weights.items():
        atoms = tuple(int(a) for a in farthest_point_sample(mesh, k, start=123))
        sigma = BarycenterMeasure(w, atoms)
        got = project_to_barycenters(mesh, bubble_density(ops, sigma, 200.0), k)
        D = pairwise_distances(mesh, list(sigma.vertices), list(got.vertices))
        match = np.argmin(D, axis=1)
        if len(set(match.tolist())) != k:
            return False, f"k={k}: atoms not matched one to one"
        dist = D[np.arange(k), match].max() / h
        werr = max(abs(sigma.weights[i] - got.weights[match[i]]) for i in range(k))
        worst_d, worst_w = max(worst_d, dist), max(worst_w, werr)
    ok = worst_d <= 2.0 and worst_w <= 0.05
    return ok, f"level-6 sphere, k=1..3: worst atom offset {worst_d:.2f} edges (<= 2), worst weight error {worst_w:.4f} (<= 0.05)"


def criterion_14():
    mesh = _sphere(0)
    rep = dist_to_barycenters(mesh, np.ones(12), 1)
    D = pairwise_distances(mesh, np.arange(12))
    brute = min(float(mesh.vertex_area @ D[x]) for x in range(12))
    err = abs(rep.upper - brute)
    return err <= 1e-10, f"upper {rep.upper:.15f} vs brute force {brute:.15f} (|diff| = {err:.1e})"


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 15)}


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    ok, detail = CRITERIA[number]()
    with capsys.disabled():
        print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


if __name__ == "__main__":
    failures = 0
    for number, fn in CRITERIA.items():
        ok, detail = fn()
        failures += not ok
        print(f"[criterion {number:2d}] {'PASS' if ok else 'FAIL'}: {detail}", flush=True)
    sys.exit(1 if failures else 0)
