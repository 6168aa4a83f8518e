import itertools
import json
import math

import numpy as np
import pytest
from scipy.optimize import linprog

from mfelab.barycenter import (
    BarycenterMeasure,
    asymptotic_slopes,
    bubble_density,
    check_resolution,
    dist_to_barycenters,
    pair,
    project_to_barycenters,
    test_function as bubble,
)
from mfelab.errors import ResolutionError
from mfelab.operators import assemble
from mfelab.surface import build_unit_volume_sphere, distances_from, pairwise_distances

RADIUS = 1.0 / math.sqrt(4.0 * math.pi)


def test_measure_validation():
    with pytest.raises(ValueError):
        BarycenterMeasure((0.5, 0.6), (1, 2))
    with pytest.raises(ValueError):
        BarycenterMeasure((-0.5, 1.5), (1, 2))
    with pytest.raises(ValueError):
        BarycenterMeasure((), ())
    s = BarycenterMeasure((0.25, 0.5, 0.25), (7, 3, 7))
    assert s.vertices == (3, 7) and s.weights == (0.5, 0.5) and s.k == 2


def test_measure_json_roundtrip():
    s = BarycenterMeasure((0.3, 0.7), (4, 9))
    d = json.loads(s.to_json())
    assert d == {"atoms": [{"w": 0.3, "vertex": 4}, {"w": 0.7, "vertex": 9}]}
    assert BarycenterMeasure.from_dict(d) == s


def test_pair():
    s = BarycenterMeasure((0.25, 0.75), (0, 2))
    assert pair(s, [4.0, 100.0, 8.0]) == pytest.approx(7.0)


def test_bubble_at_atom(sphere3):
    for lam in (1.0, 7.5, 300.0):
        phi = bubble(sphere3, BarycenterMeasure.delta(5), lam)
        assert phi[5] == 2 * math.log(lam) - math.log(math.pi)


def test_bubble_formula(sphere3):
    lam = 40.0
    phi = bubble(sphere3, BarycenterMeasure.delta(0), lam)
    d = distances_from(sphere3, 0)
    np.testing.assert_allclose(phi, 2 * np.log(lam / (1 + lam**2 * d**2)) - math.log(math.pi), rtol=1e-13, atol=1e-13)


def test_bubble_weighted_sum(sphere3):
    s = BarycenterMeasure((0.2, 0.8), (0, 100))
    lam = 25.0
    d = pairwise_distances(sphere3, [0, 100])
    expected = np.log(0.2 * (lam / (1 + lam**2 * d[0] ** 2)) ** 2 + 0.8 * (lam / (1 + lam**2 * d[1] ** 2)) ** 2)
    np.testing.assert_allclose(bubble(sphere3, s, lam), expected - math.log(math.pi), atol=1e-12)


def test_bubble_radially_decreasing(sphere4):
    phi = bubble(sphere4, BarycenterMeasure.delta(0), 60.0)
    d = distances_from(sphere4, 0)
    order = np.argsort(d, kind="stable")
    ds, ps = d[order], phi[order]
    strictly_farther = np.diff(ds) > 1e-12
    assert np.all(np.diff(ps)[strictly_farther] < 0)


@pytest.mark.parametrize("lam", [1.0, 10.0, 500.0])
def test_bubble_sandwich(sphere3, lam):
    s = BarycenterMeasure((0.5, 0.3, 0.2), (0, 200, 400))
    phi = bubble(sphere3, s, lam)
    diam = sphere3.diameter
    assert np.all(phi <= 2 * math.log(lam) - math.log(math.pi) + 1e-12)
    assert np.all(phi >= -2 * math.log(1 + lam**2 * diam**2) - math.log(math.pi) - 1e-12)


def test_bubble_scale_guard(sphere3):
    with pytest.raises(ValueError):
        bubble(sphere3, BarycenterMeasure.delta(0), 0.5)


@pytest.mark.parametrize(
    "grid",
    [[10.0], [10.0, 5.0, 100.0], [10.0, 20.0, 50.0], [10.0, 100.0, 1000.0]],
)
def test_resolution_guard(sphere4, grid):
    with pytest.raises(ResolutionError):
        check_resolution(sphere4, grid)


def test_slopes_level4(sphere4, ops4):
    rep = asymptotic_slopes(sphere4, BarycenterMeasure.delta(0), [10, 20, 50, 100], ops=ops4)
    # the -2 limit is approached slowly; this coarse mesh and short grid give -1.895
    assert rep.mean_slope == pytest.approx(-1.895, abs=1e-3)
    assert rep.neg_exp_slope == pytest.approx(2, rel=0.05)
    assert 0.8 * 32 * math.pi <= rep.dirichlet_coeff <= 1.1 * 32 * math.pi
    assert rep.pos_exp_range < 1.0
    assert rep.grad_bounds_ok
    rows = list(rep.rows())
    assert [r["lambda"] for r in rows] == [10, 20, 50, 100]
    assert set(rep.summary()) >= {"mean_slope", "neg_exp_slope", "dirichlet_coeff", "pos_exp_spread", "grad_bounds_ok"}


def test_slopes_two_antipodal_atoms():
    mesh = build_unit_volume_sphere(5)
    far = int(np.argmax(distances_from(mesh, 0)))
    rep = asymptotic_slopes(mesh, BarycenterMeasure.uniform([0, far]), [10, 20, 50, 100, 200])
    # measured: 0.948 * 64 pi
    assert rep.dirichlet_coeff <= 1.1 * 64 * math.pi
    assert rep.dirichlet_coeff / (64 * math.pi) == pytest.approx(0.948, abs=0.002)


def test_projection_single_bubble(sphere4, ops4):
    f = bubble_density(ops4, BarycenterMeasure.delta(77), 50.0)
    s = project_to_barycenters(sphere4, f, 1)
    assert s.vertices == (77,) and s.weights == (1.0,)


def test_projection_two_bubbles(sphere4, ops4):
    far = int(np.argmax(distances_from(sphere4, 10)))
    sigma = BarycenterMeasure((0.3, 0.7), (10, far))
    s = project_to_barycenters(sphere4, bubble_density(ops4, sigma, 60.0), 2)
    assert set(s.vertices) == {10, far}
    w = dict(zip(s.vertices, s.weights))
    assert w[10] == pytest.approx(0.3, abs=0.05) and w[far] == pytest.approx(0.7, abs=0.05)


def test_projection_tie_breaks_low_index(sphere3):
    f = np.ones(sphere3.n_vertices)
    s1 = project_to_barycenters(sphere3, f, 1)
    # uniform density: the ball masses tie only up to vertex areas, result is deterministic
    assert s1 == project_to_barycenters(sphere3, f, 1)


def test_projection_rejects_bad_density(sphere3):
    with pytest.raises(ValueError):
        project_to_barycenters(sphere3, -np.ones(sphere3.n_vertices), 1)
    with pytest.raises(ValueError):
        project_to_barycenters(sphere3, np.ones(5), 1)


def _icosahedron_directions():
    g = (1 + 5**0.5) / 2
    pts = []
    for a, b in itertools.product((-1, 1), repeat=2):
        pts += [(0, a, b * g), (a, b * g, 0), (b * g, 0, a)]
    p = np.array(pts, dtype=float)
    return p / np.linalg.norm(p, axis=1)[:, None]


def _lp_transport(a, b, C):
    n, m = C.shape
    A_eq = np.zeros((n + m, n * m))
    for i in range(n):
        A_eq[i, i * m:(i + 1) * m] = 1
    for j in range(m):
        A_eq[n + j, j::m] = 1
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    return res.fun


def test_icosahedron_oracle(ico):
    # independent oracle: great circles between textbook icosahedron vertices
    # and a linear program for each candidate atom
    u = _icosahedron_directions()
    D = RADIUS * np.arccos(np.clip(u @ u.T, -1, 1))
    a = np.full(12, 1 / 12)
    brute = min(_lp_transport(a, np.array([1.0]), D[:, [x]]) for x in range(12))
    assert brute == pytest.approx(math.sqrt(math.pi) / 4, abs=1e-12)
    rep = dist_to_barycenters(ico, np.ones(12), 1)
    assert abs(rep.upper - brute) <= 1e-10
    assert rep.upper == pytest.approx(0.4431134627263789, abs=1e-15)
    assert rep.path == "network_simplex" and rep.transport_cost == pytest.approx(rep.upper, abs=1e-12)
    assert 0 <= rep.lower <= rep.upper


def test_icosahedron_k2_exhaustive(ico):
    u = _icosahedron_directions()
    D = RADIUS * np.arccos(np.clip(u @ u.T, -1, 1))
    mu = np.full(12, 1 / 12)
    # free weights: the optimum sends each vertex to its nearest atom
    brute = min(float(mu @ D[[x, y]].min(axis=0)) for x, y in itertools.combinations(range(12), 2))
    rep = dist_to_barycenters(ico, np.ones(12), 2)
    assert rep.upper == pytest.approx(brute, abs=1e-10)


def test_distance_monotone_in_k(sphere3, ops3):
    f = np.exp(np.random.default_rng(0).standard_normal(sphere3.n_vertices))
    f /= sphere3.vertex_area @ f
    rep = dist_to_barycenters(sphere3, f, 4, ops=ops3, transport_check=False)
    ups = rep.extra["upper_by_order"]
    assert all(b <= a + 1e-15 for a, b in zip(ups, ups[1:]))


def test_distance_bracket_and_projection(sphere3, ops3):
    far = int(np.argmax(distances_from(sphere3, 0)))
    f = bubble_density(ops3, BarycenterMeasure((0.4, 0.6), (0, far)), 20.0)
    rep = dist_to_barycenters(sphere3, f, 2, ops=ops3)
    assert 0 < rep.lower <= rep.upper
    assert rep.path == "network_simplex"
    assert rep.transport_cost == pytest.approx(rep.upper, rel=1e-9)
    # the projection is feasible, so its transport cost is no better than the optimum
    proj = project_to_barycenters(sphere3, f, 2)
    rows = pairwise_distances(sphere3, list(proj.vertices))
    mu = sphere3.vertex_area * f
    assert float(mu @ rows.min(axis=0)) >= rep.upper - 1e-15


def test_bubble_converges_to_atom(sphere4, ops4):
    # measured uppers / h: 5.66, 3.20, 1.34, 0.40, 0.04
    h = sphere4.mean_edge
    ups = [
        dist_to_barycenters(sphere4, bubble_density(ops4, BarycenterMeasure.delta(0), lam), 1, ops=ops4, transport_check=False).upper
        for lam in (10, 20, 50, 100, 200)
    ]
    assert all(b < a for a, b in zip(ups, ups[1:]))
    assert ups[-1] < 3 * h


def test_entropic_path():
    mesh = build_unit_volume_sphere(4)  # 2562 vertices, above the exact limit
    ops = assemble(mesh)
    f = bubble_density(ops, BarycenterMeasure.delta(0), 10.0)
    rep = dist_to_barycenters(mesh, f, 1, ops=ops)
    assert rep.path == "entropic"
    # entropic plans overestimate the exact cost by at most the smoothing scale
    assert rep.upper - 1e-12 <= rep.transport_cost <= rep.upper + 0.01 * mesh.diameter
    assert json.loads(json.dumps(rep.to_dict()))["path"] == "entropic"
