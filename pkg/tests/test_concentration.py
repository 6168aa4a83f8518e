import json
import math

import numpy as np
import pytest

from mfelab.barycenter import BarycenterMeasure, test_function as bubble
from mfelab.concentration import classify_concentration, decompose
from mfelab.functional import normalize_exp, random_low_mode_fields
from mfelab.operators import low_eigenpairs
from mfelab.surface import distances_from

EIGHT_PI = 8 * math.pi
LAMBDAS = (50.0, 100.0, 200.0)


def _bump(mesh, x, lam):
    return bubble(mesh, BarycenterMeasure.delta(x), lam)


def test_short_family_rejected(ops3):
    with pytest.raises(ValueError):
        classify_concentration(ops3, [np.zeros(ops3.n)] * 2, (EIGHT_PI, 0))


def test_bounded_family_is_compact(ops4):
    lam, vec = low_eigenpairs(ops4, 31)
    fam = random_low_mode_fields(vec, lam, 3, np.random.default_rng(1), 0.3)
    rep = classify_concentration(ops4, [normalize_exp(ops4, u) for u in fam], (EIGHT_PI, EIGHT_PI))
    assert rep.alternative == "compactness"
    assert rep.points_S1 == [] and rep.points_S2 == [] and rep.quantization_residual == []


def test_one_sided_bubble_family(ops4):
    mesh = ops4.mesh
    fam = [normalize_exp(ops4, _bump(mesh, 0, lam)) for lam in LAMBDAS]
    rep = classify_concentration(ops4, fam, (EIGHT_PI, 0))
    assert rep.alternative == "one_sided"
    assert rep.points_S1 == [0] and rep.points_S2 == []
    # oracle: the ball share of a bubble density tends to one as lambda grows
    assert rep.masses["m1"][0] == pytest.approx(EIGHT_PI, rel=0.05)
    assert abs(rep.one_sided[0]["relative"]) < 0.05


def test_two_sided_tuned_family(ops4):
    mesh = ops4.mesh
    d = distances_from(mesh, 0)
    y = int(np.argmin(np.abs(d - 3 * mesh.mean_edge)))
    fam = [normalize_exp(ops4, 2.0 * (_bump(mesh, 0, lam) - _bump(mesh, y, lam))) for lam in LAMBDAS]
    # with masses 24 pi and 8 pi: (24 - 8)^2 pi^2 = 8 pi (24 + 8) pi
    rep = classify_concentration(ops4, fam, (24 * math.pi, EIGHT_PI))
    assert rep.alternative == "two_sided"
    (row,) = rep.quantization_residual
    assert row["x"] == 0 and row["y"] == y
    assert row["residual"] == pytest.approx((row["m1"] - row["m2"]) ** 2 - EIGHT_PI * (row["m1"] + row["m2"]))
    assert abs(row["residual"]) <= 0.05 * EIGHT_PI**2


def test_disjoint_two_sided_has_no_common_points(ops4):
    mesh = ops4.mesh
    far = int(np.argmax(distances_from(mesh, 0)))
    fam = [normalize_exp(ops4, _bump(mesh, 0, lam) - _bump(mesh, far, lam)) for lam in LAMBDAS]
    rep = classify_concentration(ops4, fam, (EIGHT_PI, EIGHT_PI))
    assert rep.points_S1 == [0] and rep.points_S2 == [far]
    assert rep.quantization_residual == []
    assert rep.alternative == "one_sided"
    assert len(rep.one_sided) == 2


def test_report_json(ops4):
    fam = [normalize_exp(ops4, _bump(ops4.mesh, 5, lam)) for lam in LAMBDAS]
    d = json.loads(classify_concentration(ops4, fam, (EIGHT_PI, 0)).to_json())
    assert {"alternative", "points_S1", "points_S2", "masses", "quantization_residual"} <= set(d)


def test_decomposition(ops3):
    u = normalize_exp(ops3, np.random.default_rng(0).standard_normal(ops3.n))
    out = decompose(ops3, u, 5.0)
    assert out["identity_error"] < 1e-12
    assert out["w_min"] <= 0 <= out["w_max"]
    zero = decompose(ops3, u, 0.0)
    assert zero["w_min"] == zero["w_max"] == 0.0
