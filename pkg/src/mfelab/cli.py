"""Command line front end: ``mfe <command> --config <file.toml> [--seed N] [--out path]``.

Exit codes: 0 all verdicts pass, 1 some verdict fails, 2 invalid
configuration or mesh, 3 resolution guard violated, 4 solver did not converge.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import jsonio
from .barycenter import BarycenterMeasure, asymptotic_slopes, test_function
from .concentration import classify_concentration
from .errors import MeshError, ResolutionError, ResourceLimitError
from .functional import (
    EIGHT_PI,
    MFEParams,
    improved_mt_check,
    mt_check,
    normalize_exp,
    random_low_mode_fields,
)
from .operators import assemble, low_eigenpairs
from .solver import MinMaxConfig, check_regime, classify_regime, minimize, minmax_solve
from .surface import build_flat_torus, build_unit_volume_sphere, distances_from, farthest_point_sample, load_mesh

log = logging.getLogger("mfelab")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_GUARD, EXIT_NOCONV = 0, 1, 2, 3, 4


class ConfigError(ValueError):
    pass


# -- configuration --------------------------------------------------------

def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config {path} is not valid TOML: {exc}") from exc


def _section(cfg, name):
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return sec


def _positive(sec, key, default):
    val = sec.get(key, default)
    if not isinstance(val, (int, float)) or isinstance(val, bool) or not val > 0:
        raise ConfigError(f"{key} must be a positive number, got {val!r}")
    return float(val)


def _grid(sec, key, default):
    grid = sec.get(key, default)
    if not isinstance(grid, list) or not grid:
        raise ConfigError(f"{key} must be a non-empty list")
    grid = [float(x) for x in grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError(f"{key} must be strictly ascending")
    return grid


def build_mesh(cfg):
    sec = _section(cfg, "mesh")
    kind = sec.get("kind", "sphere")
    try:
        if kind == "sphere":
            return build_unit_volume_sphere(int(sec.get("level", 4)))
        if kind == "torus":
            return build_flat_torus(int(sec.get("n", 32)), int(sec.get("m", sec.get("n", 32))), float(sec.get("aspect", 1.0)))
        if kind == "file":
            if "path" not in sec:
                raise ConfigError("[mesh] kind = 'file' needs a path")
            return load_mesh(sec["path"])
    except (MeshError, ResourceLimitError) as exc:
        raise ConfigError(str(exc)) from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown mesh kind {kind!r}")


def read_params(cfg) -> MFEParams:
    sec = _section(cfg, "params")
    vals = []
    for name in ("rho1", "rho2"):
        if name in sec and f"{name}_pi" in sec:
            raise ConfigError(f"give either {name} or {name}_pi, not both")
        v = float(sec[f"{name}_pi"]) * math.pi if f"{name}_pi" in sec else float(sec.get(name, 0.0))
        if v < 0:
            raise ConfigError(f"{name} must be non-negative")
        vals.append(v)
    return MFEParams(vals[0], vals[1])


def regime_info(p: MFEParams) -> dict:
    label, k = classify_regime(p)
    return {"label": label, "k": k, **p.regime_flags()}


# -- commands ----------------------------------------------------------------

def cmd_mesh_info(cfg, seed):
    mesh = build_mesh(cfg)
    ops = assemble(mesh)
    lam, _ = low_eigenpairs(ops, 2)
    out = mesh.summary()
    out["lambda1"] = float(lam[1])
    out["kind"] = mesh.kind
    return out, EXIT_OK


def _sigma_from(sec, mesh, k):
    if "atoms" in sec:
        atoms = [int(a) for a in sec["atoms"]]
        if any(not 0 <= a < mesh.n_vertices for a in atoms):
            raise ConfigError("atom index out of range")
    elif k == 2 and mesh.kind == "sphere":
        d = distances_from(mesh, 0)
        atoms = [0, int(np.argmax(d))]
    else:
        atoms = [int(a) for a in farthest_point_sample(mesh, k)]
    weights = sec.get("weights", [1.0 / len(atoms)] * len(atoms))
    return BarycenterMeasure(tuple(float(w) for w in weights), tuple(atoms))


def cmd_verify_asymptotics(cfg, seed):
    sec = _section(cfg, "asymptotics")
    mesh = build_mesh(cfg)
    grid = _grid(sec, "lambda_grid", [10.0, 20.0, 50.0, 100.0, 200.0])
    k = int(sec.get("k", 1))
    if k < 1:
        raise ConfigError("k must be positive")
    tol = _positive(sec, "slope_tol", 0.05)
    dmax = _positive(sec, "dirichlet_max", 1.1)
    dmin = float(sec.get("dirichlet_min", 0.8 if k == 1 else 0.0))
    spread_max = _positive(sec, "spread_max", 1.0)
    sigma = _sigma_from(sec, mesh, k)
    rep = asymptotic_slopes(mesh, sigma, grid)
    s = rep.summary()
    base = 32 * math.pi * k
    verdicts = {
        "mean_slope_ok": abs(rep.mean_slope + 2) <= 2 * tol,
        "neg_exp_slope_ok": abs(rep.neg_exp_slope - 2) <= 2 * tol,
        "dirichlet_ok": dmin * base <= rep.dirichlet_coeff <= dmax * base,
        "pos_exp_spread_ok": rep.pos_exp_range < spread_max,
        "grad_bounds_ok": rep.grad_bounds_ok,
    }
    s.update(verdicts)
    s["dirichlet_coeff_over_32kpi"] = rep.dirichlet_coeff / base
    s["pass"] = all(verdicts.values())
    rows = list(rep.rows())
    if "csv" in sec:
        _write_rows_csv(sec["csv"], rows)
    out = {"sigma": sigma.to_dict(), "rows": rows, "summary": s}
    return out, EXIT_OK if s["pass"] else EXIT_FAIL


def _write_rows_csv(path, rows):
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def cmd_solve(cfg, seed):
    sec = _section(cfg, "solve")
    mesh = build_mesh(cfg)
    ops = assemble(mesh)
    p = read_params(cfg)
    tol = _positive(sec, "tol", 1e-8)
    regime = regime_info(p)
    r1, r2 = p.effective
    out = {"regime_info": regime, "seed": seed}
    if r1 < EIGHT_PI and r2 < EIGHT_PI:
        path, k = "minimize", None
    elif r1 > EIGHT_PI and r2 < 4 * math.pi and check_regime(p, int(r1 // EIGHT_PI)):
        path, k = "minmax", int(r1 // EIGHT_PI)
    else:
        path, k = "minimize", None
        out["warning"] = "parameters outside the minimization and min-max regimes; ran minimization with iteration cap"
    out["path"] = path
    if path == "minimize":
        rng = np.random.default_rng(seed)
        amp = float(sec.get("u0_amplitude", 0.1))
        u0 = amp * rng.standard_normal(ops.n) if amp > 0 else np.zeros(ops.n)
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            rep = minimize(ops, p, u0, tol=tol, max_iter=int(sec.get("max_iter", 2000)))
    else:
        t0 = float(_section(cfg, "params").get("t0", 0.1))
        mcfg = MinMaxConfig(
            k=k,
            lambda_bar=sec.get("lambda_bar"),
            L=sec.get("L"),
            sigma_samples=int(sec.get("sigma_samples", 12)),
            cone_s_steps=int(sec.get("cone_s_steps", 41)),
            t0=t0,
            newton_tol=tol,
            seed=seed,
        )
        rep = minmax_solve(ops, p, mcfg)
    out["report"] = rep.to_dict(include_field=bool(sec.get("include_field", False)))
    if "csv" in sec:
        Path(sec["csv"]).write_text(rep.log_csv())
    out["verdicts"] = {"converged": rep.converged}
    return out, EXIT_OK if rep.converged else EXIT_NOCONV


def _relative_gap(a, b):
    scale = max(abs(a), abs(b))
    return abs(a - b) / scale if scale > 0 else 0.0


def cmd_mt_suite(cfg, seed):
    sec = _section(cfg, "mt")
    mesh = build_mesh(cfg)
    ops = assemble(mesh)
    samples = int(sec.get("samples", 1000))
    if samples < 2 or samples % 2:
        raise ConfigError("samples must be an even number >= 2")
    modes = int(sec.get("modes", 30))
    shells = [float(s) for s in sec.get("shells", [0.25, 1.0, 4.0])]
    stab_tol = _positive(sec, "stability_tol", 0.10)
    lam, vec = low_eigenpairs(ops, modes + 1)
    rng = np.random.default_rng(seed)
    target = 16 * math.pi * np.resize(np.asarray(shells), samples)
    fields = random_low_mode_fields(vec, lam, samples, rng, dirichlet=target)
    offsets = np.array([mt_check(ops, u).offset for u in fields])
    half = samples // 2
    c_mesh = float(offsets.max())
    h1, h2 = float(offsets[:half].max()), float(offsets[half:].max())

    zero = mt_check(ops, np.zeros(ops.n))
    grid = _grid(sec, "bubble_grid", [5.0, 10.0, 20.0, 50.0])
    d0 = distances_from(mesh, 0)
    far = int(np.argmax(d0))
    radius = 0.25 * float(d0[far])
    sets = [np.nonzero(d0 < radius)[0], np.nonzero(distances_from(mesh, far) < radius)[0]]
    gamma0 = float(sec.get("gamma0", 0.25))
    eps_tilde = float(sec.get("eps_tilde", 0.5))
    bubble, improved = [], []
    for lam_b in grid:
        phi = test_function(mesh, BarycenterMeasure.delta(0), lam_b)
        r = mt_check(ops, phi)
        bubble.append({"lambda": lam_b, **r.to_dict()})
        phi2 = test_function(mesh, BarycenterMeasure.uniform([0, far]), lam_b)
        improved.append({"lambda": lam_b, **improved_mt_check(ops, phi2, sets, gamma0, eps_tilde).to_dict()})
    x = np.log(grid)
    lhs_slope = float(np.polyfit(x, [b["lhs"] for b in bubble], 1)[0]) if len(grid) > 1 else None
    offset_spread = float(np.ptp([b["offset"] for b in bubble]))
    slacks = [r["slack"] for r in improved if r["hypothesis_ok"]]
    verdicts = {
        "c_mesh_finite": bool(np.isfinite(c_mesh)),
        "halves_stable": _relative_gap(h1, h2) < stab_tol,
        "zero_row_ok": zero.lhs == 0.0,
        "bubble_offset_bounded": offset_spread < 1.0,
        "improved_hypothesis_ok": len(slacks) == len(grid),
        "improved_slack_bounded": bool(slacks) and float(np.ptp(slacks)) < 1.0,
    }
    out = {
        "seed": seed,
        "samples": samples,
        "modes": modes,
        "shells_dirichlet_over_16pi": shells,
        "C_mesh": c_mesh,
        "half_maxima": [h1, h2],
        "half_relative_gap": _relative_gap(h1, h2),
        "zero_row": {"lhs": zero.lhs, "dirichlet": zero.dirichlet, "constant": zero.constant},
        "bubble_rows": bubble,
        "bubble_lhs_slope": lhs_slope,
        "bubble_offset_spread": offset_spread,
        "improved_rows": improved,
        "verdicts": verdicts,
    }
    return out, EXIT_OK if all(verdicts.values()) else EXIT_FAIL


def _family(sec, mesh, ops, seed):
    kind = sec.get("family", "one_sided")
    grid = _grid(sec, "lambda_grid", [50.0, 100.0, 200.0])
    x = int(sec.get("vertex", 0))
    if not 0 <= x < mesh.n_vertices:
        raise ConfigError("vertex out of range")
    bump = lambda v, lam: test_function(mesh, BarycenterMeasure.delta(v), lam)  # noqa: E731
    d = distances_from(mesh, x)
    if kind == "one_sided":
        fam = [bump(x, lam) for lam in grid]
    elif kind == "two_sided":
        offset = float(sec.get("offset_edges", 3))
        amp = float(sec.get("amplitude", 2.0))
        y = int(np.argmin(np.abs(d - offset * mesh.mean_edge)))
        fam = [amp * (bump(x, lam) - bump(y, lam)) for lam in grid]
    elif kind == "disjoint":
        y = int(np.argmax(d))
        fam = [bump(x, lam) - bump(y, lam) for lam in grid]
    elif kind == "bounded":
        lam, vec = low_eigenpairs(ops, 31)
        rng = np.random.default_rng(seed)
        amp = float(sec.get("amplitude", 0.3))
        fam = list(random_low_mode_fields(vec, lam, len(grid), rng, amp))
    elif kind == "file":
        try:
            data = np.load(sec["path"])
            fam = list(np.asarray(data, dtype=float))
        except (KeyError, OSError, ValueError) as exc:
            raise ConfigError(f"cannot load family: {exc}") from exc
    else:
        raise ConfigError(f"unknown family {kind!r}")
    return kind, [normalize_exp(ops, u) for u in fam]


def cmd_blowup(cfg, seed):
    sec = _section(cfg, "blowup")
    mesh = build_mesh(cfg)
    ops = assemble(mesh)
    p = read_params(cfg)
    kind, fam = _family(sec, mesh, ops, seed)
    if len(fam) < 3:
        raise ConfigError(f"family has {len(fam)} members; at least 3 are needed")
    tol = _positive(sec, "tolerance", 0.05)
    r_mass = sec.get("r_mass")
    rep = classify_concentration(ops, fam, (p.rho1, p.rho2), r_mass=r_mass)
    out = rep.to_dict()
    out["family"] = kind
    out["seed"] = seed
    verdicts = {}
    for row in rep.one_sided:
        verdicts[f"mass_8pi_v{row['vertex']}_side{row['side']}"] = abs(row["relative"]) <= tol
    for row in rep.quantization_residual:
        verdicts[f"quantization_v{row['x']}"] = abs(row["relative"]) <= tol
    if "expect" in sec:
        verdicts["alternative_as_expected"] = rep.alternative == sec["expect"]
    out["verdicts"] = verdicts
    return out, EXIT_OK if all(verdicts.values()) else EXIT_FAIL


COMMANDS = {
    "mesh-info": cmd_mesh_info,
    "verify-asymptotics": cmd_verify_asymptotics,
    "solve": cmd_solve,
    "mt-suite": cmd_mt_suite,
    "blowup": cmd_blowup,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mfe", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="TOML experiment file")
    parser.add_argument("--seed", type=int, default=None, help="64-bit seed (overrides the config)")
    parser.add_argument("--out", default=None, help="also write the JSON result here")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")

    try:
        cfg = load_config(args.config)
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must fit in 64 unsigned bits")
        result, code = COMMANDS[args.command](cfg, seed)
    except ConfigError as exc:
        print(f"mfe: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResolutionError as exc:
        print(jsonio.dumps({"guard": "resolution", "error": str(exc)}))
        print(f"mfe: resolution guard: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except ValueError as exc:
        print(f"mfe: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    text = jsonio.dumps({"command": args.command, **result})
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
