"""Command-line runner.

Each command reads a JSON config, writes ``report.json`` (sorted keys) and
optional CSV tables to ``--out``, and exits with 0 (success), 1 (a
mathematical check failed) or 2 (usage or configuration error).
"""

import argparse
import copy
import csv
import json
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import cases
from .control import (
    ControlProblem,
    check_b_stationarity,
    check_strong_stationarity,
    recover_multipliers,
    solve_control_descent,
)
from .exceptions import QviError
from .operators import (
    Certificate,
    LinearMap,
    LinearOperator,
    ScalarMap,
    ZeroMap,
    check_uniqueness,
)
from .qvi_solver import QviProblem, solve_qvi
from .sensitivity import DEFAULT_T_LIST, fd_check, linearize
from .sets import Ball, BiactiveWarning, Box, Span, WholeSpace
from .space import Space, load_vector, stiffness_space


EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
COMMANDS = (
    "check-conditions",
    "solve",
    "derivative",
    "counterexample",
    "obstacle-study",
    "control",
    "sweep",
)


class ConfigError(Exception):
    pass


# -- schema --------------------------------------------------------------

_NUM = {"type": "number"}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}
_MAT = {"type": "array", "items": _VEC, "minItems": 1}
_VEC_OR_NUM = {"oneOf": [_NUM, _VEC]}


def _obj(props, required=()):
    return {
        "type": "object",
        "properties": props,
        "required": list(required),
        "additionalProperties": False,
    }


_SPACE = {
    "oneOf": [
        _obj({"kind": {"const": "identity"}, "dim": {"type": "integer", "minimum": 1}}, ["kind", "dim"]),
        _obj({"kind": {"const": "gram"}, "matrix": _MAT}, ["kind", "matrix"]),
        _obj({"kind": {"const": "stiffness"}, "n": {"type": "integer", "minimum": 1}}, ["kind", "n"]),
    ]
}
_OPERATOR = {
    "oneOf": [
        _obj(
            {
                "kind": {"const": "linear"},
                "matrix": _MAT,
                "mu": _NUM,
                "lip": _NUM,
                "convex_potential": {"type": "boolean"},
            },
            ["kind", "matrix", "mu", "lip"],
        ),
        _obj({"kind": {"const": "riesz"}}, ["kind"]),
    ]
}
_PHI = {
    "oneOf": [
        _obj({"kind": {"const": "zero"}}, ["kind"]),
        _obj({"kind": {"const": "scalar"}, "value": _NUM}, ["kind", "value"]),
        _obj({"kind": {"const": "linear"}, "matrix": _MAT, "lip": _NUM}, ["kind", "matrix", "lip"]),
    ]
}
_SET = {
    "oneOf": [
        _obj({"kind": {"const": "whole"}}, ["kind"]),
        _obj({"kind": {"const": "box"}, "lower": _VEC_OR_NUM, "upper": _VEC_OR_NUM}, ["kind"]),
        _obj({"kind": {"const": "span"}, "basis": _MAT}, ["kind", "basis"]),
    ]
}
_F = {"oneOf": [_VEC, _obj({"load": _NUM}, ["load"])]}
_PROBLEM = _obj(
    {
        "space": _SPACE,
        "operator": _OPERATOR,
        "phi": _PHI,
        "set": _SET,
        "f": _F,
        "region": _obj({"center": _VEC, "radius": _NUM}, ["center", "radius"]),
    },
    ["space", "operator", "set", "f"],
)
_CASE = {
    "oneOf": [
        _obj(
            {
                "name": {"const": "moving_obstacle"},
                "n_grid": {"type": "integer"},
                "alpha": _NUM,
                "obstacle": _NUM,
                "load": _NUM,
            },
            ["name"],
        ),
        _obj(
            {"name": {"enum": ["sharp_general", "sharp_symmetric"]}, "mu": _NUM, "L": _NUM},
            ["name", "mu", "L"],
        ),
    ]
}
_CONSTANTS = {
    "oneOf": [
        {"enum": ["auto", "formula", "measured"]},
        _obj({"mu": _NUM, "lip": _NUM}, ["mu", "lip"]),
    ]
}
_COMMON = {"tol": _NUM, "max_iter": {"type": "integer", "minimum": 1}, "seed": {"type": "integer"}}
_INSTANCE = {"problem": _PROBLEM, "case": _CASE, "constants": _CONSTANTS}
_DIRECTION = {"oneOf": [_VEC, _obj({"random_scale": _NUM}, ["random_scale"])]}
_CONTROL = _obj(
    {
        "b_ctrl": {"oneOf": [_MAT, _obj({"scaled_identity": _NUM}, ["scaled_identity"])]},
        "y_d": _VEC_OR_NUM,
        "alpha": _NUM,
        "weight_y": {"oneOf": [_MAT, _obj({"scaled_identity": _NUM}, ["scaled_identity"])]},
        "weight_u": {"oneOf": [_MAT, _obj({"scaled_identity": _NUM}, ["scaled_identity"])]},
        "u": _VEC_OR_NUM,
        "descent": _obj(
            {
                "u0": _VEC_OR_NUM,
                "steps": {"type": "integer", "minimum": 1},
                "step_rule": {"enum": ["armijo", "newton"]},
            }
        ),
        "n_dirs": {"type": "integer", "minimum": 1},
    },
    ["b_ctrl", "y_d", "alpha"],
)

SCHEMAS = {
    "check-conditions": _obj(
        {
            **_COMMON,
            "mu": _NUM,
            "lip": _NUM,
            "gamma": _NUM,
            "lip_phi": _NUM,
            "convex_potential": {"type": "boolean"},
        },
        ["lip_phi"],
    ),
    "solve": _obj({**_COMMON, **_INSTANCE}),
    "derivative": _obj(
        {
            **_COMMON,
            **_INSTANCE,
            "direction": _DIRECTION,
            "t_list": {"type": "array", "items": _NUM, "minItems": 1},
        }
    ),
    "counterexample": _obj(
        {**_COMMON, "which": {"enum": ["general", "symmetric"]}, "mu": _NUM, "L": _NUM},
        ["which", "mu", "L"],
    ),
    "obstacle-study": _obj(
        {
            **_COMMON,
            "n_grid": {"type": "integer"},
            "h_list": {"type": "array", "items": _NUM, "minItems": 2},
        }
    ),
    "control": _obj({**_COMMON, **_INSTANCE, "control": _CONTROL}, ["control"]),
    "sweep": _obj(
        {
            **_COMMON,
            "command": {"enum": [c for c in COMMANDS if c != "sweep"]},
            "runs": {"type": "array", "items": {"type": "object"}, "minItems": 1},
            "workers": {"type": "integer", "minimum": 1},
        },
        ["command", "runs"],
    ),
}


def validate(command, config):
    try:
        jsonschema.validate(config, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {path}: {exc.message}") from None
    if command in ("solve", "derivative", "control"):
        if ("problem" in config) == ("case" in config):
            raise ConfigError("give exactly one of 'problem' or 'case'")
    if command == "check-conditions":
        if ("gamma" in config) == ("mu" in config or "lip" in config):
            raise ConfigError("give either 'gamma' or both 'mu' and 'lip'")
        if "mu" in config and "lip" not in config or "lip" in config and "mu" not in config:
            raise ConfigError("give both 'mu' and 'lip'")
    return config


# -- builders ------------------------------------------------------------


def _vector(value, n, what):
    arr = np.full(n, float(value)) if np.isscalar(value) else np.asarray(value, dtype=float)
    if arr.shape != (n,):
        raise ConfigError(f"{what} must have length {n}")
    return arr


def _matrix(value, n, m, what):
    if isinstance(value, dict):
        if n != m:
            raise ConfigError(f"{what}: scaled identity needs a square shape")
        return value["scaled_identity"] * np.eye(n)
    arr = np.asarray(value, dtype=float)
    if arr.shape != (n, m):
        raise ConfigError(f"{what} must be {n}x{m}")
    return arr


def build_space(cfg):
    kind = cfg["kind"]
    if kind == "identity":
        return Space(dim=cfg["dim"])
    if kind == "stiffness":
        return stiffness_space(cfg["n"])
    return Space(np.asarray(cfg["matrix"], dtype=float))


def build_problem(cfg):
    """QviProblem from a ``problem`` config block."""
    space = build_space(cfg["space"])
    n = space.dim
    op = cfg["operator"]
    if op["kind"] == "riesz":
        a_op = LinearOperator(space.gram_matrix(), Certificate(1.0, 1.0, has_convex_potential=True))
    else:
        cert = Certificate(op["mu"], op["lip"], op.get("convex_potential", False))
        a_op = LinearOperator(_matrix(op["matrix"], n, n, "operator.matrix"), cert)
    ph = cfg.get("phi", {"kind": "zero"})
    if ph["kind"] == "zero":
        phi = ZeroMap()
    elif ph["kind"] == "scalar":
        phi = ScalarMap(ph["value"])
    else:
        phi = LinearMap(_matrix(ph["matrix"], n, n, "phi.matrix"), ph["lip"])
    st = cfg["set"]
    if st["kind"] == "whole":
        set_k = WholeSpace()
    elif st["kind"] == "box":
        set_k = Box(
            _vector(st.get("lower", -np.inf), n, "set.lower"),
            _vector(st.get("upper", np.inf), n, "set.upper"),
        )
    else:
        set_k = Span(np.asarray(st["basis"], dtype=float))
    f = cfg["f"]
    if isinstance(f, dict):
        if cfg["space"]["kind"] != "stiffness":
            raise ConfigError("f.load needs a stiffness space")
        f = load_vector(n, f["load"])
    else:
        f = _vector(f, n, "f")
    region = None
    if "region" in cfg:
        region = Ball(_vector(cfg["region"]["center"], n, "region.center"), cfg["region"]["radius"])
    return QviProblem(space, a_op, phi, set_k, f, region)


def build_case(cfg):
    name = cfg["name"]
    if name == "moving_obstacle":
        kw = {k: cfg[k] for k in ("n_grid", "alpha", "obstacle", "load") if k in cfg}
        return cases.case_moving_obstacle(**kw)
    mu, L = cfg["mu"], cfg["L"]
    space = Space(dim=2)
    if name == "sharp_general":
        a_mat, phi, x, z = cases.sharp_general_data(mu, L)
        a_op = LinearOperator(a_mat, Certificate(mu, L))
        lip_phi, line = mu / L, z
    else:
        a_mat, phi, x = cases.sharp_symmetric_data(mu, L)
        a_op = LinearOperator(a_mat, Certificate(mu, L, has_convex_potential=True))
        lip_phi = 2 * np.sqrt(mu * L) / (mu + L)
        line = x - phi @ x
    return QviProblem(space, a_op, LinearMap(phi, lip_phi), Span([line]), a_mat @ x)


def build_instance(cfg):
    return build_case(cfg["case"]) if "case" in cfg else build_problem(cfg["problem"])


def _constants(cfg):
    c = cfg.get("constants", "auto")
    return Certificate(c["mu"], c["lip"]) if isinstance(c, dict) else c


# -- output --------------------------------------------------------------


def _clean(v):
    if isinstance(v, np.ndarray):
        return [_clean(x) for x in v.tolist()]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if np.isfinite(v) else str(v)
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


def write_report(out, report, tables=None):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_clean(report), sort_keys=True, indent=2) + "\n"
    (out / "report.json").write_text(text)
    for name, (columns, rows) in (tables or {}).items():
        with open(out / f"{name}.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([repr(float(v)) for v in row])


# -- commands ------------------------------------------------------------


def cmd_check_conditions(cfg):
    if "gamma" in cfg:
        cert = Certificate(1.0, cfg["gamma"], cfg.get("convex_potential", False))
    else:
        cert = Certificate(cfg["mu"], cfg["lip"], cfg.get("convex_potential", False))
    rep = check_uniqueness(cert, cfg["lip_phi"])
    report = {"command": "check-conditions", **rep.to_dict(), "tol": 0.0, "passed": rep.unique}
    return (EXIT_OK if rep.unique else EXIT_FAIL), report, {}


def cmd_solve(cfg):
    p = build_instance(cfg)
    tol = cfg.get("tol", 1e-10)
    kw = {"max_iter": cfg["max_iter"]} if "max_iter" in cfg else {}
    # the two residuals use different steps; tighten the VI until the QVI one meets tol
    vi_tol = 1e-3 * tol
    sol = solve_qvi(p, tol=vi_tol, constants=_constants(cfg), **kw)
    for _ in range(4):
        if sol.qvi_residual <= tol:
            break
        vi_tol *= 0.1
        sol = solve_qvi(p, tol=vi_tol, constants=_constants(cfg), z0=sol.z, **kw)
    ok = sol.qvi_residual <= tol
    report = {
        "command": "solve",
        "tol": tol,
        "y": sol.y,
        "z": sol.z,
        "lam": sol.lam,
        "qvi_residual": sol.qvi_residual,
        "vi_residual": sol.vi_report.residual,
        "vi_iterations": sol.vi_report.iterations,
        "vi_tol": vi_tol,
        "error_bound_y": sol.y_error_bound,
        "certificate": {"mu_B": sol.certificate.mu, "L_B": sol.certificate.lip},
        "passed": ok,
    }
    return (EXIT_OK if ok else EXIT_FAIL), report, {}


def _direction(cfg, p, rng):
    d = cfg.get("direction", {"random_scale": 1.0})
    if isinstance(d, dict):
        return d["random_scale"] * rng.standard_normal(p.space.dim) * np.abs(p.f).max()
    return _vector(d, p.space.dim, "direction")


def cmd_derivative(cfg):
    p = build_instance(cfg)
    tol = cfg.get("tol", 1e-12)
    rng = np.random.default_rng(cfg.get("seed", 0))
    sol = solve_qvi(p, tol=tol, constants=_constants(cfg))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", BiactiveWarning)
        lin = linearize(p, sol)
        h = _direction(cfg, p, rng)
        res = fd_check(p, sol, lin, h, tuple(cfg.get("t_list", DEFAULT_T_LIST)), tol=tol)
    biactive = bool(lin.biactive) or any(issubclass(w.category, BiactiveWarning) for w in caught)
    final_ok = res.final_ok(tol)
    ok = final_ok and res.is_monotone() and not biactive
    rows = [[r.t, r.fd_error, r.residual, r.noise_floor] for r in res.rows]
    report = {
        "command": "derivative",
        "tol": tol,
        "final_threshold": max(10 * tol / res.rows[-1].t, 1e-3 * res.x_norm),
        "x_norm": res.x_norm,
        "rows": [dict(zip(("t", "fd_error", "residual", "noise_floor"), r)) for r in rows],
        "monotone_modulo_noise": res.is_monotone(),
        "final_ok": final_ok,
        "biactive": list(lin.biactive),
        "warning": "BIACTIVE" if biactive else None,
        "passed": ok,
    }
    tables = {"fd": (["t", "fd_error", "residual", "noise_floor"], rows)}
    return (EXIT_OK if ok else EXIT_FAIL), report, tables


def cmd_counterexample(cfg):
    if cfg["which"] == "general":
        rep = cases.case_sharp_general(cfg["mu"], cfg["L"])
    else:
        rep = cases.case_sharp_symmetric(cfg["mu"], cfg["L"])
    report = {"command": "counterexample", **rep.to_dict()}
    return (EXIT_OK if rep.passed else EXIT_FAIL), report, {}


def cmd_obstacle_study(cfg):
    kw = {"n_grid": cfg.get("n_grid", 4096)}
    if "h_list" in cfg:
        kw["h_list"] = cfg["h_list"]
    rep = cases.case_obstacle_projection(**kw)
    table = rep.tables["obstacle"]
    ok = rep.assertion("slope")["passed"]
    report = {"command": "obstacle-study", **rep.to_dict()}
    rows = [r[:3] for r in table["rows"]]
    return (EXIT_OK if ok else EXIT_FAIL), report, {"obstacle": (["h", "norm", "ratio"], rows)}


def build_control(cfg, p):
    c = cfg["control"]
    n = p.space.dim
    b = _matrix(c["b_ctrl"], n, n, "control.b_ctrl") if isinstance(c["b_ctrl"], dict) else np.asarray(
        c["b_ctrl"], dtype=float
    )
    if b.ndim != 2 or b.shape[0] != n:
        raise ConfigError(f"control.b_ctrl must have {n} rows")
    m = b.shape[1]
    wy = _matrix(c["weight_y"], n, n, "control.weight_y") if "weight_y" in c else None
    wu = _matrix(c["weight_u"], m, m, "control.weight_u") if "weight_u" in c else None
    u_space = Space(wu) if wu is not None else Space(dim=m)
    cp = ControlProblem(
        p, u_space, b, _vector(c["y_d"], n, "control.y_d"), c["alpha"], wy, wu,
        solve_kw={"tol": cfg.get("tol", 1e-12)},
    )
    return cp, m


def cmd_control(cfg):
    p = build_instance(cfg)
    cp, m = build_control(cfg, p)
    c = cfg["control"]
    tol = cfg.get("tol", 1e-12)
    seed = cfg.get("seed", 0)
    n_dirs = c.get("n_dirs", 100)
    descent = None
    if "u" in c:
        u = _vector(c["u"], m, "control.u")
    else:
        d = c.get("descent", {})
        res = solve_control_descent(
            cp,
            _vector(d.get("u0", 0.0), m, "control.descent.u0"),
            steps=d.get("steps", 200),
            step_rule=d.get("step_rule", "newton"),
            n_dirs=n_dirs,
            seed=seed,
        )
        u = res.u
        descent = {"status": res.status, "iterations": res.iterations, "objective_history": res.objective_history}
    sol = cp.state(u)
    lin = linearize(cp.state_problem(u), sol)
    cert = recover_multipliers(cp, sol.y, u, lin, tol=1e-10)
    strong = check_strong_stationarity(cert, lin)
    b_rep = check_b_stationarity(cp, sol.y, u, lin, n_dirs=n_dirs, seed=seed, full_output=True)
    report = {
        "command": "control",
        "u": u,
        "y": sol.y,
        "objective": cp.objective(sol.y, u),
        "certificate": cert.to_dict(),
        "strong_stationarity": strong,
        "b_stationarity": {
            "min_lhs": b_rep.min_lhs,
            "scale": b_rep.scale,
            "tol": 1e-8,
            "passed": b_rep.passed(1e-8),
            "byproducts_ok": b_rep.byproducts_ok,
            "n_dirs": n_dirs,
        },
        "biactive": list(lin.biactive),
        "descent": descent,
        "passed": strong,
    }
    return (EXIT_OK if strong else EXIT_FAIL), report, {}


def _run_one(command, cfg):
    """Validate and run one command; returns (code, report, tables)."""
    try:
        validate(command, cfg)
        return HANDLERS[command](cfg)
    except ConfigError as exc:
        return EXIT_USAGE, {"command": command, "error": str(exc)}, {}
    except (QviError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return EXIT_FAIL, {"command": command, "error": f"{type(exc).__name__}: {exc}"}, {}
    except ValueError as exc:
        return EXIT_USAGE, {"command": command, "error": f"{type(exc).__name__}: {exc}"}, {}


def cmd_sweep(cfg):
    command = cfg["command"]
    shared = {k: cfg[k] for k in ("tol", "max_iter", "seed") if k in cfg}
    runs = [{**shared, **copy.deepcopy(r)} for r in cfg["runs"]]
    with ThreadPoolExecutor(cfg.get("workers", 4)) as pool:
        results = list(pool.map(lambda r: _run_one(command, r), runs))
    codes = [r[0] for r in results]
    report = {
        "command": "sweep",
        "sub_command": command,
        "runs": [{"exit_code": code, "report": rep} for code, rep, _ in results],
        "passed": all(c == EXIT_OK for c in codes),
    }
    tables = {}
    for i, (_, _, tabs) in enumerate(results):
        for name, tab in tabs.items():
            tables[f"run{i:03d}_{name}"] = tab
    code = EXIT_USAGE if EXIT_USAGE in codes else (EXIT_OK if report["passed"] else EXIT_FAIL)
    return code, report, tables


HANDLERS = {
    "check-conditions": cmd_check_conditions,
    "solve": cmd_solve,
    "derivative": cmd_derivative,
    "counterexample": cmd_counterexample,
    "obstacle-study": cmd_obstacle_study,
    "control": cmd_control,
    "sweep": cmd_sweep,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON config file")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, help="random seed (overrides config)")
    common.add_argument("--tol", type=float, help="tolerance (overrides config)")
    common.add_argument("--max-iter", type=int, help="iteration cap (overrides config)")
    parser = argparse.ArgumentParser(prog="movingqvi", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def run(argv=None):
    """Run the CLI; returns ``(exit_code, report)``."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return (EXIT_OK if exc.code == 0 else EXIT_USAGE), None
    try:
        cfg = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE, None
    if not isinstance(cfg, dict):
        print("error: config must be a JSON object", file=sys.stderr)
        return EXIT_USAGE, None
    for key, val in (("seed", args.seed), ("tol", args.tol), ("max_iter", args.max_iter)):
        if val is not None:
            cfg[key] = val
    code, report, tables = _run_one(args.command, cfg)
    report = {**report, "exit_code": code}
    write_report(args.out, report, tables)
    summary = report.get("error") or f"passed={report.get('passed')}"
    stream = sys.stdout if code == EXIT_OK else sys.stderr
    print(f"{args.command}: exit {code}: {summary}", file=stream)
    return code, report


def main(argv=None):
    code, _ = run(argv)
    return code


if __name__ == "__main__":
    sys.exit(main())
