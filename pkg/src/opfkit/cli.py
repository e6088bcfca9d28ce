"""opfkit command line: solve, check, certify, convexify, oracle and geometry.

Reports are JSON on stdout (``--format text`` gives flattened key: value
lines).  Exit codes: 0 success, 1 domain error, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import exactness, oracle, phaseshift, relax
from .bfm import BfmState
from .bim import PartialMatrix
from .conic import solve as cone_solve
from .cost import parse_cost
from .errors import OpfError
from .netmodel import load_case_file

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _tol() -> float:
    raw = os.environ.get("OPFKIT_TOL")
    if raw is None:
        return exactness.DEFAULT_TOL
    try:
        tol = float(raw)
    except ValueError:
        raise UsageError(f"OPFKIT_TOL must be a number, got {raw!r}") from None
    if not tol > 0:
        raise UsageError("OPFKIT_TOL must be positive")
    return tol


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p


def _load_net(path: str):
    return load_case_file(_existing(path))


def _read_json(path: str) -> dict:
    try:
        return json.loads(_existing(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})") from None


def _default_cost(model: str, net) -> str:
    if model == "angle":
        return "active:" + ",".join(["1"] * len(net.buses))
    return "loss"


def _state_from_report(doc: dict):
    sol = doc.get("solution")
    if sol is None:
        raise ValueError("solution file holds no solution (was the solve optimal?)")
    model = doc.get("model")
    if model == "bfm":
        return model, BfmState.from_json(sol)
    if model == "bim":
        return model, PartialMatrix.from_json(sol)
    raise ValueError(f"cannot use a {model!r} solution here")


def _result_num(x):
    x = float(x)
    return x if math.isfinite(x) else None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_solve(args) -> dict:
    net = _load_net(args.case)
    spec = args.cost or _default_cost(args.model, net)
    cost = parse_cost(spec, net)
    builder = {"bfm": relax.build_bfm_socp, "bim": relax.build_bim_socp, "angle": relax.build_angle_socp}[args.model]
    prog, vmap = builder(net, cost)
    sol = cone_solve(prog)
    report = {"command": "solve", "model": args.model, "case": Path(args.case).name, "cost": spec,
              "status": sol.status.value, "iterations": sol.iterations,
              "objective": _result_num(sol.primal_objective) if sol.optimal else None}
    if sol.optimal:
        state = relax.extract(sol, vmap)
        report["solution"] = state.to_json()
        if args.model == "angle":
            report["ellipse_residual"] = float(np.max(np.abs(state.ellipse_residual(net))))
            report["theta"] = [float(t) for t in state.theta(net)]
        else:
            report["certification"] = exactness.certify_solution(net, state, _tol()).certification
    return report


def cmd_check(args) -> dict:
    net = _load_net(args.case)
    spec = args.cost or "loss"
    cost = parse_cost(spec, net)
    rep = exactness.check_all(net, cost)
    out = {"command": "check", "case": Path(args.case).name, "cost": spec}
    out.update(rep.to_json())
    out["guaranteed"] = exactness.guaranteed(rep)
    return out


def cmd_certify(args) -> dict:
    net = _load_net(args.case)
    _, state = _state_from_report(_read_json(args.solution))
    rep = exactness.certify_solution(net, state, _tol())
    return {"command": "certify", "case": Path(args.case).name, "certification": rep.certification}


def cmd_convexify(args) -> dict:
    net = _load_net(args.case)
    model, x = _state_from_report(_read_json(args.solution))
    if model != "bfm":
        raise ValueError("convexify takes a bfm solution")
    tol = _tol()
    plan = phaseshift.convexify(net, x, seed=args.tree, tol=tol)
    ps = phaseshift.reconstruct(net, x, plan, tol=tol)
    return {"command": "convexify", "case": Path(args.case).name, "plan": plan.to_json(),
            "shifters": list(plan.support),
            "residuals": {k: float(np.max(v, initial=0.0)) for k, v in ps.residuals.items()},
            "residual_without_shifters": phaseshift.shifter_free_residual(net, x, plan)}


def cmd_oracle(args) -> dict:
    net = _load_net(args.case)
    spec = args.cost or "loss"
    cost = parse_cost(spec, net)
    res = oracle.grid_solve(net, cost, resolution=args.resolution, v_cap=args.v_cap, polish=args.polish)
    out = {"command": "oracle", "case": Path(args.case).name, "cost": spec, "feasible": res is not None}
    if res is not None:
        out.update({"value": res.value, "violation": res.violation, "points": res.points, "polished": res.polished,
                    "V": [{"bus": j, "re": float(v.real), "im": float(v.imag)} for j, v in enumerate(res.V)]})
    return out


def _params(text: str, required, defaults) -> dict:
    out = dict(defaults)
    for tok in filter(None, (t.strip() for t in text.split(","))):
        if "=" not in tok:
            raise UsageError(f"geometry parameter {tok!r} is not key=value")
        k, v = tok.split("=", 1)
        if k not in set(required) | set(defaults):
            raise UsageError(f"unknown geometry parameter {k!r}")
        out[k] = v
    missing = [k for k in required if k not in out]
    if missing:
        raise UsageError(f"missing geometry parameters: {', '.join(missing)}")
    return out


def cmd_geometry(args) -> dict:
    if args.two_bus_bfm is not None:
        p = _params(args.two_bus_bfm, ("z", "s1"), {"v0": "1", "samples": "101"})
        curve = oracle.two_bus_bfm_curve(complex(p["z"].replace("i", "j")), complex(p["s1"].replace("i", "j")),
                                         float(p["v0"]), int(p["samples"]))
        if not curve.feasible:
            raise ValueError("empty feasible set: negative discriminant")
        oracle.write_curve_csv(curve, args.out)
        return {"command": "geometry", "kind": "two_bus_bfm", "rows": len(curve.samples), "out": args.out,
                "roots": [{"ell": r.ell, "v1": r.v1, "p0": r.p0, "q0": r.q0, "high_voltage": r.high_voltage}
                          for r in curve.roots]}
    p = _params(args.two_bus_ellipse, ("g", "b"), {"lo": str(-math.pi), "hi": str(math.pi), "samples": "721"})
    arc = oracle.two_bus_angle_ellipse(float(p["g"]), float(p["b"]), float(p["lo"]), float(p["hi"]),
                                       int(p["samples"]))
    oracle.write_ellipse_csv(arc, args.out)
    return {"command": "geometry", "kind": "two_bus_ellipse", "rows": len(arc.theta), "out": args.out,
            "pi_min_jk": arc.pi_min_jk, "pi_min_kj": arc.pi_min_kj,
            "theta_min_jk": arc.theta_min_jk, "theta_min_kj": arc.theta_min_kj}


# ---------------------------------------------------------------------------
# plumbing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="opfkit", description="SOCP relaxations of optimal power flow")
    ap.add_argument("--format", choices=("json", "text"), default="json")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(p, cost=True):
        p.add_argument("--case", required=True)
        p.add_argument("--format", choices=("json", "text"), default=argparse.SUPPRESS)
        if cost:
            p.add_argument("--cost", help="loss | slack | active:c0,c1,...")

    p = sub.add_parser("solve")
    common(p)
    p.add_argument("--model", choices=("bfm", "bim", "angle"), required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("check")
    common(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("certify")
    common(p, cost=False)
    p.add_argument("--solution", required=True)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("convexify")
    common(p, cost=False)
    p.add_argument("--solution", required=True)
    p.add_argument("--tree", type=int, default=0, help="spanning tree seed")
    p.set_defaults(func=cmd_convexify)

    p = sub.add_parser("oracle")
    common(p)
    p.add_argument("--resolution", type=int)
    p.add_argument("--v-cap", type=float, dest="v_cap")
    p.add_argument("--polish", action="store_true")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("geometry")
    p.add_argument("--format", choices=("json", "text"), default=argparse.SUPPRESS)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--two-bus-bfm", dest="two_bus_bfm", metavar="PARAMS", help="z=R+Xj,s1=P+Qj[,v0=..,samples=..]")
    g.add_argument("--two-bus-ellipse", dest="two_bus_ellipse", metavar="PARAMS", help="g=..,b=..[,lo=..,hi=..,samples=..]")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_geometry)
    return ap


def _text(obj, prefix="") -> list[str]:
    if isinstance(obj, dict):
        lines = []
        for k, v in obj.items():
            lines += _text(v, f"{prefix}.{k}" if prefix else str(k))
        return lines
    if isinstance(obj, list) and any(isinstance(v, (dict, list)) for v in obj):
        lines = []
        for i, v in enumerate(obj):
            lines += _text(v, f"{prefix}[{i}]")
        return lines
    return [f"{prefix}: {json.dumps(obj)}"]


def render(report: dict, fmt: str) -> str:
    if fmt == "text":
        return "\n".join(_text(report))
    return json.dumps(report, indent=2, sort_keys=False)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    fmt = "json"
    try:
        args = build_parser().parse_args(argv)
        fmt = args.format
        report = args.func(args)
    except UsageError as exc:
        print(f"opfkit: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OpfError, ValueError, KeyError, TypeError) as exc:
        msg = str(exc) or type(exc).__name__
        print(render({"error": type(exc).__name__, "message": msg}, fmt))
        print(f"opfkit: {msg}", file=sys.stderr)
        return EXIT_DOMAIN
    text = render(report, fmt)
    out = getattr(args, "out", None)
    if out and args.command == "solve":
        Path(out).write_text(render(report, "json") + "\n")
    print(text)
    return EXIT_OK


def run(argv) -> int:
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
