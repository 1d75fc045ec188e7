"""Command-line front end: ``srkit <command> [options]``.

Commands write CSV (trajectories, point clouds) or JSON (reports). Every
output carries a ``meta`` record echoing the resolved configuration. Exit
codes: 0 ok, 2 configuration or domain error, 3 numerical failure, 4
violated hypothesis (transversality, horizontality).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional

import numpy as np

from . import __version__, kernels
from .endpoint import (ControlCurve, characteristic_test, controls_to_curve,
                       endpoint_differential_gramian, uniform_controls)
from .errors import (ConfigError, NonHorizontal, OutOfChart, SRKitError,
                     TransversalityFailure)
from .expr import compile_vector
from .hamflow import IntegratorOptions, integrate_geodesic
from .io import dumps_json, table_csv, trajectory_csv, trajectory_json
from .minimality import (CertificateOptions, build_wavefront, calibration_check,
                         minimality_certificate)
from .model import REGISTRY_VERSION, ChartModel, load_model
from .reparam import arclength_profile, unit_speed_reparam
from .solver import (MinimizeOptions, ShootOptions, SubmanifoldSpec, ball_sample,
                     direct_minimize, shoot_point_to_point, shoot_to_submanifolds)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_HYPOTHESIS = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# argument helpers


def parse_vector(flag: str, text, n: Optional[int] = None) -> np.ndarray:
    if isinstance(text, (list, tuple)):
        vals = text
    else:
        vals = [s for s in str(text).split(",") if s.strip() != ""]
    try:
        v = np.array([float(s) for s in vals], dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"--{flag}: expected comma-separated numbers, got {text!r}") from None
    if n is not None and v.size != n:
        raise ConfigError(f"--{flag}: expected {n} values, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ConfigError(f"--{flag}: values must be finite")
    return v


def _span(args) -> tuple:
    s = parse_vector("span", args.span, 2)
    if not s[1] > s[0]:
        raise ConfigError("--span: end must exceed start")
    return float(s[0]), float(s[1])


def _variables(model: ChartModel) -> list:
    return [f"q{i + 1}" for i in range(model.n)]


def parse_set(flag: str, text: str, model: ChartModel, anchor) -> SubmanifoldSpec:
    """``"a,b,c"`` is a point; ``"level:G1;G2"`` a level set in ``q1..qn``."""
    text = str(text).strip()
    if text.startswith("level:"):
        eqs = [e.strip() for e in text[len("level:"):].split(";") if e.strip()]
        if not eqs or len(eqs) >= model.n:
            raise ConfigError(f"--{flag}: need between 1 and n-1 equations")
        try:
            g = compile_vector(eqs, _variables(model))
        except Exception as exc:
            raise ConfigError(f"--{flag}: {exc}") from None
        return SubmanifoldSpec.level_set(lambda q: np.array(g(*q)), len(eqs), anchor=anchor)
    return SubmanifoldSpec.at(parse_vector(flag, text, model.n))


def _controls(args, model: ChartModel) -> ControlCurve:
    q0 = parse_vector("q0", args.q0, model.n)
    exprs = [s.strip() for s in str(args.controls).split(",")]
    if len(exprs) != model.n:
        raise ConfigError(f"--controls: expected {model.n} expressions in t, got {len(exprs)}")
    try:
        fn = compile_vector(exprs, ["t"])
    except Exception as exc:
        raise ConfigError(f"--controls: {exc}") from None
    if args.N < 1:
        raise ConfigError("--N: must be positive")
    return uniform_controls(q0, lambda t: np.array(fn(t)), _span(args), args.N)


def _threads(args) -> Optional[int]:
    if args.threads is not None:
        if int(args.threads) < 1:
            raise ConfigError("--threads: must be positive")
        return int(args.threads)
    env = os.environ.get("SRKIT_THREADS")
    return int(env) if env else None


def _meta(args, model: ChartModel) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items())
           if k not in ("func", "out", "config") and v is not None}
    return {"command": args.command, "config": cfg, "srkit_version": __version__,
            "backend": kernels.backend_for(model),
            "model": {"name": model.name, "n": model.n, "m": model.m,
                      "registry_version": REGISTRY_VERSION,
                      "jacobian_source": model.jacobian_source}}


def _fmt(args, default: str) -> str:
    return args.format or default


# ---------------------------------------------------------------------------
# commands


def cmd_geodesic(args, model: ChartModel) -> str:
    q0 = parse_vector("q0", args.q0, model.n)
    p0 = parse_vector("p0", args.p0, model.n)
    model.check(q0)
    opts = IntegratorOptions(method=args.method, steps=args.steps, rtol=args.rtol, atol=args.atol,
                             n_out=args.n_out)
    traj = integrate_geodesic(model, q0, p0, _span(args), opts)
    summary = {"endpoint": traj.q[-1], "H0": traj.info.get("H0"),
               "H_drift": traj.info.get("h_drift"), "exit": traj.exit_event}
    meta = _meta(args, model)
    if _fmt(args, "csv") == "csv":
        return trajectory_csv(model, traj, meta, summary)
    return trajectory_json(model, traj, meta, summary)


def cmd_bvp(args, model: ChartModel) -> str:
    span = _span(args)
    opts = ShootOptions(n_seeds=args.seeds, seed=args.seed, threads=_threads(args),
                        integrator=IntegratorOptions(method="rk4", steps=args.steps))
    q0 = parse_vector("q0", args.q0, model.n) if args.q0 is not None else None
    q1 = parse_vector("q1", args.q1, model.n) if args.q1 is not None else None
    if args.submanifold:
        if args.source is None and q0 is None or args.target is None and q1 is None:
            raise ConfigError("--submanifold: give --source/--target or --q0/--q1")
        P = parse_set("source", args.source, model, q0) if args.source else SubmanifoldSpec.at(q0)
        Q = parse_set("target", args.target, model, q1) if args.target else SubmanifoldSpec.at(q1)
        sols = shoot_to_submanifolds(model, P, Q, span, opts)
    else:
        if q0 is None or q1 is None:
            raise ConfigError("--q0 and --q1 are required")
        P = None
        sols = shoot_point_to_point(model, q0, q1, span, opts)
    out = {"meta": _meta(args, model), "solutions": [s.to_json() for s in sols]}
    for s, js in zip(sols, out["solutions"]):
        js["endpoint"] = s.trajectory.q[-1]
    if args.oracle:
        start = sols[0].q0
        mopts = MinimizeOptions(span=span, seed=args.seed,
                                start_set=P if P is not None and not P.is_point else None)
        res = direct_minimize(model, start, sols[0].trajectory.q[-1], args.oracle_N, mopts)
        best = sols[0].action
        out["oracle"] = {"action": res.action, "length": res.length,
                         "endpoint_residual": res.endpoint_residual, "N": args.oracle_N,
                         "gap": (best - res.action) / max(abs(res.action), 1e-300)}
    if _fmt(args, "json") == "csv":
        rows = [np.concatenate([s.q0, s.p0, [s.action, s.length, s.residual]]) for s in sols]
        n = model.n
        header = [f"q0_{i + 1}" for i in range(n)] + [f"p0_{i + 1}" for i in range(n)] + \
            ["action", "length", "residual"]
        return table_csv(header, rows, out["meta"], out.get("oracle"))
    return dumps_json(out)


def cmd_abnormal(args, model: ChartModel) -> str:
    c = _controls(args, model)
    rep = endpoint_differential_gramian(model, c, rank_rtol=args.rank_rtol)
    out = rep.to_json()
    out["meta"] = _meta(args, model)
    out["horizontal_image_residual"] = rep.horizontal_image_residual
    out["characteristic_checks"] = [
        {"is_characteristic": r.is_characteristic, "max_violation": r.max_violation}
        for r in (characteristic_test(model, c, s) for s in rep.characteristic_seeds)]
    if _fmt(args, "json") != "json":
        raise ConfigError("--format: abnormal reports are JSON only")
    return dumps_json(out)


def cmd_reparam(args, model: ChartModel) -> str:
    c = _controls(args, model)
    r = unit_speed_reparam(model, c, samples=args.samples)
    traj = controls_to_curve(model, r)
    L = arclength_profile(model, c).total
    speed = np.linalg.norm(r.h[:, : model.m], axis=1)
    summary = {"length": L, "length_out": arclength_profile(model, r).total,
               "max_speed_defect": float(np.max(np.abs(speed - 1.0))), "intervals": r.N}
    h = np.vstack([r.h, r.h[-1:]])
    n = model.n
    header = ["s"] + [f"q{i + 1}" for i in range(n)] + [f"h{i + 1}" for i in range(n)]
    table = np.column_stack([r.grid, traj.q, h])
    meta = _meta(args, model)
    if _fmt(args, "csv") == "csv":
        return table_csv(header, table, meta, summary)
    return dumps_json({"meta": meta, "summary": summary, "columns": header, "rows": table})


def cmd_ball(args, model: ChartModel) -> str:
    q0 = parse_vector("q0", args.q0, model.n)
    if args.radius < 0:
        raise ConfigError("--radius: must be nonnegative")
    bs = ball_sample(model, q0, args.radius, args.rays, seed=args.seed,
                     vertical_range=args.vertical_range, steps=args.steps)
    n = model.n
    header = ["length"] + [f"q{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)]
    table = np.column_stack([bs.lengths, bs.points, bs.covectors])
    summary = {"points": len(bs.points), "exited": bs.exited,
               "max_abs": np.max(np.abs(bs.points - q0), axis=0)}
    meta = _meta(args, model)
    if _fmt(args, "csv") == "csv":
        return table_csv(header, table, meta, summary)
    return dumps_json({"meta": meta, "summary": summary, "columns": header, "rows": table})


def plane_through(q0, normal) -> tuple:
    """Level set ``normal . (q - q0) = 0`` with an orthonormal parameterization."""
    normal = np.asarray(normal, float)
    _, _, Vt = np.linalg.svd(normal[None, :])
    B = Vt[1:].T
    for j in range(B.shape[1]):
        k = np.argmax(np.abs(B[:, j]))
        if B[k, j] < 0:
            B[:, j] = -B[:, j]
    S = SubmanifoldSpec.level_set(lambda q: np.array([normal @ (q - q0)]), 1,
                                  jac=lambda q: normal[None, :].copy(), anchor=q0,
                                  param=lambda u: q0 + B @ np.asarray(u, float))
    return S, B


def cmd_wavefront(args, model: ChartModel) -> str:
    q0 = parse_vector("q0", args.q0, model.n)
    normal = parse_vector("normal", args.normal, model.n)
    S, _ = plane_through(q0, normal)
    hnorm = float(np.linalg.norm(normal @ model.fields(q0)[:, : model.m]))
    if hnorm <= 1e-10:
        raise ConfigError("--normal: plane is tangent to the distribution at q0")
    seed = normal / hnorm
    tr = parse_vector("t-range", args.t_range, 2)
    half = args.u_half
    chart = build_wavefront(model, S, seed, tr, [(-half, half)] * (model.n - 1), args.spacing)
    calib = calibration_check(chart)
    meta = _meta(args, model)
    out = {"meta": meta, "chart": chart.to_json(), "calibration": calib.to_json()}
    if args.certify:
        geo = type("Geodesic", (), {"q0": q0, "p0": seed})()
        copts = CertificateOptions(seed=args.seed)
        out["certificates"] = [minimality_certificate(model, S, geo, e, copts).to_json()
                               for e in parse_vector("certify", args.certify)]
    if _fmt(args, "json") == "csv":
        n = model.n
        header = ["t"] + [f"u{j + 1}" for j in range(n - 1)] + \
            [f"F{i + 1}" for i in range(n)] + ["det_dF"]
        rows = [np.concatenate([[t], chart.u[k], chart.F[i, k], [chart.det[i, k]]])
                for i, t in enumerate(chart.t) for k in range(len(chart.u))]
        return table_csv(header, rows, meta, {"calibration": calib.to_json()})
    return dumps_json(out)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", default="heisenberg",
                        help="builtin name (flat, heisenberg, martinet) or model JSON path")
    common.add_argument("--format", choices=["csv", "json"], default=None)
    common.add_argument("--out", default="-", help="output path; '-' for stdout")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--backend", choices=["auto", "python", "compiled"], default="auto")
    common.add_argument("--config", default=None, help="JSON file whose keys override flags")
    common.add_argument("--span", default="0,1")

    p = argparse.ArgumentParser(prog="srkit", description="Sub-Riemannian geodesic toolkit")
    p.add_argument("--version", action="version", version=f"srkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("geodesic", parents=[common], help="integrate a normal geodesic")
    g.add_argument("--q0", required=True)
    g.add_argument("--p0", required=True)
    g.add_argument("--method", choices=["rk45", "rk4"], default="rk4")
    g.add_argument("--steps", type=int, default=200)
    g.add_argument("--rtol", type=float, default=1e-10)
    g.add_argument("--atol", type=float, default=1e-12)
    g.add_argument("--n-out", type=int, default=101, help="output samples for rk45 (rk4 emits every step)")
    g.set_defaults(func=cmd_geodesic)

    b = sub.add_parser("bvp", parents=[common], help="shoot normal geodesics between sets")
    b.add_argument("--q0")
    b.add_argument("--q1")
    b.add_argument("--submanifold", action="store_true",
                   help="read --source/--target as points or 'level:G1;G2' sets")
    b.add_argument("--source")
    b.add_argument("--target")
    b.add_argument("--seeds", type=int, default=32)
    b.add_argument("--steps", type=int, default=200)
    b.add_argument("--oracle", action="store_true", help="cross-check with direct minimization")
    b.add_argument("--oracle-N", type=int, default=256)
    b.set_defaults(func=cmd_bvp)

    for name, func, helptext in (("abnormal", cmd_abnormal, "endpoint-differential rank test"),
                                 ("reparam", cmd_reparam, "unit-speed reparameterization")):
        a = sub.add_parser(name, parents=[common], help=helptext)
        a.add_argument("--q0", required=True)
        a.add_argument("--controls", required=True, help="n comma-separated expressions in t")
        a.add_argument("--N", type=int, default=512)
        if name == "abnormal":
            a.add_argument("--rank-rtol", type=float, default=None)
        else:
            a.add_argument("--samples", type=int, default=None)
        a.set_defaults(func=func)

    r = sub.add_parser("ball", parents=[common], help="sample the normal-geodesic sphere")
    r.add_argument("--q0", required=True)
    r.add_argument("--radius", type=float, required=True)
    r.add_argument("--rays", type=int, default=256)
    r.add_argument("--vertical-range", type=float, default=None)
    r.add_argument("--steps", type=int, default=200)
    r.set_defaults(func=cmd_ball)

    w = sub.add_parser("wavefront", parents=[common], help="wavefront chart from a plane")
    w.add_argument("--q0", required=True, help="base point of the plane")
    w.add_argument("--normal", required=True, help="plane normal covector")
    w.add_argument("--t-range", default="0,0.1")
    w.add_argument("--u-half", type=float, default=0.05)
    w.add_argument("--spacing", type=float, default=1e-2)
    w.add_argument("--certify", default=None, help="comma-separated segment lengths to certify")
    w.set_defaults(func=cmd_wavefront)
    return p


def apply_config(args, parser: argparse.ArgumentParser) -> None:
    if not args.config:
        return
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"--config: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("--config: expected a JSON object")
    for key, val in cfg.items():
        dest = key.replace("-", "_")
        if dest in ("command", "func", "config"):
            continue
        if not hasattr(args, dest):
            raise ConfigError(f"--config: unknown option {key!r}")
        if isinstance(val, list):
            val = ",".join(repr(float(v)) for v in val)
        setattr(args, dest, val)


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        apply_config(args, parser)
        kernels.set_backend(args.backend)
        try:
            model = load_model(args.model)
        except (ConfigError, KeyError, OSError, ValueError) as exc:
            raise ConfigError(f"--model: {exc}") from None
        text = args.func(args, model)
    except ConfigError as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_CONFIG
    except (TransversalityFailure, NonHorizontal) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=stderr)
        cert = getattr(exc, "certificate", None)
        if cert is not None:
            print(dumps_json({"certificate": cert}), file=stderr, end="")
        return EXIT_HYPOTHESIS
    except OutOfChart as exc:
        print(f"error: OutOfChart: {exc}", file=stderr)
        return EXIT_NUMERIC if exc.partial is not None else EXIT_CONFIG
    except SRKitError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_CONFIG
    if args.out == "-":
        stdout.write(text)
    else:
        with open(args.out, "w") as fh:
            fh.write(text)
    return EXIT_OK


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
