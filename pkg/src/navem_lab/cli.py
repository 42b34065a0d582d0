"""Command-line interface: ``navem-lab <command> ...``.

Exit codes: 0 success, 2 invalid input or validation failure, 3 non-finite
training, 4 missing trained model, 5 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from navem_lab import errors
from navem_lab.basis.bundle import STRATEGIES, BasisBundle
from navem_lab.basis.datasets import dataset_from_meshes, dataset_random_quads, load_dataset, save_dataset
from navem_lab.basis.harmonic import PhiModel, fit_phi
from navem_lab.basis.losses import evaluate_metrics
from navem_lab.basis.training import PRESETS, Architecture, Protocol, train_strategy
from navem_lab.geometry import PolygonClass
from navem_lab.mesh import (FIXTURES, build_dof_map, fixture_path, gen_quad_convex_concave, gen_triangle, load_mesh,
                            mesh_to_json)
from navem_lab.problems import named_problem
from navem_lab.solver import (METHODS, NewtonConfig, assemble, compute_errors, newton_solve, prepare,
                              solve_linear)
from navem_lab.svg import convergence_svg, fitted_slope

log = logging.getLogger("navem_lab")

EXIT_OK, EXIT_INVALID, EXIT_NONFINITE, EXIT_MISSING, EXIT_SOLVER = 0, 2, 3, 4, 5
RESULT_FIELDS = ["mesh", "h", "n_dof", "method", "err0", "errgrad", "assemble_s", "solve_s", "newton_iters"]
PROBLEMS = ("poisson", "dar", "nonlinear", "poisson-linear", "dar-linear", "nonlinear-linear")


class UsageError(Exception):
    pass


# -- helpers ------------------------------------------------------------------

def resolve_mesh(ref):
    """A mesh file path, or ``fixture:<name>`` for a committed fixture."""
    if ref.startswith("fixture:"):
        return load_mesh(fixture_path(ref.split(":", 1)[1]))
    return load_mesh(ref)


def generate_mesh(kind, n, perturb=0.0, seed=0):
    if kind == "quadcc":
        return gen_quad_convex_concave(n, perturb, seed)
    if kind == "quad-convex":
        return gen_quad_convex_concave(n, perturb, seed, concave=False)
    if kind == "tri":
        return gen_triangle(n)
    raise UsageError(f"unknown mesh kind {kind!r}")


def _parse_class(tag):
    try:
        return PolygonClass.from_tag(tag)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"bad polygon class {tag!r} (expected e.g. 4_convex)") from exc


def _csv_text(rows, fields):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _emit(text, out):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def _fmt(x):
    return format(float(x), ".10g")


def _load_bundle(method, models):
    if method in ("vem", "fem"):
        return None
    if models is None:
        raise errors.MissingModel(f"method {method!r} needs --models DIR")
    return BasisBundle.load(models, method.upper())


# -- running one problem --------------------------------------------------------

def run_problem(mesh, method, problem, bundle=None, threads=1, newton=None):
    """Solve ``problem`` with ``method`` on ``mesh``; returns (values, results row, newton result)."""
    t0 = time.perf_counter()
    disc = prepare(mesh, method, bundle, threads=threads)
    nres = None
    if problem.nonlinear:
        t1 = time.perf_counter()
        nres = newton_solve(disc, problem, newton)
        values = nres.values
        assemble_s, solve_s = t1 - t0, time.perf_counter() - t1
        iters = nres.iterations
    else:
        system = assemble(disc, problem)
        t1 = time.perf_counter()
        values = solve_linear(system)
        assemble_s, solve_s = t1 - t0, time.perf_counter() - t1
        iters = 0
    err0, errgrad = compute_errors(disc, values, problem.exact)
    row = {"mesh": mesh.name, "h": _fmt(mesh.h), "n_dof": disc.dof_map.n_dof, "method": method,
           "err0": _fmt(err0), "errgrad": _fmt(errgrad), "assemble_s": f"{assemble_s:.6f}",
           "solve_s": f"{solve_s:.6f}", "newton_iters": iters}
    return values, row, nres


def newton_statistics(vem, other):
    """Newton statistics: ratios of total time, iteration count and time per iteration (VEM over method)."""
    return {"r_T": vem.total_s / other.total_s,
            "r_m": vem.iterations / other.iterations,
            "r_ATI": vem.average_time_per_iteration / other.average_time_per_iteration}


# -- commands -------------------------------------------------------------------

def cmd_mesh_gen(args):
    mesh = generate_mesh(args.kind, args.n, args.perturb, args.seed)
    _emit(mesh_to_json(mesh), args.out)
    return EXIT_OK


def cmd_mesh_info(args):
    mesh = resolve_mesh(args.mesh)
    lines = [f"name: {mesh.name}", f"vertices: {mesh.n_vertices}", f"cells: {mesh.n_cells}",
             f"free_vertices: {build_dof_map(mesh).n_dof}", f"h: {_fmt(mesh.h)}", "classes:"]
    lines += [f"  {tag}: {count}" for tag, count in sorted(mesh.class_histogram().items())]
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_dataset(args):
    if args.polygon_class is None:
        raise UsageError("--class is required")
    pc = _parse_class(args.polygon_class)
    if args.from_mesh:
        polys = dataset_from_meshes([resolve_mesh(m) for m in args.from_mesh], pc)[: args.count]
    elif pc.vertex_count == 4:
        polys = dataset_random_quads(args.count, "convex" if pc.convex else "concave", seed=args.seed)
    else:
        raise UsageError("random datasets exist only for quadrilaterals; use --from-mesh")
    if not polys:
        raise UsageError(f"no polygons of class {pc.tag} found")
    if args.out is None:
        raise UsageError("--out is required")
    save_dataset(polys, args.out)
    log.info("wrote %d polygons of class %s to %s", len(polys), pc.tag, args.out)
    return EXIT_OK


def _training_setup(args):
    arch, prot = PRESETS[args.preset]
    arch = Architecture(args.layers or arch.n_layers, args.width or arch.width)
    overrides = {k: v for k, v in (("adam_epochs", args.adam_epochs), ("qn_epochs", args.qn_epochs),
                                   ("lr0", args.lr0), ("degree", args.degree)) if v is not None}
    prot = Protocol(**{**prot.__dict__, **overrides, "seed": args.seed})
    return arch, prot


def cmd_train(args):
    if args.strategy is None or not args.polygon_class:
        raise UsageError("--strategy and --class are required")
    if args.out is None:
        raise UsageError("--out DIR is required")
    strategy = args.strategy.upper()
    arch, prot = _training_setup(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_dir = Path(args.checkpoint_dir) if args.checkpoint_dir else out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    phi = None
    if strategy == "H":
        phi_path = out / "phi_model.json"
        phi = PhiModel.load(phi_path) if phi_path.exists() else fit_phi()
    rows = []
    for tag in args.polygon_class:
        pc = _parse_class(tag)
        if args.dataset:
            polys = [p for p in load_dataset(args.dataset) if p.class_tag == pc]
        elif args.from_mesh:
            polys = dataset_from_meshes([resolve_mesh(m) for m in args.from_mesh], pc)[: args.count]
        elif pc.vertex_count == 4:
            polys = dataset_random_quads(args.count, "convex" if pc.convex else "concave", seed=args.seed)
        else:
            raise UsageError(f"class {pc.tag} needs --dataset or --from-mesh")
        if not polys:
            raise UsageError(f"no training polygons of class {pc.tag}")
        log.info("training %s on %d polygons of class %s", strategy, len(polys), pc.tag)

        def progress(rec, tag=pc.tag):
            if rec.epoch % 100 == 0:
                log.info("%s %s %s epoch %d loss %.4e", strategy, tag, rec.net, rec.epoch, rec.loss)

        try:
            result = train_strategy(strategy, polys, arch, prot, phi=phi, checkpoint_dir=ckpt_dir, log=progress)
        except errors.NonFinite:
            log.error("non-finite loss while training %s; last good checkpoint kept in %s", pc.tag, ckpt_dir)
            raise
        result.bundle.save(out)
        for r in result.history:
            rows.append({"class": pc.tag, "epoch": r.epoch, "loss": repr(r.loss),
                         "wall_s": "0" if args.no_timings else f"{r.wall_s:.6f}", "phase": r.phase, "net": r.net})
    _emit(_csv_text(rows, ["epoch", "loss", "wall_s", "phase", "net", "class"]), out / "loss_history.csv")
    return EXIT_OK


def _newton_config(args):
    return NewtonConfig(args.rtol, args.atol, args.step_tol, args.max_iter)


def cmd_solve(args):
    if args.mesh is None:
        raise UsageError("--mesh is required")
    mesh = resolve_mesh(args.mesh)
    problem = named_problem(args.problem, args.lam)
    bundle = _load_bundle(args.method, args.models)
    values, row, _ = run_problem(mesh, args.method, problem, bundle, args.threads, _newton_config(args))
    if args.no_timings:
        row["assemble_s"] = row["solve_s"] = "0"
    _emit(_csv_text([row], RESULT_FIELDS), args.out)
    if args.field:
        doc = {"mesh": mesh.name, "method": args.method, "problem": args.problem,
               "values": [float(v) for v in values]}
        Path(args.field).write_text(json.dumps(doc, indent=1) + "\n")
    return EXIT_OK


def cmd_convergence(args):
    if args.out is None:
        raise UsageError("--out DIR is required")
    methods = [m.strip().lower() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown methods: {', '.join(bad)}")
    if args.meshes:
        meshes = [resolve_mesh(m) for m in args.meshes]
    else:
        levels = [int(x) for x in args.levels.split(",")]
        meshes = [generate_mesh(args.family, n, args.perturb, args.mesh_seed) for n in levels]
    problem = named_problem(args.problem, args.lam)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, series, newton = [], {}, {}
    failures = 0
    for method in methods:
        try:
            bundle = _load_bundle(method, args.models)
        except errors.MissingModel as exc:
            bundle, load_error = None, exc
        else:
            load_error = None
        h, e0, e1 = [], [], []
        for mesh in meshes:
            try:
                if load_error is not None:
                    raise load_error
                _, row, nres = run_problem(mesh, method, problem, bundle, args.threads, _newton_config(args))
                row["status"] = "ok"
                h.append(mesh.h)
                e0.append(float(row["err0"]))
                e1.append(float(row["errgrad"]))
                if nres is not None:
                    newton[(method, mesh.name)] = nres
            except (errors.NavemError, ValueError) as exc:
                log.warning("%s on %s failed: %s", method, mesh.name, exc)
                failures += 1
                row = dict.fromkeys(RESULT_FIELDS, "")
                row.update(mesh=mesh.name, h=_fmt(mesh.h), method=method, status="failed")
            if args.no_timings and row["status"] == "ok":
                row["assemble_s"] = row["solve_s"] = "0"
            rows.append(row)
        if h:
            series[method] = (h, e0, e1)
            log.info("%s slopes: err0 %.3f errgrad %.3f", method, fitted_slope(h, e0), fitted_slope(h, e1))
    (out / "convergence.csv").write_text(_csv_text(rows, RESULT_FIELDS + ["status"]))
    if series:
        (out / "convergence.svg").write_text(convergence_svg(series, title=f"{args.problem} convergence"))
    stat_rows = []
    for (method, mesh_name), nres in newton.items():
        vem = newton.get(("vem", mesh_name))
        if method != "vem" and vem is not None:
            s = newton_statistics(vem, nres)
            stat_rows.append({"mesh": mesh_name, "method": method, "lam": args.lam,
                              **{k: ("0" if args.no_timings and k != "r_m" else _fmt(v)) for k, v in s.items()}})
    if stat_rows:
        (out / "newton_stats.csv").write_text(_csv_text(stat_rows, ["mesh", "method", "lam", "r_T", "r_m", "r_ATI"]))
    if failures == len(rows):
        log.error("every run failed")
        return EXIT_SOLVER
    return EXIT_OK


def cmd_metrics(args):
    if args.models is None or args.mesh is None:
        raise UsageError("--models and --mesh are required")
    mesh = resolve_mesh(args.mesh)
    strategies = [s.strip().upper() for s in args.strategies.split(",")] if args.strategies else list(STRATEGIES)
    rows = []
    for s in strategies:
        if not any(Path(args.models).glob(f"{s}_*.json")):
            if args.strategies:
                raise errors.MissingModel(f"no {s} models in {args.models}")
            continue
        bundle = BasisBundle.load(args.models, s)
        bundle.check_mesh(mesh)
        polys = [p for p in mesh.polygons if p.nv > 3]
        tags = sorted({p.class_tag.tag for p in polys})
        for tag in tags:
            sel = [p for p in polys if p.class_tag.tag == tag]
            ephi, eq = evaluate_metrics(bundle, sel)
            rows.append({"strategy": s, "class": tag, "n_elements": len(sel), "eps_phi": _fmt(ephi), "eps_q": _fmt(eq)})
        ephi, eq = evaluate_metrics(bundle, polys)
        rows.append({"strategy": s, "class": "all", "n_elements": len(polys), "eps_phi": _fmt(ephi), "eps_q": _fmt(eq)})
    if not rows:
        raise errors.MissingModel(f"no trained models found in {args.models}")
    _emit(_csv_text(rows, ["strategy", "class", "n_elements", "eps_phi", "eps_q"]), args.out)
    return EXIT_OK


# -- parser -----------------------------------------------------------------------

def _default_threads():
    try:
        return max(1, int(os.environ.get("NAVEM_LAB_THREADS", "1")))
    except ValueError:
        return 1


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--threads", type=int, default=_default_threads(),
                   help="worker threads (default $NAVEM_LAB_THREADS or 1)")
    p.add_argument("--out", default=None, help="output file or directory")
    p.add_argument("--config", default=None, help="JSON file of option values; command-line flags win")
    p.add_argument("--no-timings", action="store_true", help="write 0 for wall-clock columns (byte-stable output)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _newton_flags(p):
    p.add_argument("--lam", type=float, default=1.0, help="nonlinear parameter lambda (default 1.0)")
    p.add_argument("--rtol", type=float, default=1e-8, help="relative residual tolerance")
    p.add_argument("--atol", type=float, default=1e-12, help="absolute residual tolerance")
    p.add_argument("--step-tol", type=float, default=1e-10, help="Newton step tolerance")
    p.add_argument("--max-iter", type=int, default=50)


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="navem-lab", description="Neural virtual element bases and solvers.")
    sub = parser.add_subparsers(dest="command", required=True)
    leaves = {}

    mesh = sub.add_parser("mesh", help="generate or inspect meshes")
    msub = mesh.add_subparsers(dest="mesh_command", required=True)
    g = msub.add_parser("gen", parents=[common], help="generate a structured mesh")
    g.add_argument("--kind", choices=["quadcc", "quad-convex", "tri"], default="quadcc")
    g.add_argument("--n", type=int, default=8, help="cells per side")
    g.add_argument("--perturb", type=float, default=0.0, help="vertex perturbation as a fraction of 1/n")
    g.set_defaults(func=cmd_mesh_gen)
    leaves["mesh gen"] = g
    i = msub.add_parser("info", parents=[common], help="print mesh statistics")
    i.add_argument("mesh", help=f"mesh file or fixture:<name> ({', '.join(FIXTURES)})")
    i.set_defaults(func=cmd_mesh_info)
    leaves["mesh info"] = i

    d = sub.add_parser("dataset", parents=[common], help="write a training dataset")
    d.add_argument("--class", dest="polygon_class", help="polygon class tag, e.g. 4_concave")
    d.add_argument("--count", type=int, default=1000)
    d.add_argument("--from-mesh", nargs="+", help="sample cells of the class from these meshes")
    d.set_defaults(func=cmd_dataset)
    leaves["dataset"] = d

    t = sub.add_parser("train", parents=[common], help="train basis networks")
    t.add_argument("--strategy", choices=["H", "B", "P", "h", "b", "p"])
    t.add_argument("--class", dest="polygon_class", nargs="+", help="polygon class tags")
    t.add_argument("--dataset", help="dataset file (mesh JSON schema)")
    t.add_argument("--from-mesh", nargs="+", help="take training cells from these meshes")
    t.add_argument("--count", type=int, default=1000, help="random quadrilaterals per class")
    t.add_argument("--preset", choices=sorted(PRESETS), default="full")
    t.add_argument("--layers", type=int)
    t.add_argument("--width", type=int)
    t.add_argument("--adam-epochs", type=int)
    t.add_argument("--qn-epochs", type=int)
    t.add_argument("--lr0", type=float)
    t.add_argument("--degree", type=int, help="harmonic degree for H")
    t.add_argument("--checkpoint-dir")
    t.set_defaults(func=cmd_train)
    leaves["train"] = t

    s = sub.add_parser("solve", parents=[common], help="solve a model problem")
    s.add_argument("problem", choices=PROBLEMS)
    s.add_argument("--method", choices=METHODS, default="vem")
    s.add_argument("--mesh", help="mesh file or fixture:<name>")
    s.add_argument("--models", help="trained bundle directory")
    s.add_argument("--field", help="write vertex values as JSON here")
    _newton_flags(s)
    s.set_defaults(func=cmd_solve)
    leaves["solve"] = s

    c = sub.add_parser("convergence", parents=[common], help="error study over a mesh family")
    c.add_argument("problem", choices=PROBLEMS)
    c.add_argument("--methods", default="vem,fem")
    c.add_argument("--family", choices=["quadcc", "quad-convex", "tri"], default="tri")
    c.add_argument("--levels", default="4,8,16,32", help="cells per side, comma separated")
    c.add_argument("--perturb", type=float, default=0.2)
    c.add_argument("--mesh-seed", type=int, default=1)
    c.add_argument("--meshes", nargs="+", help="explicit mesh files instead of a generated family")
    c.add_argument("--models")
    _newton_flags(c)
    c.set_defaults(func=cmd_convergence)
    leaves["convergence"] = c

    m = sub.add_parser("metrics", parents=[common], help="polynomial reproduction metrics")
    m.add_argument("--models")
    m.add_argument("--mesh")
    m.add_argument("--strategies", help="comma-separated subset of H,B,P")
    m.set_defaults(func=cmd_metrics)
    leaves["metrics"] = m
    return parser, leaves


def parse(argv=None):
    parser, leaves = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        key = "mesh " + args.mesh_command if args.command == "mesh" else args.command
        leaf = leaves[key]
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config must be a JSON object")
        known = {a.dest for a in leaf._actions} - {"help", "config", "func"}
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        leaf.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def main(argv=None):
    try:
        args = parse(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except errors.NonFinite as exc:
        print(f"error: non-finite values: {exc}", file=sys.stderr)
        return EXIT_NONFINITE
    except errors.MissingModel as exc:
        print(f"error: missing model: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (errors.SingularMatrix, errors.NewtonDiverged) as exc:
        print(f"error: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (errors.NavemError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
