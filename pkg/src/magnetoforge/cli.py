"""Command line interface.

    magnetoforge solve     --config run.json [--formulation mixed] [--p 2] [--out DIR]
    magnetoforge compare   --config run.json [--out DIR]
    magnetoforge material  steel.csv [--out DIR]
    magnetoforge mesh-info --config run.json

Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .benchmark import KINDS, field_differences, run_suite, solve, write_csv
from .config import FORMULATION_CHOICES, ConfigError, load_config, packaged_config
from .formulations import ConfigurationError
from .material import MaterialError, fit_energy, law_summary, load_bh_csv
from .mesh import MeshError
from .solver import NewtonError, SolverError
from .sources import SourceError

logger = logging.getLogger("magnetoforge")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


def _header() -> dict:
    return {"tool": "magnetoforge", "version": __version__,
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds")}


def _write_json(path: Path, body: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"header": _header(), "report": body}, indent=2, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def solution_report(sol, mesh_level=None, excitation=None) -> dict:
    rep = sol.report.to_dict()
    rep.update({"p": sol.disc.p, "mesh": sol.disc.mesh.summary(), "field_norms": sol.norms(),
                "mesh_level": mesh_level, "excitation": excitation})
    return rep


def export_fields(sol, prefix: Path) -> list[Path]:
    """Per-element mean b and, where present, per-vertex psi as CSV."""
    d = sol.disc
    mesh = d.mesh
    b = sol.b()
    vol = d.weights.sum(axis=1)
    bmean = np.einsum("tq,tqi->ti", d.weights, b) / vol[:, None]
    cen = mesh.vertices[mesh.tets].mean(axis=1)
    paths = [prefix.with_name(prefix.name + "_b.csv")]
    with open(paths[0], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tet", "region", "x", "y", "z", "bx", "by", "bz"])
        for t in range(mesh.n_tets):
            w.writerow([t, int(mesh.tet_tags[t]), *cen[t], *bmean[t]])
    state = sol.formulation.state(sol.x)
    if state.psi is not None:
        # Lagrange numbering starts with the mesh vertices
        psi = state.psi[:mesh.n_vertices]
        paths.append(prefix.with_name(prefix.name + "_psi.csv"))
        with open(paths[1], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["vertex", "x", "y", "z", "psi"])
            for v in range(mesh.n_vertices):
                w.writerow([v, *mesh.vertices[v], psi[v]])
    return paths


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    kind = args.formulation or cfg.formulation
    p = args.p or cfg.p
    out = Path(args.out) if args.out else cfg.out_dir
    mesh = cfg.build_mesh()
    laws = cfg.build_laws(mesh.regions)
    source = cfg.build_source()
    status = EXIT_OK
    for k in (KINDS if kind == "all" else (kind,)):
        try:
            sol = solve(k, mesh, p, laws, source, cfg.newton)
        except NewtonError as exc:
            logger.error("%s", exc)
            if exc.report is not None:
                _write_json(out / f"{cfg.name}_{k}.json", exc.report.to_dict())
            status = EXIT_SOLVER
            continue
        _write_json(out / f"{cfg.name}_{k}.json", solution_report(sol))
        if cfg.write_fields:
            export_fields(sol, out / f"{cfg.name}_{k}")
        logger.info("%s: %s after %d Newton steps (%d CG steps), J = %.10g", k, sol.report.status,
                    sol.report.iterations, sol.report.cg_total, sol.report.final_energy)
    return status


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out) if args.out else cfg.out_dir
    degrees = [args.p] if args.p else None
    rows = run_suite(cfg, degrees=degrees)
    for r in rows:
        tag = f"{cfg.name}_n{r.mesh_level}_p{r.p}_at{r.excitation:g}"
        for k, sol in r.solutions.items():
            _write_json(out / "reports" / f"{tag}_{k}.json", solution_report(sol, r.mesh_level, r.excitation))
        _write_json(out / "reports" / f"{tag}_differences.json", r.differences)
    path = out / f"{cfg.name}_compare.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_csv(rows, path)
    if not args.quiet:
        print(f"{'level':>5} {'p':>2} {'excitation':>11}  {'vector | scalar | mixed':>24}  dof ratio")
        for r in rows:
            d = r.as_dict()
            print(f"{d['mesh_level']:>5} {d['p']:>2} {d['excitation']:>11.4g}  "
                  f"{d['iters_vector']:>8} | {d['iters_scalar']:>6} | {d['iters_mixed']:>5}  "
                  f"{d['dof_ratio_vector_scalar']:9.2f}")
        print(f"table written to {path}")
    return EXIT_OK


def cmd_material(args) -> int:
    path = args.path or packaged_config("steel_synthetic.csv")
    try:
        law = fit_energy(load_bh_csv(path))
    except (OSError, MaterialError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    summary = law_summary(law)
    if args.out:
        _write_json(Path(args.out) / "material_summary.json", summary)
    if not args.quiet:
        print(f"gamma = {summary['gamma']:.6g}  L = {summary['L']:.6g}  A/(m T)")
        print(f"saturation reluctivity = {summary.get('nu_sat', float('nan')):.6g}")
        print(f"max Fenchel round-trip error = {summary['roundtrip_max_rel_error']:.3e}")
        print(f"{'|b| [T]':>10} {'|h| [A/m]':>14} {'w [J/m3]':>14} {'w* [J/m3]':>14}")
        for row in summary["table"]:
            print(f"{row['b']:10.4f} {row['h']:14.6g} {row['w']:14.6g} {row['w_star']:14.6g}")
    return EXIT_OK


def cmd_mesh_info(args) -> int:
    cfg = load_config(args.config)
    summary = cfg.build_mesh().summary()
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="magnetoforge",
                                     description="Nonlinear magnetostatics: vector, scalar and mixed formulations.")
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--quiet", action="store_true", help="only print errors")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="solve one or all formulations")
    s.add_argument("--config", required=True)
    s.add_argument("--formulation", choices=FORMULATION_CHOICES)
    s.add_argument("--p", type=int, choices=(1, 2))
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("compare", parents=[common], help="three-way iteration count comparison")
    c.add_argument("--config", required=True)
    c.add_argument("--p", type=int, choices=(1, 2), help="restrict to one polynomial degree")
    c.set_defaults(func=cmd_compare)

    m = sub.add_parser("material", parents=[common], help="fit and summarize a B-H curve")
    m.add_argument("path", nargs="?", help="two-column H,B file (default: the shipped synthetic steel)")
    m.set_defaults(func=cmd_material)

    i = sub.add_parser("mesh-info", parents=[common], help="print mesh statistics")
    i.add_argument("--config", required=True)
    i.set_defaults(func=cmd_mesh_info)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ConfigurationError, MeshError, SourceError, MaterialError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
