"""Command-line driver: instance generation, solving, benchmark sweeps.

Exit codes for ``solve``: 0 when the DIMACS measures meet the tolerance,
1 when the solver stopped short, 2 on input errors, 3 on solver failures.
``bench`` records per-row failures in the CSV and keeps going.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import _threads  # noqa: F401

import numpy as np

from .ip import IpConfig, SolverFailure, ip_solve
from .model import SdpaParseError, load_sdpa, write_sdpa
from .pcg import CgTolerance
from .pdal import PdalConfig, pdal_config_profile, pdal_solve
from .report import CSV_COLUMNS, SolveReport
from .truss import (
    TrussSdpSpec,
    assemble_sdp,
    gen_ground,
    instance_name,
    load_geometry,
    save_geometry,
    verify_solution,
)

PRECOND_KINDS = ("alpha", "beta", "hybrid", "tilde", "gamma", "delta", "none")


def _rank_arg(value: str):
    if value == "auto":
        return "auto"
    return int(value)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SdpaParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lorank",
        description="Matrix-free SDP solvers with low-rank preconditioning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a truss topology instance")
    gen.add_argument("variant", choices=("tru", "vib"))
    gen.add_argument("size", type=int, help="grid size g (g x g nodes)")
    gen.add_argument("--eps", type=float, default=0.0, help="lower volume bound (e-variant when > 0)")
    gen.add_argument("--gamma", type=float, default=1.0, help="compliance bound")
    gen.add_argument("--t-upper", type=float, default=1e4)
    gen.add_argument("--rho", type=float, default=1.0, help="mass density (vib)")
    gen.add_argument("--m0", type=float, default=1.0, help="nonstructural mass (vib)")
    gen.add_argument("--lambda-bar", type=float, default=None, help="vibration threshold (vib)")
    gen.add_argument("--out", type=Path, default=Path("."), help="output directory")
    gen.set_defaults(func=cmd_gen)

    solve = sub.add_parser("solve", help="solve an SDPA sparse instance")
    _solver_arguments(solve)
    solve.add_argument("input", type=Path)
    solve.add_argument("--out", type=Path, default=None, help="write the JSON report here")
    solve.add_argument("--csv-append", type=Path, default=None,
                       help="append the report row to this CSV (header written when new)")
    solve.add_argument("--verify", action="store_true", help="run the mechanical verifier (needs the geometry sidecar)")
    solve.set_defaults(func=cmd_solve)

    bench = sub.add_parser("bench", help="solve a list of instances into a CSV table")
    _solver_arguments(bench)
    bench.add_argument("inputs", type=Path, nargs="*")
    bench.add_argument("--csv", type=Path, default=None, help="output CSV (default stdout)")
    bench.set_defaults(func=cmd_bench)
    return parser


def _solver_arguments(p: argparse.ArgumentParser) -> None:
    p.add_argument("--solver", choices=("ip", "pdal"), default="ip")
    p.add_argument("--precond", choices=PRECOND_KINDS, default=None,
                   help="default: hybrid for ip, gamma for pdal")
    p.add_argument("--rank", type=_rank_arg, default=1,
                   help="expected dual rank per block, or 'auto'")
    p.add_argument("--tol", type=float, default=1e-5, help="DIMACS stopping tolerance")
    p.add_argument("--cg-maxiter", type=int, default=100000)
    p.add_argument("--cg-tol0", type=float, default=0.01, help="initial CG tolerance")
    p.add_argument("--cg-floor", type=float, default=1e-6, help="CG tolerance floor")
    p.add_argument("--maxiter", type=int, default=None,
                   help="outer iteration cap (default: 200 ip, 500 pdal)")
    p.add_argument("--tau-rule", choices=("cluster_mean", "min"), default="cluster_mean")
    p.add_argument("--seed", type=int, default=0, help="recorded in the report; solves are deterministic")
    p.add_argument("--diag", action="store_true", help="dense diagnostics for n <= 400")
    p.add_argument("--pdal-profile", choices=("auto", "tru", "vib"), default="auto")
    p.add_argument("--pdal-config", type=Path, default=None,
                   help="JSON file with pi_lin_min, pi_lmi_min, pi_lin_upd, "
                        "pi_lmi_upd, gamma_lin, gamma_lmi, r, eps overrides")


def cmd_gen(args) -> int:
    gs = gen_ground(args.size, args.variant)
    spec = TrussSdpSpec(
        gamma_compl=args.gamma,
        t_lower=args.eps,
        t_upper=args.t_upper,
        vibration=args.variant == "vib",
        lambda_bar=args.lambda_bar,
        rho=args.rho,
        m0=args.m0,
    )
    prob = assemble_sdp(gs, spec)
    name = instance_name(args.variant, args.size, args.eps)
    args.out.mkdir(parents=True, exist_ok=True)
    dat = args.out / f"{name}.dat-s"
    geo = args.out / f"{name}.geom.json"
    write_sdpa(prob, dat, comment=f"{name}: truss topology SDP, n={prob.n}, blocks={prob.block_dims}, lin={prob.nu}")
    save_geometry(gs, spec, geo)
    print(f"wrote {dat} (n={prob.n}, m={prob.block_dims}, lin={prob.nu}) and {geo}")
    return 0


def _sidecar_path(input_path: Path) -> Path:
    stem = input_path.name
    if stem.endswith(".dat-s"):
        stem = stem[: -len(".dat-s")]
    else:
        stem = input_path.stem
    return input_path.parent / f"{stem}.geom.json"


def _detect_profile(input_path: Path) -> str:
    side = _sidecar_path(input_path)
    if side.exists():
        try:
            _, spec = load_geometry(side)
            return "vib" if spec.vibration else "tru"
        except (json.JSONDecodeError, KeyError, TypeError):
            pass
    return "tru"


def _pdal_config(args, input_path: Path) -> PdalConfig:
    profile = args.pdal_profile
    if profile == "auto":
        profile = _detect_profile(input_path)
    cfg = pdal_config_profile(profile)
    if args.pdal_config is not None:
        with open(args.pdal_config) as fh:
            overrides = json.load(fh)
        allowed = {
            "pi_lin_min", "pi_lmi_min", "pi_lin_upd", "pi_lmi_upd",
            "gamma_lin", "gamma_lmi", "r", "eps",
        }
        unknown = set(overrides) - allowed
        if unknown:
            raise SdpaParseError(f"unknown PDAL config keys: {sorted(unknown)}")
        for key, val in overrides.items():
            setattr(cfg, key, float(val))
    cfg.eps_dimacs = args.tol
    cfg.rank = args.rank
    cfg.precond = args.precond or "gamma"
    cfg.tau_rule = args.tau_rule
    cfg.cg_tol = CgTolerance(current=args.cg_tol0, floor=args.cg_floor)
    cfg.cg_maxiter = args.cg_maxiter
    if args.maxiter is not None:
        cfg.max_outer = args.maxiter
    cfg.diag = args.diag
    return cfg


def _run(args, input_path: Path) -> tuple[SolveReport, "object"]:
    prob = load_sdpa(input_path)
    if args.solver == "ip":
        cfg = IpConfig(
            eps_dimacs=args.tol,
            max_iter=args.maxiter if args.maxiter is not None else 200,
            rank=args.rank,
            precond=args.precond or "hybrid",
            tau_rule=args.tau_rule,
            cg_tol=CgTolerance(current=args.cg_tol0, floor=args.cg_floor),
            cg_maxiter=args.cg_maxiter,
            diag=args.diag,
        )
        pt, report = ip_solve(prob, cfg)
    else:
        cfg = _pdal_config(args, input_path)
        pt, report = pdal_solve(prob, cfg)
    report.instance = input_path.name
    report.seed = args.seed
    return report, pt


def cmd_solve(args) -> int:
    report, pt = _run(args, args.input)
    payload = report.to_dict()
    if args.verify:
        side = _sidecar_path(args.input)
        if side.exists():
            gs, spec = load_geometry(side)
            payload["verification"] = verify_solution(gs, spec, pt.y, pt.X.blocks[0])
        else:
            payload["verification"] = {"error": f"no geometry sidecar at {side}"}
    text = json.dumps(payload, indent=2, default=_np_default)
    if args.csv_append is not None:
        new = not args.csv_append.exists()
        with open(args.csv_append, "a", newline="") as fh:
            writer = csv.writer(fh)
            if new:
                writer.writerow(CSV_COLUMNS)
            writer.writerow(report.csv_row())
    if args.out is not None:
        args.out.write_text(text + "\n")
        print(f"report written to {args.out} (status={report.status}, dimacs={report.dimacs_max():.3g})")
    else:
        print(text)
    return 0 if report.converged else 1


def cmd_bench(args) -> int:
    rows = [CSV_COLUMNS]
    for path in args.inputs:
        try:
            report, _ = _run(args, path)
            rows.append(report.csv_row())
        except (SolverFailure, SdpaParseError, FileNotFoundError) as exc:
            row = [str(path.name), args.solver, args.precond or "", f"failed: {exc}"]
            row += [""] * (len(CSV_COLUMNS) - len(row))
            rows.append(row)
    if args.csv is not None:
        with open(args.csv, "w", newline="") as fh:
            csv.writer(fh).writerows(rows)
        print(f"wrote {args.csv} ({len(rows) - 1} rows)")
    else:
        csv.writer(sys.stdout).writerows(rows)
    return 0


def _np_default(obj):
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


if __name__ == "__main__":
    sys.exit(main())
