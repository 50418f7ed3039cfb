"""Command-line entry point: ``helmdd run|sweep|mesh|matrix``.

Exit codes: 0 success, 1 invalid configuration, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import harness
from .assembly import assemble_system, write_matrix_market
from .linalg import NumericalError
from .mesh import build_unit_square_mesh
from .schwarz import write_subdomain_report

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2

# flag -> config field
_FLAGS = {
    "n_glob": ("--n-glob", int),
    "k": ("--k", float),
    "omega": ("--omega", float),
    "rho": ("--rho", float),
    "medium": ("--medium", str),
    "partition": ("--partition", str),
    "subdomains": ("--subdomains", int),
    "partition_file": ("--partition-file", str),
    "alpha": ("--alpha", float),
    "rtol": ("--rtol", float),
    "max_it": ("--max-it", int),
    "overlap": ("--overlap", int),
    "overlap_mode": ("--overlap-mode", str),
    "side": ("--side", str),
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file; flags override it")
    for name, (flag, typ) in _FLAGS.items():
        p.add_argument(flag, dest=name, type=typ, default=None)
    p.add_argument("--one-level", dest="one_level", action="store_true", default=None,
                   help="RAS only, no coarse space")
    p.add_argument("--large", dest="allow_large", action="store_true", default=None,
                   help=f"allow n_glob > {harness.DESK_MAX_N_GLOB}")


def _config_from_args(args: argparse.Namespace) -> harness.ExperimentConfig:
    cfg = harness.ExperimentConfig()
    if args.config:
        cfg = harness.ExperimentConfig.from_file(args.config, cfg)
    overrides = {n: getattr(args, n) for n in list(_FLAGS) + ["one_level", "allow_large"]}
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return harness.ExperimentConfig.from_mapping(overrides, cfg).validate()


def _parse_values(axis: str, text: str):
    items = [t for t in text.split(",") if t.strip()]
    if axis == "n_glob_k":
        if text.strip() == "canonical":
            return list(harness.CANONICAL_PAIRS)
        pairs = []
        for item in items:
            n, k = item.split(":")
            pairs.append((int(n), float(k)))
        return pairs
    return [float(t) for t in items]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="helmdd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="solve one configuration")
    _add_config_flags(p_run)
    p_run.add_argument("--out", help="CSV file for the run record")
    p_run.add_argument("--history", help="CSV file for the GMRES residual history")
    p_run.add_argument("--diagnostics", help="CSV file for per-subdomain eigen diagnostics")

    p_sweep = sub.add_parser("sweep", help="run a parameter sweep")
    _add_config_flags(p_sweep)
    p_sweep.add_argument("--axis", required=True, choices=harness.SWEEP_AXES)
    p_sweep.add_argument("--values", required=True,
                         help="comma list; for n_glob_k use n:k pairs or 'canonical'")
    p_sweep.add_argument("--out", help="CSV output path")
    p_sweep.add_argument("--svg", help="SVG plot output path")
    p_sweep.add_argument("--x", default="N")
    p_sweep.add_argument("--y", default="coarse_dim")
    p_sweep.add_argument("--loglog", action="store_true")

    p_mesh = sub.add_parser("mesh", help="write the text mesh dump")
    p_mesh.add_argument("--n-glob", dest="n_glob", type=int, required=True)
    p_mesh.add_argument("--out", required=True)

    p_mat = sub.add_parser("matrix", help="export the system matrix (MatrixMarket)")
    _add_config_flags(p_mat)
    p_mat.add_argument("--out", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "mesh":
            build_unit_square_mesh(args.n_glob).write(args.out)
            return EXIT_OK
        cfg = _config_from_args(args)
        if args.command == "matrix":
            mesh = build_unit_square_mesh(cfg.n_glob)
            A, _ = assemble_system(mesh, cfg.medium_spec())
            write_matrix_market(args.out, A)
            return EXIT_OK
        if args.command == "run":
            diags: list = []
            record = harness.run(cfg, diagnostics=diags)
            summary = harness.record_summary(record)
            print(json.dumps(summary, indent=2, default=str))
            if args.out:
                harness.emit_csv([record], args.out)
            if args.history:
                with open(args.history, "w") as fh:
                    fh.write("iter,residual\n")
                    for i, r in enumerate(record.residuals):
                        fh.write(f"{i},{r!r}\n")
            if args.diagnostics and diags:
                write_subdomain_report(args.diagnostics, diags)
            return EXIT_OK
        values = _parse_values(args.axis, args.values)
        records = harness.sweep(args.axis, values, cfg)
        for r in records:
            row = r.csv_row()
            status = r.error or ("ok" if r.converged else "not converged")
            print(f"{args.axis}: n_glob={row['n_glob']} k/omega={row['k_or_omega']} N={row['N']} "
                  f"alpha={row['alpha']:.4g} iters={row['iters']} coarse={row['coarse_dim']} [{status}]")
        if args.out:
            harness.emit_csv(records, args.out)
        if args.svg:
            harness.emit_svg_plot(records, args.svg, args.x, args.y, args.loglog, args.loglog)
        if any(r.error for r in records):
            return EXIT_NUMERICAL
        return EXIT_OK
    except harness.ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
