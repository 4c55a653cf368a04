"""Command-line driver: convergence studies with table artifacts.

`brinkhdg solve` runs one study (one case, one cell kind, one degree)
over a mesh ladder and writes the CSV and markdown tables.  Identical
configurations produce bit-identical CSV files.
"""

from __future__ import annotations

import argparse
import os
import sys

from .verify import make_case, manufactured_case, run_convergence

_K_RANGE = {"quad": (0, 3), "triangle": (1, 3)}
_KIND_OF_FLAG = {"quad": "quad", "tri": "triangle"}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="brinkhdg",
        description="Divergence-conforming hybridized solver for the "
                    "Brinkman equations on the unit square.")
    sub = parser.add_subparsers(dest="command", required=True)
    s = sub.add_parser(
        "solve", help="run a convergence study",
        description="Solve the manufactured problem on a ladder of "
                    "uniformly refined meshes and tabulate errors.")
    s.add_argument("--test", type=int, choices=(1, 2, 3),
                   help="reference setting: 1 = (nu 1, gamma 1, m 2), "
                        "2 = (1, 1, 20), 3 = (1e-4, 1, 2)")
    s.add_argument("--nu", type=float, help="viscosity (custom case)")
    s.add_argument("--gamma", type=float, default=1.0,
                   help="inverse permeability, scalar times identity")
    s.add_argument("--m", type=int, help="pressure frequency (custom case)")
    s.add_argument("--cells", choices=("quad", "tri"), default="quad",
                   help="cell kind (default quad)")
    s.add_argument("--k", type=int, default=1,
                   help="polynomial degree: 0..3 on quads, 1..3 on triangles")
    s.add_argument("--levels", type=int, default=3,
                   help="number of refinement levels (default 3)")
    s.add_argument("--base-n", type=int, default=None,
                   help="cells per direction on level 1 "
                        "(default 8 quads, 4 triangles)")
    s.add_argument("--quad-degree", type=int, default=None,
                   help="override the assembly quadrature degree "
                        "(floored at 2k+2)")
    s.add_argument("--check-oracle", action="store_true",
                   help="also run the uncondensed solve on the coarsest "
                        "level and report the discrepancy")
    s.add_argument("--out-dir", default=".",
                   help="directory for table artifacts (default .)")
    s.add_argument("--prefix", default=None,
                   help="artifact file prefix (default derived from config)")
    s.add_argument("--dump-solution", action="store_true",
                   help="write the finest-level coefficient arrays to text")
    s.add_argument("--force-k", action="store_true",
                   help="bypass the default degree range check")
    return parser


def _configure_threads():
    val = os.environ.get("BRINKHDG_THREADS")
    if val is None:
        return None
    try:
        count = int(val)
        if count < 1:
            raise ValueError
    except ValueError:
        raise SystemExit(
            f"brinkhdg: invalid BRINKHDG_THREADS value {val!r} "
            "(expected a positive integer)")
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        print("note: threadpoolctl not installed; BRINKHDG_THREADS ignored",
              file=sys.stderr)
        return None
    threadpool_limits(limits=count)
    return count


def _resolve_case(args, parser):
    custom = [v is not None for v in (args.nu, args.m)]
    if args.test is not None:
        if any(custom):
            parser.error("--test cannot be combined with --nu/--m")
        return make_case(args.test)
    if not all(custom):
        parser.error("provide --test or both --nu and --m")
    if args.nu <= 0:
        parser.error("--nu must be positive")
    if args.gamma <= 0:
        parser.error("--gamma must be positive")
    if args.m < 1:
        parser.error("--m must be a positive integer")
    return manufactured_case(args.nu, args.gamma, args.m,
                             label=f"nu={args.nu:g} gamma={args.gamma:g} "
                                   f"m={args.m}")


def run(args, parser):
    kind = _KIND_OF_FLAG[args.cells]
    lo, hi = _K_RANGE[kind]
    if not args.force_k and not lo <= args.k <= hi:
        parser.error(f"--k must be in [{lo}, {hi}] for {args.cells} cells "
                     "(use --force-k to override)")
    if args.k < 0:
        parser.error("--k must be nonnegative")
    if args.levels < 1:
        parser.error("--levels must be >= 1")
    if args.base_n is not None and args.base_n < 1:
        parser.error("--base-n must be >= 1")

    threads = _configure_threads()
    if threads:
        print(f"thread limit: {threads}")
    case = _resolve_case(args, parser)
    if kind == "quad" and args.k == 0:
        print("note: k=0 on quadrilaterals is outside the benchmarked "
              "range; postprocessing gains no extra order")

    try:
        table = run_convergence(case, kind, args.k, args.levels,
                                base_n=args.base_n,
                                check_oracle=args.check_oracle,
                                quad_degree=args.quad_degree)
    except RuntimeError as exc:
        print(f"brinkhdg: {exc}", file=sys.stderr)
        return 1

    slug = (f"test{args.test}" if args.test is not None
            else f"nu{args.nu:g}_gamma{args.gamma:g}_m{args.m}")
    prefix = args.prefix or f"brinkhdg_{args.cells}_k{args.k}_{slug}"
    os.makedirs(args.out_dir, exist_ok=True)
    csv_path = os.path.join(args.out_dir, prefix + ".csv")
    md_path = os.path.join(args.out_dir, prefix + ".md")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(table.to_csv())
    with open(md_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(table.to_markdown())

    print(f"case: {case.label}  cells: {args.cells}  k: {args.k}")
    print(table.to_markdown(), end="")
    for row in table.rows:
        print(f"level {row.level}: {row.n_ele} cells solved in "
              f"{row.seconds:.2f} s")
        if row.oracle_discrepancy is not None:
            print(f"oracle discrepancy: {row.oracle_discrepancy:.3e}")
    print(f"wrote {csv_path}")
    print(f"wrote {md_path}")

    if args.dump_solution:
        from .fespace import Spaces
        from .hybrid import solve_hybrid, write_solution_text
        from .mesh import build_structured_mesh
        from .verify import data_quadrature_degree
        row = table.rows[-1]
        mesh = build_structured_mesh(row.n, kind)
        spaces = Spaces(mesh, args.k, assembly_degree=args.quad_degree,
                        fine_degree=data_quadrature_degree(case, args.k, row.n))
        fields = solve_hybrid(spaces, case.nu, case.gamma,
                              case.body_force, case.mass_source)
        sol_path = os.path.join(args.out_dir, prefix + "_solution.txt")
        write_solution_text(sol_path, spaces, fields)
        print(f"wrote {sol_path}")
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "solve":
        return run(args, parser)
    parser.error(f"unknown command {args.command!r}")
    return 2


if __name__ == "__main__":
    sys.exit(main())
