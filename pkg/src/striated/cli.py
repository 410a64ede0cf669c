"""Command-line interface: ``striated <subcommand> ...``.

Exit codes: 0 ok, 2 config error, 3 numerical abort, 4 property violation.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .io import ConfigError, fmt, read_csv, read_snapshot, write_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_PROPERTY = 0, 2, 3, 4


def _emit(header, rows, out: str | None) -> None:
    if out:
        write_csv(out, header, rows)
    print(",".join(header))
    for r in rows:
        print(",".join(v if isinstance(v, str) else fmt(v) for v in r))


def cmd_run(args) -> int:
    from .experiments import COLUMNS, RunConfig, run
    cfg = RunConfig.from_file(args.config)
    res = run(cfg)
    print(f"wrote {res.csv_path} ({len(res.rows)} rows)", file=sys.stderr)
    last = res.rows[-1]
    print(",".join(COLUMNS))
    print(",".join(fmt(last[c]) for c in COLUMNS))
    return EXIT_OK


def cmd_oracle(args) -> int:
    from .oracle_suite import ORACLES
    if args.name not in ORACLES:
        raise ConfigError(f"unknown oracle {args.name!r}; choose from {', '.join(sorted(ORACLES))}")
    header, rows, ok = ORACLES[args.name](args.n)
    _emit(header, rows, args.out)
    return EXIT_OK if ok else EXIT_PROPERTY


def cmd_lemma_fuzz(args) -> int:
    from .experiments import lemma_fuzz
    rep = lemma_fuzz(args.dim, args.trials, args.seed)
    header = ["dim", "trials", "violations", "degenerate", "min_slack", "p1_violations"]
    _emit(header, [rep.csv_row()], args.out)
    print(f"runtime {rep.seconds:.2f} s", file=sys.stderr)
    return EXIT_OK if rep.violations == 0 and rep.extra_violations == 0 else EXIT_PROPERTY


def cmd_equivalence(args) -> int:
    from .biot_savart import VorticityField
    from .experiments import RunConfig, build_family, div_product, initial_data
    cfg = RunConfig.from_file(args.config)
    g = cfg.grid
    data = initial_data(cfg)
    P = g.points()
    w = VorticityField(g, np.asarray(data.omega0(P), dtype=float))
    fam = [(m.label, m.field(P), div_product(data.omega0, m)(P)) for m in build_family(cfg)]
    from .experiments import equivalence_report
    rows = equivalence_report(w, fam, cfg.alpha)
    header = ["member", "Ygradu_holder", "div_neg_holder", "lower", "ratio_fwd", "ratio_bwd"]
    _emit(header, [[r[h] for h in header] for r in rows], args.out)
    return EXIT_OK


def cmd_norms(args) -> int:
    from .holder_norms import HolderReport, holder_report
    field, grid = read_snapshot(args.snapshot)
    rep = holder_report(field, args.alpha, spacing=grid.spacing)
    print(HolderReport.csv_header())
    print(rep.to_csv_row())
    return EXIT_OK


def cmd_plotdata(args) -> int:
    header, data = read_csv(args.csv)
    if args.column not in header:
        raise ConfigError(f"column {args.column!r} not in {args.csv}")
    x = data[:, 0]
    y = data[:, header.index(args.column)]
    print(f"{header[0]},{args.column}")
    for a, b in zip(x, y):
        print(f"{fmt(a)},{fmt(b)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="striated", description="striated-regularity diagnostics for 2D Euler")
    sub = p.add_subparsers(dest="cmd", required=True)
    s = sub.add_parser("run", help="simulate and write diagnostics CSV")
    s.add_argument("config")
    s.set_defaults(fn=cmd_run)
    s = sub.add_parser("oracle", help="compare against a closed-form solution")
    s.add_argument("name")
    s.add_argument("--n", type=int, default=128)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_oracle)
    s = sub.add_parser("lemma-fuzz", help="randomised check of the linear-algebra bound")
    s.add_argument("--dim", type=int, default=2)
    s.add_argument("--trials", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_lemma_fuzz)
    s = sub.add_parser("equivalence", help="Y.grad u vs div(omega Y) report")
    s.add_argument("config")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_equivalence)
    s = sub.add_parser("norms", help="Holder norm of a field snapshot")
    s.add_argument("snapshot")
    s.add_argument("--alpha", type=float, default=0.5)
    s.set_defaults(fn=cmd_norms)
    s = sub.add_parser("plotdata", help="x,y pairs of one CSV column")
    s.add_argument("csv")
    s.add_argument("--column", required=True)
    s.set_defaults(fn=cmd_plotdata)
    return p


def main(argv=None) -> int:
    from .flow_transport import MarkerEscape, NumericalAbort
    from .experiments import PropertyViolation
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalAbort, MarkerEscape, FloatingPointError) as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except PropertyViolation as e:
        print(f"property violation: {e}", file=sys.stderr)
        return EXIT_PROPERTY
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
