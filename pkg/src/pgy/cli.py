"""Command-line front end.

    pgy run --variant floor --to-stage 60 --dir runs/floor
    pgy analyze survivors --dir runs/floor --horizon 120
    pgy predict omega --stage 100 --k 7
    pgy table table5

Data goes to stdout, progress and diagnostics to stderr.  Exit codes: 0 on
success (extinction included), 1 usage error, 2 I/O error, 3 invalid
checkpoint.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import density, genealogy, heuristics, seedvariants
from .engine import CheckpointDir, CheckpointError, VariantRule, run, sci_truncated, y_bounds, DEFAULT_MEMORY_BUDGET
from .ntcore import nth_prime

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INVALID = 0, 1, 2, 3

log = logging.getLogger("pgy")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _read_config(path: str) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"bad config line {line!r}")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


# ---------------------------------------------------------------------------
# run


def cmd_run(args) -> int:
    if args.to_stage < 1:
        raise UsageError("--to-stage must be >= 1")
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    variant = VariantRule.parse(args.variant)
    ck = CheckpointDir(args.dir, variant)
    if ck.extinct_at is not None:
        print(f"extinct_at={ck.extinct_at}")
        return EXIT_OK
    state = ck.start()
    if args.verify_import and state.s > 1:
        state = ck.load(state.s, verify=True)
    print(f"resuming {variant} at stage {state.s} (n={state.n})", file=sys.stderr)

    def progress_for(s):
        def progress(j, m, found):
            if not args.quiet:
                print(f"\rstage {s}: interval {j}/{m}, {found} found", end="", file=sys.stderr, flush=True)
        return progress

    def sink(res, elapsed):
        ck(res, elapsed)
        if not args.quiet:
            print(f"\rstage {res.state.s} p={nth_prime(res.state.s)} n={res.state.n} ({elapsed:.0f} ms)", file=sys.stderr)

    cur = state
    extinct = None
    while cur.s < args.to_stage:
        out = run(
            cur,
            cur.s + 1,
            sink=sink,
            workers=args.threads,
            memory_budget=args.memory_budget * (1 << 20),
            progress=progress_for(cur.s + 1),
        )
        if out.extinct_at is not None:
            extinct = out.extinct_at
            break
        cur = out.state
    if extinct is not None:
        print(f"extinct_at={extinct}")
    else:
        print(f"stage={cur.s} n={cur.n}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze


def _forest(args):
    return genealogy.GenealogyForest.from_dir(args.dir, getattr(args, "horizon", None))


def cmd_analyze(args) -> int:
    what = args.what
    if what == "ybounds":
        ck = CheckpointDir(args.dir)
        st = ck.load(args.stage) if args.stage else ck.latest()
        if st is None:
            raise FileNotFoundError("no checkpoints")
        b = y_bounds(st)
        lo, hi = b.decimal(args.digits)
        print(f"stage,{st.s}\ny_min,{lo}\ny_max,{hi}\ngap,{b.gap_decimal(20)}")
        return EXIT_OK
    forest = _forest(args)
    try:
        if what == "survivors":
            sys.stdout.write(genealogy.table7_csv(forest))
        elif what == "ancestor":
            r = genealogy.common_ancestor(forest)
            print("none" if r is None else f"stage,{r[0]}\nvalue,{r[1]}")
        elif what == "tuplets":
            print(genealogy.find_tuplets(forest, args.size))
        elif what == "descendants":
            print(genealogy.descendants_of_order(forest, args.order, args.count))
        elif what == "strength":
            print("ordinal,size,percent")
            for g in genealogy.branch_strength(forest, args.split_stage):
                print(f"{g.ordinal},{g.size},{g.percent:.2f}")
        elif what == "yoffsets":
            print("ordinal,offset")
            for i, g in genealogy.branch_y_offsets(forest, args.split_stage):
                print(f"{i + 1},{sci_truncated(g, 20)}")
        elif what == "bound":
            b = genealogy.branch_bound_c(forest)
            print("c,root_stage,root_ordinal,peak_stage,peak_size,extinct_at")
            print(f"{b.c:.5f},{b.root_stage},{b.root_ordinal},{b.peak_stage},{b.peak_size},{b.extinct_at}")
        elif what == "nosplit":
            print(",".join(str(s) for s in genealogy.no_split_stages(forest)))
        elif what == "deviations":
            counts = {s: forest.n(s) for s in range(forest.first, forest.horizon + 1)}
            recs, _ = heuristics.deviation_series(counts)
            sys.stdout.write(heuristics.predictions_csv(recs))
    except genealogy.NotFound as e:
        print(str(e))
    return EXIT_OK


# ---------------------------------------------------------------------------
# predict


def cmd_predict(args) -> int:
    what = args.what
    if what == "omega":
        ser = heuristics.omega_series(args.stage, args.start, args.omega_start, args.k, log_y=args.log_y)
        print(f"{ser[args.stage]:.9f}")
    elif what == "table6":
        sys.stdout.write(heuristics.table6_csv(origin=args.origin, log_y=args.log_y))
    elif what == "growth":
        print(f"{heuristics.predict_next_n(args.n, args.stage, log_y=args.log_y):.1f}")
    elif what == "project":
        targets = [float(x) for x in args.targets.split(",")]
        stages = heuristics.project_stage_targets(args.s0, args.n0, targets, log_y=args.log_y)
        print("target,stage")
        for t, s in zip(targets, stages):
            print(f"{t:g},{s}")
    elif what == "split":
        v = heuristics.split_probability(args.stage, args.fold, log_y=args.log_y)
        print(f"per_prime_percent,{100 * v:.6f}")
        if args.members:
            print(f"aggregate_percent,{100 * heuristics.aggregate_split_probability(v, args.members):.4f}")
    elif what == "failure":
        print(f"log10,{heuristics.log10_failure_probability(args.omega, args.n):.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# tables


def cmd_table(args) -> int:
    what = args.what
    if what == "table4":
        sys.stdout.write(density.table4_csv())
    elif what == "table5":
        sys.stdout.write(density.table5_csv())
    elif what == "chains":
        recs, complete = seedvariants.chain_search(args.r_max, m_cap=args.m_cap)
        sys.stdout.write(seedvariants.chain_csv(recs))
        if not complete:
            print("search stopped at the m cap; results partial", file=sys.stderr)
    elif what == "semi":
        recs = seedvariants.semi_record_scan(args.b_max, args.horizon)
        sys.stdout.write(seedvariants.semi_records_csv(recs))
    elif what == "power":
        a = seedvariants.plouffe_constant() if args.digits is None else args.digits
        print("n,digits,prp")
        for n, q, ok in seedvariants.verify_power_seed(a, args.c, args.n_max):
            print(f"{n},{len(str(q))},{int(ok)}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="pgy", description="Primorial-floor prime sequences: engine, genealogy and heuristics.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run or resume the stage engine")
    r.add_argument("--config", help="key=value file supplying defaults")
    r.add_argument("--variant", default="floor", help="floor | round | semi:<B>[:restrict]")
    r.add_argument("--to-stage", type=int, required=False)
    r.add_argument("--dir", default="pgy-run")
    r.add_argument("--threads", type=int, default=1)
    r.add_argument("--memory-budget", type=int, default=DEFAULT_MEMORY_BUDGET >> 20, help="MiB of cached residues")
    r.add_argument("--verify-import", action="store_true", help="PRP-check the resumed checkpoint")
    r.add_argument("--quiet", action="store_true")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("analyze", help="genealogy and bounds from a run directory")
    a.add_argument("what", choices=["ybounds", "survivors", "ancestor", "tuplets", "descendants", "strength", "yoffsets", "bound", "nosplit", "deviations"])
    a.add_argument("--dir", default="pgy-run")
    a.add_argument("--stage", type=int)
    a.add_argument("--digits", type=int, default=80)
    a.add_argument("--horizon", type=int)
    a.add_argument("--size", type=int, default=2)
    a.add_argument("--order", type=int, default=2)
    a.add_argument("--count", type=int, default=3)
    a.add_argument("--split-stage", type=int, default=45)
    a.set_defaults(func=cmd_analyze)

    p = sub.add_parser("predict", help="heuristic estimates")
    p.add_argument("what", choices=["omega", "table6", "growth", "project", "split", "failure"])
    p.add_argument("--stage", type=int, default=100)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--start", type=int)
    p.add_argument("--omega-start", type=float)
    p.add_argument("--log-y", type=float, default=heuristics.LOG_Y)
    p.add_argument("--origin", type=int, default=100)
    p.add_argument("--n", type=float, default=0)
    p.add_argument("--targets", default="1e6,1e9,1e12")
    p.add_argument("--s0", type=int, default=318)
    p.add_argument("--n0", type=float, default=592642)
    p.add_argument("--fold", type=int, default=3)
    p.add_argument("--members", type=int, default=0, help="population for the aggregate split probability")
    p.add_argument("--omega", type=float, default=0.91476)
    p.set_defaults(func=cmd_predict)

    t = sub.add_parser("table", help="tables computed from scratch")
    t.add_argument("what", choices=["table4", "table5", "chains", "semi", "power"])
    t.add_argument("--r-max", type=int, default=23)
    t.add_argument("--m-cap", type=int)
    t.add_argument("--b-max", type=int, default=1000)
    t.add_argument("--horizon", type=int, default=30)
    t.add_argument("--digits", help="decimal digits of A (default: bundled constant)")
    t.add_argument("--c", default="1.001")
    t.add_argument("--n-max", type=int, default=5)
    t.set_defaults(func=cmd_table)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        if args.command == "run":
            if args.config:
                cfg = _read_config(args.config)
                explicit = {a.split("=", 1)[0].lstrip("-").replace("-", "_") for a in argv if a.startswith("--")}
                for k, v in cfg.items():
                    if not hasattr(args, k):
                        raise UsageError(f"unknown config key {k!r}")
                    if k not in explicit:
                        cur = getattr(args, k)
                        if isinstance(cur, bool):
                            v = v.lower() in ("1", "true", "yes", "on")
                        elif cur is not None:
                            v = type(cur)(v)
                        setattr(args, k, v)
            if args.to_stage is None:
                raise UsageError("--to-stage is required")
            args.to_stage = int(args.to_stage)
        return args.func(args)
    except (UsageError, ValueError) as e:
        if isinstance(e, CheckpointError):
            print(f"invalid checkpoint: {e}", file=sys.stderr)
            return EXIT_INVALID
        print(f"pgy: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"pgy: I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
