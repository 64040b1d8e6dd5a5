"""``spanprof`` command line: demo runs, parallelism and causal profiles, dumps.

Exit codes: 0 success, 1 validation or I/O error, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
from fractions import Fraction

from .analysis import analyze
from .causal import DEFAULT_FACTORS, CausalQuery, causal_csv, compute_causal, render_causal
from .dpst import Tree
from .errors import SpanprofError
from .measure import BACKENDS
from .profile_io import dump_text, read_all
from .runtime import ProfileConfig, run_profiled
from .workloads import WORKLOADS, make_workload


def _factors(text: str) -> tuple[Fraction, ...]:
    try:
        out = tuple(Fraction(x.strip()) for x in text.split(",") if x.strip())
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"bad factor list {text!r}") from None
    if not out or any(f <= 0 for f in out):
        raise argparse.ArgumentTypeError("factors must be positive numbers")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spanprof", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    demo = sub.add_parser("demo", help="run a built-in workload under the profiler")
    demo.add_argument("workload", choices=sorted(WORKLOADS))
    demo.add_argument("-o", "--out", default=None, help="profile path (default $SPANPROF_OUT)")
    demo.add_argument("--threads", type=int, default=None, help="workers (default $SPANPROF_THREADS)")
    demo.add_argument("--counter", choices=BACKENDS, default=None,
                      help="counter backend (default $SPANPROF_COUNTER or logical)")
    g = demo.add_argument_group("treesum")
    g.add_argument("--depth", type=int)
    g.add_argument("--base", type=int)
    g.add_argument("--leaf-cost", type=int)
    g.add_argument("--build-cost", type=int)
    g.add_argument("--glue-cost", type=int)
    g = demo.add_argument_group("pipeline")
    g.add_argument("--stages", dest="n_stages", type=int)
    g.add_argument("--stage-cost", type=int)
    g.add_argument("--loop-size", type=int)
    g.add_argument("--loop-cost", type=int)
    g.add_argument("--grain", type=int)
    g.add_argument("--parallel-stages", action="store_true", default=None)
    g = demo.add_argument_group("unbalanced")
    g.add_argument("--skew", type=int)

    an = sub.add_parser("analyze", help="print the parallelism profile")
    an.add_argument("profile")
    an.add_argument("--format", choices=("table", "csv"), default="table")

    ca = sub.add_parser("causal", help="print the causal profile")
    ca.add_argument("profile")
    ca.add_argument("--regions", default=None, help="comma-separated region labels (default all)")
    ca.add_argument("--factors", type=_factors,
                    default=tuple(Fraction(f) for f in DEFAULT_FACTORS))
    ca.add_argument("--isolated", action="store_true", help="also profile each region alone")
    ca.add_argument("--format", choices=("table", "csv"), default="table")

    du = sub.add_parser("dump", help="print records as text")
    du.add_argument("profile")
    return p


_WORKLOAD_ARGS = {
    "treesum": ("depth", "base", "leaf_cost", "build_cost", "glue_cost"),
    "pipeline": ("n_stages", "stage_cost", "loop_size", "loop_cost", "grain", "parallel_stages"),
    "unbalanced": ("skew", "depth", "leaf_cost", "glue_cost"),
}


def _demo(args) -> int:
    params = {k: getattr(args, k) for k in _WORKLOAD_ARGS[args.workload]}
    body = make_workload(args.workload, **params)
    config = ProfileConfig.from_env(out=args.out, counter=args.counter, workers=args.threads)
    path = run_profiled(body, config)
    print(f"wrote {path}", file=sys.stderr)
    return 0


def _load(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such profile: {path}")
    return read_all(path)


def _analyze(args) -> int:
    header, records = _load(args.profile)
    prof = analyze(header, records)
    sys.stdout.write(prof.to_csv() if args.format == "csv" else prof.to_table())
    return 0


def _causal(args) -> int:
    header, records = _load(args.profile)
    regions = None
    if args.regions:
        labels = [x.strip() for x in args.regions.split(",") if x.strip()]
        try:
            regions = frozenset(header.region_id(lbl) for lbl in labels)
        except KeyError as exc:
            known = ", ".join(sorted(r.label for r in header.regions.values())) or "none"
            raise SpanprofError(f"unknown region {exc.args[0]!r} (known: {known})") from None
    query = CausalQuery(regions, args.factors, args.isolated)
    profile = compute_causal(Tree(records), header, query)
    sys.stdout.write(causal_csv(profile) if args.format == "csv" else render_causal(profile))
    return 0


def _dump(args) -> int:
    _load(args.profile)
    sys.stdout.write(dump_text(args.profile))
    return 0


COMMANDS = {"demo": _demo, "analyze": _analyze, "causal": _causal, "dump": _dump}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (SpanprofError, OSError) as exc:
        print(f"spanprof: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
