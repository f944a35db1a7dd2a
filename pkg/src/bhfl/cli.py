"""Command-line surface.

Subcommands: run, compare, optimize-k, bound, verify-ledger. Exit codes:
0 success, 1 configuration/validation error, 2 runtime or infeasibility
error.
"""

from __future__ import annotations

import argparse
import sys
import time

from .chain import ElectionFailedError, Ledger
from .config import ConfigError, load_config
from .harness import compare_aggregators, emit_metrics, estimate_bound_params, run_experiment
from .hieavg import AGGREGATOR_NAMES
from .latency import (BoundInapplicableError, InfeasibleKError, edge_convergence_bound,
                      global_convergence_bound, optimize_edge_rounds)


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    t0 = time.monotonic()
    result = run_experiment(cfg)
    wall = time.monotonic() - t0
    last = result.records[-1]
    print(f"aggregator={cfg.aggregator} rounds={last.t} final_loss={last.loss:.6f}"
          + (f" final_accuracy={last.accuracy:.4f}" if last.accuracy is not None else ""))
    print(f"ledger tip {result.chain.ledger.tip_hash.hex()} "
          f"({len(result.chain.ledger)} blocks)")
    if args.wallclock:
        print(f"simulated latency {last.cumulative_latency_s:.3f}s, "
              f"wall clock {wall:.3f}s")
    if args.metrics:
        emit_metrics(result.records, args.metrics)
        print(f"metrics written to {args.metrics}")
    return 0


def _cmd_compare(args) -> int:
    cfg = load_config(args.config)
    table = compare_aggregators(cfg, args.aggregators)
    width = max(len(a) for a in args.aggregators)
    print(f"{'aggregator':<{width}}  final loss")
    for name in args.aggregators:
        print(f"{name:<{width}}  {table.final_loss(name):.6f}")
    if args.out:
        table.write_csv(args.out)
        print(f"per-round losses written to {args.out}")
    return 0


def _cmd_optimize_k(args) -> int:
    cfg = load_config(args.config)
    bp, omega_max, k_max = cfg.bound_params()
    if args.estimate:
        bp = estimate_bound_params(cfg)
    T, _, _ = cfg.rounds
    topo = cfg.topology()
    profile = cfg.latency_profile()
    result = optimize_edge_rounds(
        T, topo.n_edges, topo.total_devices // topo.n_edges, profile, bp,
        omega_max, args.consensus_latency, k_max)
    print(f"K* = {result.k_star}  total latency {result.total_latency_s:.3f}s"
          + (f"  bound {result.bound:.6g}" if result.bound is not None else ""))
    if result.binding:
        print("binding constraint(s): " + ", ".join(result.binding))
    print(f"{'K':>3} {'bound':>14} {'C1':>4} {'L_g(s)':>10} {'C2':>4} {'latency(s)':>12}")
    for row in result.table:
        bound = f"{row.bound:.6g}" if row.bound is not None else "n/a"
        print(f"{row.K:>3} {bound:>14} {str(row.bound_ok):>4} "
              f"{row.waiting_period_s:>10.3f} {str(row.consensus_ok):>4} "
              f"{row.total_latency_s:>12.3f}")
    if args.out:
        import json
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(result.to_dict(), fh, indent=2)
            fh.write("\n")
        print(f"report written to {args.out}")
    return 0


def _cmd_bound(args) -> int:
    cfg = load_config(args.config)
    bp, _, _ = cfg.bound_params()
    if args.estimate:
        bp = estimate_bound_params(cfg)
    T, K, _ = cfg.rounds
    K = args.k or K
    if args.theorem == 1:
        res = edge_convergence_bound(K, bp)
        print(f"edge-tier bound at K={K}: {res.value:.6g}")
    else:
        res = global_convergence_bound(K, T, bp)
        print(f"global-tier bound at K={K}, T={T}: {res.value:.6g}")
    print(f"  decaying term {res.decaying_term:.6g}, straggler floor {res.residual_term:.6g}")
    return 0


def _cmd_verify_ledger(args) -> int:
    with open(args.ledger, "r", encoding="utf-8") as fh:
        ledger = Ledger.from_records(fh)
    bad = ledger.verify()
    if bad is None:
        print(f"ok: {len(ledger)} blocks verified, tip {ledger.tip_hash.hex()}")
        return 0
    print(f"ledger corrupt at height {bad}", file=sys.stderr)
    return 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bhfl",
        description="Straggler-tolerant hierarchical FL simulator with a "
                    "consortium-ledger coordination layer.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment from a config file")
    p.add_argument("config")
    p.add_argument("--metrics", help="also write the per-round metrics CSV here")
    p.add_argument("--wallclock", action="store_true",
                   help="also report measured wall-clock time next to the "
                        "simulated latency")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("compare", help="run several aggregators on one schedule")
    p.add_argument("config")
    p.add_argument("--aggregators", nargs="+", choices=AGGREGATOR_NAMES,
                   default=["hieavg", "t_fedavg", "d_fedavg"])
    p.add_argument("--out", help="write aligned per-round losses to this CSV")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("optimize-k", help="pick the cheapest feasible edge-round count")
    p.add_argument("config")
    p.add_argument("--consensus-latency", type=float, required=True,
                   help="per-round consensus time budget L_bc in seconds")
    p.add_argument("--estimate", action="store_true",
                   help="estimate bound constants from a calibration run")
    p.add_argument("--out", help="write the machine-readable report here")
    p.set_defaults(func=_cmd_optimize_k)

    p = sub.add_parser("bound", help="evaluate a convergence bound")
    p.add_argument("config")
    p.add_argument("--theorem", type=int, choices=(1, 2), required=True,
                   help="1: edge tier, 2: global tier")
    p.add_argument("--k", type=int, help="override the configured K")
    p.add_argument("--estimate", action="store_true")
    p.set_defaults(func=_cmd_bound)

    p = sub.add_parser("verify-ledger", help="recheck an exported ledger file")
    p.add_argument("ledger")
    p.set_defaults(func=_cmd_verify_ledger)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (InfeasibleKError, BoundInapplicableError, ElectionFailedError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (RuntimeError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
