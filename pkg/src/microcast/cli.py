"""Experiment harness.

Subcommands: `num-sim` sweeps the rate-allocation solver over group sizes
and loss, `proto-sim` runs one scenario file through the packet-level
simulator, `bench-codec` measures codec throughput, `recipe` reproduces a
named figure sweep, and `check` evaluates the acceptance criteria against
a results directory.  Every run writes raw rows plus a mean/std aggregate
CSV; headers carry the parameters as `#` comments.

Exit codes: 0 success, 1 failed acceptance check, 2 bad configuration.
"""

from __future__ import annotations

import argparse
import dataclasses
import glob
import os
import sys

from . import acceptance, num, rlnc, scenarios
from .protocols import run_protocol

PROTO_COLUMNS = ["protocol", "seed", "complete", "duration_s", "avg_rate_bps",
                 "local_bytes", "local_data_bytes", "local_control_bytes"]
EVENT_COLUMNS = ["t", "device", "event_kind", "segment", "bytes"]


def _int_list(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise scenarios.ScenarioError(
            f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise scenarios.ScenarioError(
            f"expected comma-separated numbers, got {text!r}")


def _out_dir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _write(args, name, comments, columns, rows, group_cols, value_cols):
    """Write the raw CSV and its aggregate; return both paths."""
    out_dir = _out_dir(args)
    raw = os.path.join(out_dir, f"{name}.csv")
    scenarios.write_csv(raw, comments, columns, rows)
    agg_cols, agg_rows = scenarios.aggregate(rows, columns, group_cols,
                                             value_cols)
    agg = os.path.join(out_dir, f"{name}_agg.csv")
    scenarios.write_csv(agg, comments + ["aggregated: mean/std per sweep point"],
                        agg_cols, agg_rows)
    return raw, agg


# ----------------------------------------------------------- num-sim

def cmd_num_sim(args) -> int:
    policies = num.POLICIES if args.policy == "all" else (args.policy,)
    n_values = _int_list(args.n_devices)
    p_values = _float_list(args.p_local)
    n_seeds = args.seeds if args.seeds is not None else 10
    seeds = tuple(range(args.seed, args.seed + n_seeds))
    rows = []
    for n_dev in n_values:
        for p in p_values:
            topo = num.Topology.uniform(
                n_dev, cell_capacity=args.cell_capacity, cell_loss=0.0,
                local_capacity=args.local_capacity, local_loss=p,
                gamma=args.gamma)
            for policy in policies:
                cfg = num.SolverConfig(policy=policy,
                                       iterations=args.iterations, seeds=seeds)
                for run in num.simulate(topo, cfg).runs:
                    rows.append([policy, n_dev, float(p), run.seed,
                                 run.avg, run.spread])
    comments = [
        "command: num-sim",
        f"sweep: n_devices={n_values} p_local={p_values} "
        f"policies={','.join(policies)}",
        f"topology: cell_capacity={args.cell_capacity:g} cell_loss=0 "
        f"local_capacity={args.local_capacity:g} gamma={args.gamma:g}",
        f"solver: iterations={args.iterations} "
        f"step_size={num.SolverConfig().step_size:g}",
        f"seeds: {list(seeds)}",
    ]
    raw, agg = _write(args, "num-sim", comments, scenarios.NUM_COLUMNS, rows,
                      ["policy", "n_devices", "p_local"], ["avg_rate"])
    print(f"wrote {raw} ({len(rows)} rows) and {agg}")
    return 0


# ---------------------------------------------------------- proto-sim

def _event_kind(record) -> str:
    if record.kind is None:
        return record.event
    return f"{record.event}.{record.kind}"


def cmd_proto_sim(args) -> int:
    n_seeds = args.seeds if args.seeds is not None else 1
    seeds = range(args.seed, args.seed + n_seeds)
    stem = os.path.splitext(os.path.basename(args.scenario))[0]
    rows = []
    out_dir = _out_dir(args)
    for s in seeds:
        sim_cfg, proto = scenarios.load_scenario(args.scenario, seed=s)
        if args.event_log:
            sim_cfg = dataclasses.replace(sim_cfg, log_events=True)
        res = run_protocol(sim_cfg, proto)
        met = res.metrics
        rows.append([met.protocol, s, int(met.complete), met.duration_s,
                     met.avg_rate_bps, met.local_bytes, met.local_data_bytes,
                     met.local_control_bytes])
        print(f"seed {s}: {'complete' if met.complete else 'INCOMPLETE'} "
              f"in {met.duration_s:.2f}s, avg rate "
              f"{met.avg_rate_bps / 1e6:.3f} Mbps, local traffic "
              f"{met.local_bytes / 1e6:.3f} MB")
        if args.event_log:
            suffix = "_events.csv" if n_seeds == 1 else f"_events_s{s}.csv"
            path = os.path.join(out_dir, stem + suffix)
            ev_rows = [[e.t, e.device, _event_kind(e),
                        "" if e.segment is None else e.segment, e.nbytes]
                       for e in res.sim.events]
            scenarios.write_csv(path, [f"scenario: {args.scenario}",
                                       f"seed: {s}"], EVENT_COLUMNS, ev_rows)
            print(f"  event log: {path} ({len(ev_rows)} records)")
    comments = [f"command: proto-sim {args.scenario}",
                f"seeds: {list(seeds)}"]
    raw, agg = _write(args, stem, comments, PROTO_COLUMNS, rows,
                      ["protocol"], ["duration_s", "avg_rate_bps"])
    print(f"wrote {raw} ({len(rows)} rows) and {agg}")
    return 0


# --------------------------------------------------------- bench-codec

def cmd_bench(args) -> int:
    m_values = _int_list(args.m)
    results = rlnc.bench(m_values, n=args.n, seconds=args.seconds,
                         seed=args.seed)
    rows = [[r["m"], r["encode_mbps"], r["decode_mbps"]] for r in results]
    comments = [
        "command: bench-codec",
        f"packet bytes n={args.n}, {args.seconds:g}s per measurement",
        "throughputs are wall-clock measurements, not deterministic",
    ]
    raw, agg = _write(args, "bench-codec", comments, scenarios.BENCH_COLUMNS,
                      rows, ["m"], ["encode_mbps", "decode_mbps"])
    for r in results:
        print(f"m={r['m']:>3}: encode {r['encode_mbps']:7.2f} Mbps, "
              f"decode {r['decode_mbps']:7.2f} Mbps")
    print(f"wrote {raw} and {agg}")
    return 0


# -------------------------------------------------------------- recipe

def cmd_recipe(args) -> int:
    names = list(scenarios.RECIPES) if args.name == "all" else [args.name]
    out_dir = _out_dir(args)
    for name in names:
        out = scenarios.run_recipe(name, base_seed=args.seed,
                                   n_seeds=args.seeds)
        paths = scenarios.write_recipe_output(out, out_dir)
        print(f"{name}: " + ", ".join(paths))
    return 0


# --------------------------------------------------------------- check

def _stale_warnings(results_dir: str) -> list:
    src_dir = os.path.dirname(os.path.abspath(__file__))
    src_mtime = max(os.path.getmtime(f)
                    for f in glob.glob(os.path.join(src_dir, "*.py")))
    warnings = []
    for name in scenarios.RECIPES:
        path = os.path.join(results_dir, f"{name}.csv")
        if os.path.exists(path) and os.path.getmtime(path) < src_mtime:
            warnings.append(f"warning: {path} is older than the installed "
                            "package; results may be stale")
    return warnings


def cmd_check(args) -> int:
    results_dir = args.out
    for line in _stale_warnings(results_dir) if os.path.isdir(results_dir) else []:
        print(line)
    results = acceptance.evaluate_all(results_dir)
    for r in results:
        print(f"criterion {r.number} {r.name}: {r.verdict}")
        print(f"  measured: {r.measured}")
        print(f"  bound:    {r.bound}")
        if r.detail:
            print(f"  detail:   {r.detail}")
    n_pass = sum(r.passed for r in results)
    ok = n_pass == len(results)
    print(f"acceptance: {'PASS' if ok else 'FAIL'} ({n_pass}/{len(results)})")
    return 0 if ok else 1


# --------------------------------------------------------------- wiring

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0,
                        help="first random seed (default 0)")
    common.add_argument("--seeds", type=int, default=None, metavar="N",
                        help="number of seeds to run (default per command)")
    common.add_argument("--out", default="results", metavar="DIR",
                        help="output directory (default ./results)")

    parser = argparse.ArgumentParser(
        prog="microcast",
        description="cooperative streaming experiments: rate allocation, "
                    "packet-level protocol runs, codec benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("num-sim", parents=[common],
                       help="sweep the rate-allocation solver")
    p.add_argument("--policy", default="all",
                   choices=list(num.POLICIES) + ["all"])
    p.add_argument("--n-devices", default="1,2,3,4,5,6,7,8",
                   help="comma list of group sizes")
    p.add_argument("--p-local", default="0",
                   help="comma list of local loss probabilities")
    p.add_argument("--cell-capacity", type=float, default=1.0)
    p.add_argument("--local-capacity", type=float, default=10.0)
    p.add_argument("--gamma", type=float, default=1.0,
                   help="local airtime budget per unit time")
    p.add_argument("--iterations", type=int, default=1000)
    p.set_defaults(func=cmd_num_sim)

    p = sub.add_parser("proto-sim", parents=[common],
                       help="run one scenario file through the simulator")
    p.add_argument("scenario", help="scenario YAML file")
    p.add_argument("--event-log", action="store_true",
                   help="also write per-run event records")
    p.set_defaults(func=cmd_proto_sim)

    p = sub.add_parser("bench-codec", parents=[common],
                       help="measure encode/decode throughput")
    p.add_argument("--m", default="16,25,32,64",
                   help="comma list of generation sizes")
    p.add_argument("--n", type=int, default=900, help="payload bytes")
    p.add_argument("--seconds", type=float, default=0.3,
                   help="wall-clock budget per measurement")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("recipe", parents=[common],
                       help="reproduce a named figure sweep")
    p.add_argument("name", choices=list(scenarios.RECIPES) + ["all"])
    p.set_defaults(func=cmd_recipe)

    p = sub.add_parser("check", parents=[common],
                       help="evaluate the acceptance criteria")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except scenarios.ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
