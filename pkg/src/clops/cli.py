"""Command-line interface: partition, run, serve, replay, synth."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .control import ControlServer, config_from_doc, config_to_doc, load_run, replay_run
from .cosim import SimConfig, run_parallel, write_outputs
from .commnet import UnitDisk
from .hils import extract_bsms, parse_sensor_logs, replay_feed
from .netgraph import WeightMode, build_weights
from .partitioner import PartitionPlan, cut_metrics, partition_kway, search_k
from .scenario import load_scenario, save_scenario
from . import synth


def _load_scenario_file(path: str):
    return load_scenario(Path(path).read_text())


def _load_plan(path: str) -> PartitionPlan:
    return PartitionPlan.from_json(Path(path).read_text())


def cmd_partition(args) -> int:
    scenario = _load_scenario_file(args.scenario)
    mode = WeightMode(args.mode)
    wg = build_weights(scenario.graph, mode)
    if args.k is not None:
        plan = partition_kway(wg, args.k, epsilon=args.epsilon, seed=args.seed)
        metrics = cut_metrics(wg, plan)
    else:
        objective = tuple(float(x) for x in args.objective.split(","))
        plan, metrics = search_k(
            wg, args.k_min, args.k_max, objective_coeffs=objective,
            epsilon=args.epsilon, seed=args.seed,
        )
    Path(args.out).write_text(plan.to_json(metrics=metrics, seed=args.seed))
    print(
        f"{mode.value} plan: k={plan.k} edge_cut={metrics.edge_cut:.3f} "
        f"boundary={metrics.boundary_nodes} imbalance={metrics.imbalance:.3f} -> {args.out}"
    )
    return 0


def _build_config(args) -> SimConfig:
    scenario = _load_scenario_file(args.scenario)
    cfg = SimConfig(
        scenario=scenario,
        mobility_plan=_load_plan(args.mobility_plan),
        comm_plan=_load_plan(args.comm_plan),
        workers=args.workers,
        seed=args.seed,
        duration_s=args.duration,
        reception=UnitDisk(args.radius),
        penetration=args.penetration,
        work_factor=args.work_factor,
        mode=args.mode,
        executor=args.executor,
    )
    if args.mode == "hils":
        if not args.sensor_dir:
            print("hils mode needs --sensor-dir", file=sys.stderr)
            raise SystemExit(2)
        records, issues = parse_sensor_logs(args.sensor_dir)
        for issue in issues:
            print(f"sensor parse: {issue.path}:{issue.line}: {issue.reason}", file=sys.stderr)
        bsms = extract_bsms(records)
        cfg.hils_feed = replay_feed(scenario.graph, [], [], bsms)
    return cfg


def cmd_run(args) -> int:
    cfg = _build_config(args)
    result = run_parallel(cfg)
    out = Path(args.out)
    write_outputs(result, out)
    print(f"digest {result.digest} (cv {result.cv_digest})")
    print(
        f"frames={result.frames} departures={result.counters['departures']} "
        f"arrivals={result.counters['arrivals']} bsms={result.counters['bsms']} "
        f"wall={result.wall_s:.2f}s -> {out}/"
    )
    return 0


def cmd_serve(args) -> int:
    cfg = _build_config(args)
    server = ControlServer(
        cfg,
        host=args.host,
        port=args.port,
        record_dir=args.record_dir,
        default_rate=None if not args.rate else args.rate,
    )
    print(f"control service on http://{args.host}:{server.port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def cmd_replay(args) -> int:
    record = load_run(args.record)
    result = replay_run(record)
    print(f"replayed digest {result.digest} matches record")
    if args.out:
        write_outputs(result, args.out)
        print(f"outputs -> {args.out}/")
    return 0


def cmd_synth(args) -> int:
    if args.kind == "grid":
        sc = synth.grid_scenario(rows=args.rows, cols=args.cols,
                                 penetration=args.penetration)
    else:
        sc = synth.corridor_scenario(penetration=args.penetration)
    Path(args.out).write_text(save_scenario(sc))
    print(f"{args.kind} scenario ({len(sc.graph.nodes)} nodes, "
          f"{len(sc.graph.links)} links) -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clops", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    pp = sub.add_parser("partition", help="partition a scenario's road network")
    pp.add_argument("--scenario", required=True)
    pp.add_argument("--mode", choices=["mobility", "comm"], required=True)
    pp.add_argument("--k", type=int, default=None, help="exact partition count")
    pp.add_argument("--k-min", type=int, default=2)
    pp.add_argument("--k-max", type=int, default=4)
    pp.add_argument("--epsilon", type=float, default=0.05)
    pp.add_argument("--objective", default="1,1,10",
                    help="a,b,c weights for cut/boundary/imbalance")
    pp.add_argument("--seed", type=int, default=0)
    pp.add_argument("--out", required=True)
    pp.set_defaults(func=cmd_partition)

    def add_run_args(sp):
        sp.add_argument("--scenario", required=True)
        sp.add_argument("--mobility-plan", required=True)
        sp.add_argument("--comm-plan", required=True)
        sp.add_argument("-P", "--workers", type=int, default=1)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--duration", type=float, default=60.0)
        sp.add_argument("--mode", choices=["clsim", "hils"], default="clsim")
        sp.add_argument("--sensor-dir", default=None)
        sp.add_argument("--penetration", type=float, default=None)
        sp.add_argument("--work-factor", type=int, default=0)
        sp.add_argument("--radius", type=float, default=300.0,
                        help="unit-disk reception radius (m)")
        sp.add_argument("--executor", choices=["sequential", "thread", "process"],
                        default="thread")

    pr = sub.add_parser("run", help="run a co-simulation headless")
    add_run_args(pr)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_run)

    ps = sub.add_parser("serve", help="serve the operator control API")
    add_run_args(ps)
    ps.add_argument("--host", default="127.0.0.1")
    ps.add_argument("--port", type=int, default=8700)
    ps.add_argument("--record-dir", default="records")
    ps.add_argument("--rate", type=float, default=1.0,
                    help="sim seconds per wall second (0 = unthrottled)")
    ps.set_defaults(func=cmd_serve)

    py = sub.add_parser("replay", help="replay a run record and verify its digest")
    py.add_argument("--record", required=True)
    py.add_argument("--out", default=None)
    py.set_defaults(func=cmd_replay)

    pg = sub.add_parser("synth", help="generate a synthetic scenario file")
    pg.add_argument("kind", choices=["grid", "corridor"])
    pg.add_argument("--rows", type=int, default=3)
    pg.add_argument("--cols", type=int, default=3)
    pg.add_argument("--penetration", type=float, default=0.5)
    pg.add_argument("--out", required=True)
    pg.set_defaults(func=cmd_synth)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
