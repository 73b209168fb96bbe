"""Command-line front end: simulate, evaluate, render, serve."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness, ogm, protocol
from .config import config_hash, load_config


def _add_config_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config",
        default=None,
        help="JSON config path (falls back to $PASCROWD_CONFIG, then defaults)",
    )


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    sink = None
    writer = None
    if args.rollout:
        writer = protocol.RolloutWriter(
            args.rollout,
            protocol.RolloutHeader(
                height=cfg.grid.height_cells,
                width=cfg.grid.width_cells,
                dt=cfg.scenario.dt,
                config_hash=config_hash(cfg),
            ),
        )
        sink = protocol.make_frame_sink(writer)
    try:
        record = harness.run_episode(
            args.policy, cfg, args.seed, train_mode=args.train, frame_sink=sink
        )
    finally:
        if writer is not None:
            writer.close()
    summary = {
        "seed": record.seed,
        "config_hash": record.config_hash,
        "outcome": record.outcome,
        "steps": len(record.steps),
        "nav_time": record.nav_time,
        "path_length": record.path_length,
    }
    print(json.dumps(summary))
    return 0


def _cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    if args.policy == "external":
        # The external client drives seeds over stdio; we aggregate what it ran.
        session = protocol.serve_stdio(cfg, report_path=args.report)
        if args.report is None:
            if session.completed:
                print(harness.report_to_json(harness.aggregate(session.completed, cfg)))
            else:
                print(harness.report_to_json(harness.EvalReport(None, None, None, None, None, 0, 0)))
        return 0
    report = harness.evaluate(args.policy, cfg, args.episodes, args.base_seed)
    text = harness.report_to_json(report)
    if args.report:
        Path(args.report).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def _cmd_render(args) -> int:
    _, steps = protocol.read_rollout(args.episode)
    match = [s for s in steps if s.step == args.step]
    if not match:
        print(f"no step {args.step} in {args.episode}", file=sys.stderr)
        return 1
    step = match[0]
    payload = step.gt if args.gt else step.obs
    if payload is None:
        print(f"step {args.step} carries no ground-truth grid", file=sys.stderr)
        return 1
    header, _ = protocol.read_rollout(args.episode)
    spec = ogm.GridSpec(height_cells=header.height, width_cells=header.width)
    grid = protocol.decode_grid(payload, spec)
    sys.stdout.write(ogm.render_text(grid))
    return 0


def _cmd_serve(args) -> int:
    cfg = load_config(args.config)
    if args.transport == "stdio":
        protocol.serve_stdio(cfg, record_dir=args.record, report_path=args.report)
        return 0
    if args.port is None:
        print("tcp transport needs --port", file=sys.stderr)
        return 2
    protocol.serve_tcp(
        cfg, args.port, host=args.host, record_dir=args.record, report_path=args.report
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pascrowd")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one episode and print its summary")
    _add_config_arg(sim)
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--policy", choices=harness.POLICY_NAMES, default="gt-orca")
    sim.add_argument("--rollout", default=None, help="also write a rollout file here")
    sim.add_argument(
        "--train", action="store_true", help="include ground-truth grids in the rollout"
    )
    sim.set_defaults(func=_cmd_simulate)

    ev = sub.add_parser("evaluate", help="run many episodes and print the report")
    _add_config_arg(ev)
    ev.add_argument("--policy", choices=(*harness.POLICY_NAMES, "external"), required=True)
    ev.add_argument("--episodes", type=int, default=500)
    ev.add_argument("--base-seed", type=int, default=0)
    ev.add_argument("--report", default=None, help="also write the report JSON here")
    ev.set_defaults(func=_cmd_evaluate)

    ren = sub.add_parser("render", help="print one recorded grid as text")
    ren.add_argument("--episode", required=True, help="rollout file path")
    ren.add_argument("--step", type=int, required=True)
    ren.add_argument("--gt", action="store_true", help="render the ground-truth grid")
    ren.set_defaults(func=_cmd_render)

    srv = sub.add_parser("serve", help="serve the stepping protocol")
    _add_config_arg(srv)
    srv.add_argument("--transport", choices=("stdio", "tcp"), default="stdio")
    srv.add_argument("--port", type=int, default=None)
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--record", default=None, help="directory for per-episode rollouts")
    srv.add_argument("--report", default=None, help="write the aggregate report here at end")
    srv.set_defaults(func=_cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
