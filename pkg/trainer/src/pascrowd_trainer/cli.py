"""Command-line front end: collect, pretrain-gtvae, train, eval, smoke."""
from __future__ import annotations

import argparse
import dataclasses
import json
from pathlib import Path

import numpy as np

from .baselines import variant_names
from .config import TrainerConfig
from .data import collect_gt_dataset
from .pretrain import load_supervisor, pretrain_supervisor, save_supervisor


def _cfg_from_args(args) -> TrainerConfig:
    overrides = {}
    if getattr(args, "lr", None) is not None:
        overrides["learning_rate"] = args.lr
    cfg = dataclasses.replace(TrainerConfig(), **overrides)
    cfg.validate()
    return cfg


def _cmd_collect(args) -> int:
    grids = collect_gt_dataset(
        args.out, args.episodes, base_seed=args.base_seed, config_path=args.config
    )
    np.save(Path(args.out) / "gt_grids.npy", grids)
    print(f"collected {len(grids)} omniscient grids into {args.out}/gt_grids.npy")
    return 0


def _cmd_pretrain(args) -> int:
    cfg = _cfg_from_args(args)
    grids = np.load(args.dataset)
    vae, curve = pretrain_supervisor(
        grids, cfg, epochs=args.epochs, batch_size=args.batch_size, lr=args.lr or 1e-3, seed=args.seed
    )
    save_supervisor(vae, cfg, args.out)
    print(f"pretrained on {len(grids)} grids; recon {curve[0]:.6f} -> {curve[-1]:.6f}")
    return 0


def _cmd_train(args) -> int:
    from .ppo import train

    cfg = _cfg_from_args(args)
    supervisor = None
    if args.supervisor:
        supervisor, _ = load_supervisor(args.supervisor)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train(
        args.variant,
        cfg,
        total_steps=args.steps,
        sim=args.sim,
        config_path=args.config,
        supervisor=supervisor,
        seed=args.seed,
        log_path=out / "train_log.csv",
        checkpoint_path=out / f"{args.variant}.pt",
        progress=True,
    )
    print(f"saved checkpoint to {out / (args.variant + '.pt')}")
    return 0


def _cmd_eval(args) -> int:
    from .evaluate import evaluate_policy

    report = evaluate_policy(
        args.weights,
        episodes=args.episodes,
        base_seed=args.base_seed,
        sim=args.sim,
        config_path=args.config,
        report_path=args.report,
    )
    print(json.dumps(report))
    return 0


def _cmd_smoke(args) -> int:
    from .smoke import run_smoke

    first, last = run_smoke(total_steps=args.steps, seed=args.seed, progress=True)
    improved = last > first
    print(f"mean return first window {first:.3f} -> last window {last:.3f} improved={improved}")
    return 0 if improved else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pascrowd-train")
    sub = parser.add_subparsers(dest="command", required=True)

    col = sub.add_parser("collect", help="record omniscient grids for pretraining")
    col.add_argument("--out", required=True)
    col.add_argument("--episodes", type=int, default=50)
    col.add_argument("--base-seed", type=int, default=0)
    col.add_argument("--config", default=None, help="simulator config JSON")
    col.set_defaults(func=_cmd_collect)

    pre = sub.add_parser("pretrain-gtvae", help="pretrain and freeze the supervisor autoencoder")
    pre.add_argument("--dataset", required=True, help=".npy of byte grids from collect")
    pre.add_argument("--out", required=True, help="checkpoint path (.pt)")
    pre.add_argument("--epochs", type=int, default=20)
    pre.add_argument("--batch-size", type=int, default=64)
    pre.add_argument("--lr", type=float, default=None)
    pre.add_argument("--seed", type=int, default=0)
    pre.set_defaults(func=_cmd_pretrain)

    tr = sub.add_parser("train", help="train a policy variant against the simulator")
    tr.add_argument("--variant", choices=variant_names(), required=True)
    tr.add_argument("--sim", default=None, help="stdio command or tcp:host:port")
    tr.add_argument("--steps", type=int, required=True)
    tr.add_argument("--out", default="runs")
    tr.add_argument("--supervisor", default=None, help="pretrained supervisor checkpoint")
    tr.add_argument("--config", default=None, help="simulator config JSON")
    tr.add_argument("--lr", type=float, default=None)
    tr.add_argument("--seed", type=int, default=0)
    tr.set_defaults(func=_cmd_train)

    ev = sub.add_parser("eval", help="greedy evaluation over the wire protocol")
    ev.add_argument("--weights", required=True)
    ev.add_argument("--episodes", type=int, default=100)
    ev.add_argument("--base-seed", type=int, default=0)
    ev.add_argument("--sim", default=None)
    ev.add_argument("--config", default=None)
    ev.add_argument("--report", default=None, help="keep the report JSON here")
    ev.set_defaults(func=_cmd_eval)

    smk = sub.add_parser("smoke", help="short training run that must improve the return")
    smk.add_argument("--steps", type=int, default=50_000)
    smk.add_argument("--seed", type=int, default=0)
    smk.set_defaults(func=_cmd_smoke)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
