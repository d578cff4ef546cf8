"""Command-line entry point: dataset generation, two-phase training, closed-loop
simulation, open-loop evaluation, ablation sweeps, and plotting.

Every run reads an optional YAML config file whose values are overridden by
flags; the effective configuration is written next to each produced artifact so
runs can be reproduced exactly. Exit codes: 0 success, 2 usage, 3 bad
config/input, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3


class ConfigError(ValueError):
    """Invalid configuration; the message carries the offending field path."""


def _seed_from(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("LHPF_SEED")
    return int(env) if env else 0


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config: file not found: {p}")
    data = yaml.safe_load(p.read_text())
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a mapping")
    return data


def _build_dataclass(cls, values: dict, path: str):
    names = {f.name for f in dataclasses.fields(cls)}
    for key in values:
        if key not in names:
            raise ConfigError(f"{path}.{key}: unknown field")
    try:
        return cls(**values)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from e


def _model_config(cfg: dict):
    from .decoder import DecoderConfig
    from .encoder import EncoderConfig
    from .features import FeatureParams
    from .history import FusionConfig
    from .model import ModelConfig

    section = dict(cfg.get("model", {}))
    known = {"encoder", "decoder", "fusion", "features", "history_frames", "pool_interval"}
    for key in section:
        if key not in known:
            raise ConfigError(f"model.{key}: unknown field")
    kwargs = {}
    if "encoder" in section:
        kwargs["encoder"] = _build_dataclass(EncoderConfig, section["encoder"], "model.encoder")
    if "decoder" in section:
        kwargs["decoder"] = _build_dataclass(DecoderConfig, section["decoder"], "model.decoder")
    if "fusion" in section:
        kwargs["fusion"] = _build_dataclass(FusionConfig, section["fusion"], "model.fusion")
    if "features" in section:
        kwargs["features"] = _build_dataclass(FeatureParams, section["features"], "model.features")
    for key in ("history_frames", "pool_interval"):
        if key in section:
            kwargs[key] = section[key]
    try:
        return ModelConfig(**kwargs)
    except ValueError as e:
        raise ConfigError(f"model: {e}") from e


def _train_config(cfg: dict, overrides: dict):
    from .training import TrainConfig

    section = dict(cfg.get("train", {}))
    section.update({k: v for k, v in overrides.items() if v is not None})
    tc = _build_dataclass(TrainConfig, section, "train")
    return tc


def _write_effective_config(path: Path, payload: dict) -> None:
    out = path.with_suffix(path.suffix + ".config.yaml")
    out.write_text(yaml.safe_dump(payload, sort_keys=True))


def _dataset_path(path: str) -> Path:
    p = Path(path)
    if p.is_dir() or not p.suffix:
        return p / "scenarios.jsonl"
    return p


# --- subcommands -----------------------------------------------------------


def _cmd_gen_data(args) -> int:
    from .dataset import save_dataset
    from .generate import KINDS, generate_scenario

    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    for k in kinds:
        if k not in KINDS:
            raise ConfigError(f"kinds: unknown scenario kind {k!r}")
    seed = _seed_from(args)
    scenarios = [
        generate_scenario(kind, seed + i) for kind in kinds for i in range(args.count)
    ]
    out = _dataset_path(args.out)
    n = save_dataset(scenarios, out)
    _write_effective_config(out, {"command": "gen-data", "kinds": kinds,
                                  "count": args.count, "seed": seed})
    print(f"wrote {n} scenarios to {out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    import torch

    from .dataset import load_dataset
    from .model import LHPFModel, save_checkpoint
    from .training import build_training_samples, train_phase1

    cfg = _load_config(args.config)
    model_cfg = _model_config(cfg)
    seed = _seed_from(args)
    train_cfg = _train_config(cfg, {
        "epochs": args.epochs, "peak_lr": args.lr, "batch_size": args.batch_size,
        "sample_stride": args.stride, "seed": seed,
        "use_comfort": args.comfort if args.comfort else None,
    })
    if not args.comfort:
        train_cfg.use_comfort = False  # phase 1 default: imitation only

    scenarios = load_dataset(args.data)
    samples = build_training_samples(scenarios, model_cfg, train_cfg.sample_stride)
    torch.manual_seed(seed)
    model = LHPFModel(model_cfg)
    history = train_phase1(model, samples, train_cfg)
    out = Path(args.out)
    save_checkpoint(model, out, {"phase": 1, "history": history, "seed": seed})
    _write_effective_config(out, {
        "command": "train", "seed": seed,
        "model": dataclasses.asdict(model_cfg),
        "train": dataclasses.asdict(train_cfg),
    })
    print(f"phase-1 checkpoint at {out}; final imitation loss "
          f"{history['l_imitation'][-1]:.4f}")
    return EXIT_OK


def _cmd_finetune(args) -> int:
    from dataclasses import replace

    from .dataset import load_dataset
    from .model import LHPFModel, load_checkpoint, save_checkpoint
    from .training import build_training_samples, train_phase2

    cfg = _load_config(args.config)
    seed = _seed_from(args)
    train_cfg = _train_config(cfg, {
        "epochs": args.epochs, "peak_lr": args.lr, "batch_size": args.batch_size,
        "sample_stride": args.stride, "seed": seed,
    })
    train_cfg.use_comfort = not args.no_comfort

    model, _ = load_checkpoint(args.backbone)
    model.cfg = replace(model.cfg, pool_interval=args.interval)
    if args.fusion != model.cfg.fusion.mode:
        fresh = LHPFModel(replace(model.cfg, fusion=replace(model.cfg.fusion, mode=args.fusion)))
        fresh.backbone.load_state_dict(model.backbone.state_dict())
        model = fresh
    scenarios = load_dataset(args.data)
    samples = build_training_samples(scenarios, model.cfg, train_cfg.sample_stride)
    history = train_phase2(model, samples, train_cfg)
    out = Path(args.out)
    save_checkpoint(model, out, {"phase": 2, "history": history, "seed": seed,
                                 "backbone": str(args.backbone)})
    _write_effective_config(out, {
        "command": "finetune", "seed": seed, "backbone": str(args.backbone),
        "interval": args.interval, "fusion": args.fusion,
        "comfort": train_cfg.use_comfort,
        "train": dataclasses.asdict(train_cfg),
    })
    print(f"phase-2 checkpoint at {out}; final imitation loss "
          f"{history['l_imitation'][-1]:.4f}")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    from .dataset import load_dataset
    from .model import load_checkpoint
    from .planners import BackbonePlanner, ExpertPlanner, LHPFPlanner
    from .simulation import run_episode, write_reports_csv

    seed = _seed_from(args)
    scenarios = load_dataset(args.scenarios)
    if args.planner == "expert":
        def make_planner():
            return ExpertPlanner()
    else:
        model, _ = load_checkpoint(args.ckpt)
        if args.planner == "backbone":
            def make_planner():
                return BackbonePlanner(model)
        else:
            def make_planner():
                return LHPFPlanner(model)

    reports = []
    for scenario in scenarios:
        report = run_episode(scenario, make_planner(), mode=args.mode, seed=seed)
        reports.append(report)
        logger.info("scenario %s:%d score %.2f", scenario.kind, scenario.seed,
                    report.composite_score)
    out = Path(args.report)
    write_reports_csv(reports, out)
    _write_effective_config(out, {
        "command": "simulate", "seed": seed, "mode": args.mode,
        "planner": args.planner, "ckpt": str(args.ckpt) if args.ckpt else None,
        "scenarios": str(args.scenarios),
    })
    mean_score = float(np.mean([r.composite_score for r in reports])) if reports else 0.0
    print(f"simulated {len(reports)} scenarios, mean composite {mean_score:.2f}; "
          f"report at {out}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    from .dataset import load_dataset
    from .model import load_checkpoint
    from .training import build_training_samples, open_loop_ade

    seed = _seed_from(args)
    model, _ = load_checkpoint(args.ckpt)
    scenarios = load_dataset(args.data)
    samples = build_training_samples(scenarios, model.cfg, args.stride)
    ade_backbone = open_loop_ade(model, samples, use_history=False)
    ade_history = open_loop_ade(model, samples, use_history=True)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(
        "metric,value\n"
        f"open_loop_ade_backbone,{ade_backbone!r}\n"
        f"open_loop_ade_history,{ade_history!r}\n"
        f"num_samples,{len(samples)}\n"
    )
    _write_effective_config(out, {"command": "evaluate", "seed": seed,
                                  "ckpt": str(args.ckpt), "data": str(args.data)})
    print(f"open-loop ADE backbone {ade_backbone:.3f} m, history path {ade_history:.3f} m; "
          f"written to {out}")
    return EXIT_OK


def _cmd_ablate(args) -> int:
    from .ablation import AblationConfig, sweep
    from .dataset import load_dataset
    from .model import load_checkpoint
    from .training import build_training_samples

    cfg = _load_config(args.config)
    seed = _seed_from(args)
    train_cfg = _train_config(cfg, {"epochs": args.epochs, "seed": seed})
    values: list = []
    for raw in args.values.split(","):
        raw = raw.strip()
        if args.axis in ("interval", "epochs"):
            values.append(int(raw))
        elif args.axis == "comfort":
            values.append(raw.lower() in ("1", "true", "on", "yes"))
        else:
            values.append(raw)

    model, _ = load_checkpoint(args.backbone)
    train_scenarios = load_dataset(args.data)
    eval_scenarios = load_dataset(args.eval)
    samples = build_training_samples(train_scenarios, model.cfg, train_cfg.sample_stride)
    base = AblationConfig(backbone_path=args.backbone, train_cfg=train_cfg,
                          mode=args.mode, seed=seed)
    rows = sweep(args.axis, values, base, samples, eval_scenarios, out_csv=args.out)
    _write_effective_config(Path(args.out), {
        "command": "ablate", "axis": args.axis, "values": args.values,
        "seed": seed, "backbone": str(args.backbone),
    })
    for row in rows:
        print(f"{args.axis}={row.value}: composite {row.composite_score:.2f} "
              f"consistency {row.consistency:.3f}{' [FAILED]' if row.failed else ''}")
    return EXIT_OK


def _cmd_plot(args) -> int:
    from .plotting import plot_report_csv, plot_scenario_snapshot, plot_sweep_csv

    out_dir = Path(args.out_dir)
    made: list[Path] = []
    if args.input:
        path = Path(args.input)
        if not path.exists():
            raise ConfigError(f"input: file not found: {path}")
        header = path.read_text().splitlines()
        if header and header[0].startswith("axis,"):
            made += plot_sweep_csv(path, out_dir)
        else:
            made += plot_report_csv(path, out_dir)
    if args.scenarios:
        from .dataset import load_dataset

        scenarios = load_dataset(args.scenarios)
        frames = [int(x) for x in args.frames.split(",")] if args.frames else [0]
        for i, scenario in enumerate(scenarios[: args.max_snapshots]):
            for t in frames:
                made.append(plot_scenario_snapshot(
                    scenario, t, out_dir / f"scenario_{i}_frame_{t}.png"
                ))
    if not made:
        logger.warning("nothing to plot")
    print(f"wrote {len(made)} figures to {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lhpf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic scenarios")
    p.add_argument("--kinds", default="straight,lane_change,intersection_turn,dense_traffic")
    p.add_argument("--count", type=int, default=10, help="scenarios per kind")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="phase-1 backbone training")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--comfort", action="store_true", help="add the comfort loss in phase 1")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("finetune", help="phase-2 fine-tuning of the history decoder")
    p.add_argument("--backbone", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--interval", type=int, default=10)
    p.add_argument("--fusion", choices=("sum", "attention"), default="sum")
    p.add_argument("--no-comfort", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("simulate", help="closed-loop simulation")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--scenarios", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--mode", choices=("reactive", "nonreactive"), default="reactive")
    p.add_argument("--planner", choices=("lhpf", "backbone", "expert"), default="lhpf")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=os.cpu_count(),
                   help="reserved for parallel episode execution")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("evaluate", help="open-loop evaluation of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("ablate", help="ablation sweep over one axis")
    p.add_argument("--axis", choices=("fusion", "interval", "epochs", "comfort"), required=True)
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--backbone", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--eval", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--mode", choices=("reactive", "nonreactive"), default="reactive")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("plot", help="emit figures from reports, sweeps, or scenarios")
    p.add_argument("--input", default=None, help="report or sweep CSV")
    p.add_argument("--scenarios", default=None, help="dataset for BEV snapshots")
    p.add_argument("--frames", default=None, help="comma-separated frame indices")
    p.add_argument("--max-snapshots", dest="max_snapshots", type=int, default=4)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=_cmd_plot)
    return parser


def cli(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {args.command}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(f"error: {args.command}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - single-line diagnostic contract
        print(f"error: {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(cli())
