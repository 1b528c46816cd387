"""Command-line entry point: ``latentplan <command> [options]``.

Commands:
    gen-data  Generate a JSONL scene dataset
    train     Train a planner and write checkpoints plus an epoch log
    eval      Compute metrics JSON for a checkpoint or a baseline planner
    sample    Draw several futures per instance for one scene
    plot      Render a scene with GT and generated trajectories to SVG
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from .ablation import variant_weights
from .config import RunConfig, apply_threads, load_run_config
from .dataset import dataset_read, dataset_write
from .errors import ContractError, LatentPlanError
from .metrics import MetricMode, evaluate, evaluate_baseline
from .model import AgentPrediction, PlanResult, Variant
from .plotting import plot_scene
from .prior import SampleMode
from .scenes import Scene, generate_scenes
from .training import checkpoint_load, fit

logger = logging.getLogger(__name__)


def _write_json(path: Path | None, payload: Any) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file, then env overrides, then command-line flags."""
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    if args.paper_parity:
        cfg = cfg.paper_parity()
    if args.variant is not None:
        cfg = cfg.model_copy(update={"model": cfg.model.model_copy(update={"variant": Variant(args.variant)})})
    cfg = cfg.seeded()
    apply_threads(cfg)
    return cfg


def find_scene(scenes: list[Scene], scene_id: str | None) -> Scene:
    if not scenes:
        raise ContractError("dataset is empty")
    if scene_id is None:
        return scenes[0]
    for scene in scenes:
        if scene.id == scene_id:
            return scene
    raise ContractError(f"no scene with id {scene_id!r} in dataset")


def prediction_payload(pred: AgentPrediction) -> dict[str, Any]:
    return {
        "position": list(pred.position),
        "heading": pred.heading,
        "score": pred.score,
        "class": pred.agent_class.value,
        "future": pred.future.xy().tolist(),
    }


def result_payload(result: PlanResult) -> dict[str, Any]:
    return {
        "ego": result.ego.xy().tolist(),
        "agents": [prediction_payload(p) for p in result.agents],
    }


def cmd_gen_data(args: argparse.Namespace, cfg: RunConfig) -> int:
    count = args.num_scenes or cfg.num_scenes
    logger.info(f"Generating {count} scenes; config: {json.dumps(cfg.model_dump(mode='json'), sort_keys=True)}")
    scenes = generate_scenes(cfg.scenes, cfg.scene_seeds(count, args.offset), max_workers=cfg.workers)
    dataset_write(scenes, args.out)
    return 0


def cmd_train(args: argparse.Namespace, cfg: RunConfig) -> int:
    scenes = dataset_read(args.data)
    state = None
    train_cfg = cfg.train
    if args.resume is not None:
        state = checkpoint_load(args.resume)
        train_cfg = state.train_cfg
        logger.info(f"Resuming from {args.resume} at epoch {state.epoch}")
    if args.epochs is not None:
        train_cfg = train_cfg.model_copy(update={"epochs": args.epochs})
        if state is not None:
            state.train_cfg = train_cfg
    state = fit(
        scenes,
        cfg.model,
        train_cfg,
        variant_weights(cfg.model.variant, cfg.loss),
        state=state,
        out_dir=args.out,
        config=cfg.model_dump(mode="json"),
    )
    logger.info(f"Training finished after {state.epoch} epochs; checkpoints in {args.out}")
    return 0


def cmd_eval(args: argparse.Namespace, cfg: RunConfig) -> int:
    scenes = dataset_read(args.data)
    echo = cfg.model_dump(mode="json")
    if args.plans == "model":
        if args.checkpoint is None:
            raise ContractError("--checkpoint is required when evaluating model plans")
        state = checkpoint_load(args.checkpoint)
        report = evaluate(
            state.model,
            scenes,
            metric_mode=args.metric_mode,
            mode=args.mode,
            seed=cfg.seed,
            config=state.config or echo,
        )
    else:
        report = evaluate_baseline(args.plans, scenes, args.metric_mode, config=echo)
    _write_json(args.out, report.model_dump(mode="json"))
    return 0


def cmd_sample(args: argparse.Namespace, cfg: RunConfig) -> int:
    state = checkpoint_load(args.checkpoint)
    scene = find_scene(dataset_read(args.data), args.scene_id)
    results = state.model.sample_futures(scene, args.num_samples, cfg.seed, args.mode)
    _write_json(
        args.out,
        {
            "scene_id": scene.id,
            "mode": SampleMode(args.mode).value,
            "seed": cfg.seed,
            "samples": [result_payload(r) for r in results],
            "config": state.config,
        },
    )
    return 0


def cmd_plot(args: argparse.Namespace, cfg: RunConfig) -> int:
    scene = find_scene(dataset_read(args.data), args.scene_id)
    plans, predictions = [], []
    if args.checkpoint is not None:
        state = checkpoint_load(args.checkpoint)
        results = state.model.sample_futures(scene, args.num_samples, cfg.seed, args.mode)
        plans = [r.ego for r in results]
        predictions = results[0].agents
    plot_scene(scene, args.out, plans, predictions)
    return 0


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run config")
    common.add_argument("--seed", type=int, help="Master seed (overrides config and LATENTPLAN_SEED)")
    common.add_argument(
        "--variant", choices=[v.value for v in Variant], help="Model variant for ablations"
    )
    common.add_argument(
        "--paper-parity", action="store_true", help="Switch model dims to the full-size preset"
    )
    common.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging verbosity (default INFO)",
    )
    return common


def _add_mode(parser: argparse.ArgumentParser, default: SampleMode) -> None:
    parser.add_argument(
        "--mode",
        choices=[m.value for m in SampleMode],
        default=default.value,
        help=f"Latent decoding: distribution mean or a sample (default {default.value})",
    )


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="latentplan", description="Generative latent-space driving planner."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", parents=[common], help="Generate a scene dataset")
    gen.add_argument("--out", type=Path, required=True, help="Output JSONL path")
    gen.add_argument("--num-scenes", type=int, help="Scene count (default: config num_scenes)")
    gen.add_argument("--offset", type=int, default=0, help="First scene index for seed derivation")
    gen.set_defaults(handler=cmd_gen_data)

    train = sub.add_parser("train", parents=[common], help="Train a planner")
    train.add_argument("--data", type=Path, required=True, help="Training dataset (JSONL)")
    train.add_argument("--out", type=Path, required=True, help="Directory for checkpoints and epochs.jsonl")
    train.add_argument("--epochs", type=int, help="Override the configured epoch count")
    train.add_argument("--resume", type=Path, help="Checkpoint to continue from")
    train.set_defaults(handler=cmd_train)

    ev = sub.add_parser("eval", parents=[common], help="Compute metrics JSON")
    ev.add_argument("--data", type=Path, required=True, help="Evaluation dataset (JSONL)")
    ev.add_argument("--checkpoint", type=Path, help="Checkpoint (required for --plans model)")
    ev.add_argument("--out", type=Path, help="Metrics JSON path (default: stdout)")
    ev.add_argument(
        "--plans",
        choices=["model", "gt", "constant_velocity"],
        default="model",
        help="Which planner produces the evaluated plans (default model)",
    )
    ev.add_argument(
        "--metric-mode",
        choices=[m.value for m in MetricMode],
        default=MetricMode.AT_TIMESTEP.value,
        help="Per-horizon metric convention (default at_timestep)",
    )
    _add_mode(ev, SampleMode.MEAN)
    ev.set_defaults(handler=cmd_eval)

    sample = sub.add_parser("sample", parents=[common], help="Sample futures for one scene")
    sample.add_argument("--checkpoint", type=Path, required=True, help="Trained checkpoint")
    sample.add_argument("--data", type=Path, required=True, help="Dataset holding the scene")
    sample.add_argument("--scene-id", help="Scene id (default: first scene)")
    sample.add_argument("-n", "--num-samples", type=int, default=5, help="Futures per instance")
    sample.add_argument("--out", type=Path, help="Output JSON path (default: stdout)")
    _add_mode(sample, SampleMode.SAMPLE)
    sample.set_defaults(handler=cmd_sample)

    plot = sub.add_parser("plot", parents=[common], help="Render a scene overlay to SVG")
    plot.add_argument("--data", type=Path, required=True, help="Dataset holding the scene")
    plot.add_argument("--scene-id", help="Scene id (default: first scene)")
    plot.add_argument("--checkpoint", type=Path, help="Overlay plans from this checkpoint")
    plot.add_argument("-n", "--num-samples", type=int, default=1, help="Plans to overlay")
    plot.add_argument("--out", type=Path, required=True, help="Output SVG path")
    _add_mode(plot, SampleMode.MEAN)
    plot.set_defaults(handler=cmd_plot)
    return parser


def _format_validation_error(exc: ValidationError) -> str:
    lines = ["invalid config:"]
    for err in exc.errors():
        where = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"  {where}: {err['msg']}")
    return "\n".join(lines)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        cfg = resolve_config(args)
        return args.handler(args, cfg)
    except ValidationError as exc:
        print(_format_validation_error(exc), file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return 1
    except (LatentPlanError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
