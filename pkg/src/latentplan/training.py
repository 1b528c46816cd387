"""Optimization loop and training checkpoints.

Training is a pure function of (dataset, configs, seed): the epoch order
comes from ``default_rng((seed, epoch))``, every scene's latent noise from a
generator seeded by ``(seed, epoch, position)``, and reductions run in a fixed
order. Resuming from a checkpoint written after epoch ``k`` therefore
continues bitwise-identically to an uninterrupted run.
"""

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field

from .checkpoint import (
    encode_optimizer,
    encode_params,
    load_params,
    read_checkpoint,
    write_checkpoint,
)
from .errors import CheckpointError, ContractError, TrainingDivergedError
from .kernels import build_optimizer
from .losses import LossReport, LossWeights, compute_losses
from .model import LatentPlanner, ModelConfig, build_model, derive_seed
from .scenes import Scene

logger = logging.getLogger(__name__)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    epochs: int = Field(10, ge=1)
    lr: float = Field(2e-4, gt=0.0)
    weight_decay: float = Field(0.01, ge=0.0)
    seed: int = 0
    # Scenes per optimizer step
    accumulation: int = Field(1, ge=1)
    # Save every k epochs into the output directory; 0 keeps only the final one
    checkpoint_every: int = Field(0, ge=0)


@dataclass
class TrainState:
    model: LatentPlanner
    optimizer: torch.optim.AdamW
    scheduler: torch.optim.lr_scheduler.LambdaLR
    model_cfg: ModelConfig
    train_cfg: TrainConfig
    weights: LossWeights
    total_steps: int
    epoch: int = 0
    config: dict[str, Any] = field(default_factory=dict)
    history: list[LossReport] = field(default_factory=list)

    @property
    def seed(self) -> int:
        return self.train_cfg.seed


def steps_per_epoch(num_scenes: int, accumulation: int) -> int:
    return math.ceil(num_scenes / accumulation)


def init_train_state(
    num_scenes: int,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    weights: LossWeights,
    config: dict[str, Any] | None = None,
) -> TrainState:
    model = build_model(model_cfg)
    total = train_cfg.epochs * steps_per_epoch(num_scenes, train_cfg.accumulation)
    optimizer, scheduler = build_optimizer(
        model.parameters(), train_cfg.lr, train_cfg.weight_decay, total
    )
    return TrainState(
        model=model,
        optimizer=optimizer,
        scheduler=scheduler,
        model_cfg=model_cfg,
        train_cfg=train_cfg,
        weights=weights,
        total_steps=total,
        config=config or {},
    )


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng((seed, epoch)).permutation(n)


def train_epoch(state: TrainState, dataset: Sequence[Scene]) -> LossReport:
    """One pass over ``dataset``; returns the mean LossReport.

    Raises:
        TrainingDivergedError: If any loss term becomes non-finite.
    """
    cfg = state.train_cfg
    epoch = state.epoch
    order = epoch_order(cfg.seed, epoch, len(dataset))
    model = state.model
    model.train()
    reports: list[LossReport] = []
    for start in range(0, len(order), cfg.accumulation):
        window = order[start : start + cfg.accumulation]
        state.optimizer.zero_grad(set_to_none=True)
        for position, index in enumerate(window, start=start):
            generator = torch.Generator().manual_seed(derive_seed(cfg.seed, epoch, position))
            total, report = compute_losses(model, dataset[int(index)], state.weights, generator)
            bad = report.first_non_finite()
            if bad is not None:
                raise TrainingDivergedError(
                    bad,
                    f"epoch {epoch}, scene {dataset[int(index)].id}: loss term {bad} is "
                    f"{getattr(report, bad)} ({report.model_dump()})",
                )
            (total / len(window)).backward()
            reports.append(report)
        state.optimizer.step()
        state.scheduler.step()
    state.epoch += 1
    summary = LossReport.mean(reports, state.weights)
    state.history.append(summary)
    return summary


def fit(
    dataset: Sequence[Scene],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    weights: LossWeights,
    state: TrainState | None = None,
    out_dir: str | Path | None = None,
    config: dict[str, Any] | None = None,
    on_epoch: Callable[[TrainState, LossReport], None] | None = None,
) -> TrainState:
    """Train until ``train_cfg.epochs``, optionally resuming from ``state``.

    With ``out_dir`` an epoch log (``epochs.jsonl``) is appended and
    checkpoints are written every ``checkpoint_every`` epochs plus once at
    the end (``final.json``).

    Raises:
        ContractError: On an empty dataset.
        TrainingDivergedError: If a loss term becomes non-finite.
    """
    if not dataset:
        raise ContractError("cannot train on an empty dataset")
    if state is None:
        state = init_train_state(len(dataset), model_cfg, train_cfg, weights, config)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    while state.epoch < train_cfg.epochs:
        lr = state.optimizer.param_groups[0]["lr"]
        started = time.perf_counter()
        report = train_epoch(state, dataset)
        elapsed = time.perf_counter() - started
        logger.info(
            f"epoch {state.epoch}/{train_cfg.epochs}: j_total={report.j_total:.4f} lr={lr:.3e}"
        )
        if out is not None:
            with (out / "epochs.jsonl").open("a", encoding="utf-8") as f:
                record = {"epoch": state.epoch, "lr": lr, "elapsed_s": elapsed, **report.model_dump()}
                f.write(json.dumps(record, sort_keys=True) + "\n")
            every = train_cfg.checkpoint_every
            if every and state.epoch % every == 0:
                checkpoint_save(state, out / f"epoch-{state.epoch:03d}.json")
        if on_epoch is not None:
            on_epoch(state, report)

    if out is not None:
        checkpoint_save(state, out / "final.json")
    return state


def checkpoint_payload(state: TrainState) -> dict[str, Any]:
    return {
        "params": encode_params(state.model),
        "optimizer": encode_optimizer(state.optimizer),
        "scheduler": state.scheduler.state_dict(),
        "epoch": state.epoch,
        "total_steps": state.total_steps,
        "seed": state.seed,
        "model_config": state.model_cfg.model_dump(mode="json"),
        "train_config": state.train_cfg.model_dump(mode="json"),
        "loss_weights": state.weights.model_dump(mode="json"),
        "config": state.config,
    }


def checkpoint_save(state: TrainState, path: str | Path) -> None:
    write_checkpoint(path, checkpoint_payload(state))


def checkpoint_load(path: str | Path) -> TrainState:
    """Rebuild a TrainState from a checkpoint file.

    Raises:
        FileNotFoundError: If the file does not exist.
        CheckpointError: On a version mismatch or corrupt content; nothing is
            partially loaded.
    """
    payload = read_checkpoint(path)
    try:
        model_cfg = ModelConfig.model_validate(payload["model_config"])
        train_cfg = TrainConfig.model_validate(payload["train_config"])
        weights = LossWeights.model_validate(payload["loss_weights"])
        epoch = int(payload["epoch"])
        total_steps = int(payload["total_steps"])
        scheduler_state = dict(payload["scheduler"])
        optimizer_state = payload["optimizer"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: incomplete checkpoint: {exc}") from exc

    model = build_model(model_cfg)
    load_params(model, payload["params"])
    optimizer, scheduler = build_optimizer(
        model.parameters(), train_cfg.lr, train_cfg.weight_decay, total_steps
    )
    try:
        optimizer.load_state_dict(optimizer_state)
        scheduler.load_state_dict(scheduler_state)
    except (KeyError, ValueError, RuntimeError) as exc:
        raise CheckpointError(f"{path}: optimizer state does not fit the model: {exc}") from exc
    return TrainState(
        model=model,
        optimizer=optimizer,
        scheduler=scheduler,
        model_cfg=model_cfg,
        train_cfg=train_cfg,
        weights=weights,
        total_steps=total_steps,
        epoch=epoch,
        config=payload.get("config", {}),
    )
