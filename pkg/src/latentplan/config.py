"""Run configuration: one TOML file with a section per component."""

import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Mapping

import torch
from pydantic import BaseModel, ConfigDict, Field

from .bev import GridConfig
from .losses import LossWeights
from .model import ModelConfig, derive_seed
from .scenes import SceneGenConfig
from .training import TrainConfig

logger = logging.getLogger(__name__)

SEED_ENV = "LATENTPLAN_SEED"
NUM_THREADS_ENV = "LATENTPLAN_NUM_THREADS"


class RunConfig(BaseModel):
    """Everything a command needs; embedded verbatim in every output it writes.

    ``seed`` is the master seed: it feeds scene seeds, parameter init and the
    training shuffle (see ``seeded``).
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = 0
    num_scenes: int = Field(64, ge=1)
    workers: int = Field(1, ge=1)
    num_threads: int | None = Field(None, ge=1)
    scenes: SceneGenConfig = SceneGenConfig()
    model: ModelConfig = ModelConfig()
    loss: LossWeights = LossWeights()
    train: TrainConfig = TrainConfig()

    def seeded(self) -> "RunConfig":
        """Copy with the master seed pushed into the model and training sections."""
        return self.model_copy(
            update={
                "model": self.model.model_copy(update={"init_seed": self.seed}),
                "train": self.train.model_copy(update={"seed": self.seed}),
            }
        )

    def scene_seeds(self, count: int | None = None, offset: int = 0) -> list[int]:
        count = self.num_scenes if count is None else count
        return [derive_seed(self.seed, offset + i) for i in range(count)]

    def paper_parity(self) -> "RunConfig":
        """Full-size dimensions: 256-wide tokens, 512-wide latents, 100 map
        queries, 300 agent slots, a 100x100 BEV grid and batch-8 accumulation."""
        model = self.model.model_copy(
            update={
                "attention": self.model.attention.model_copy(update={"model_dim": 256, "num_heads": 8}),
                "generation": self.model.generation.model_copy(
                    update={"latent_dim": 512, "gru_hidden": 512}
                ),
                "grid": GridConfig(height=100, width=100, extent=self.model.grid.extent),
                "num_map_tokens": 100,
                "num_agent_slots": 300,
            }
        )
        train = self.train.model_copy(update={"accumulation": 8, "epochs": 60})
        return self.model_copy(update={"model": model, "train": train})


def apply_env_overrides(data: dict[str, Any], env: Mapping[str, str]) -> dict[str, Any]:
    data = dict(data)
    if env.get(SEED_ENV):
        data["seed"] = int(env[SEED_ENV])
    if env.get(NUM_THREADS_ENV):
        data["num_threads"] = int(env[NUM_THREADS_ENV])
    return data


def load_run_config(
    path: str | Path | None = None, env: Mapping[str, str] | None = None
) -> RunConfig:
    """Read a TOML run config, apply environment overrides and validate.

    Raises:
        FileNotFoundError: If ``path`` does not exist.
        tomllib.TOMLDecodeError: If the file is not valid TOML.
        pydantic.ValidationError: On unknown keys or out-of-range values.
    """
    data: dict[str, Any] = {}
    if path is not None:
        with Path(path).open("rb") as f:
            data = tomllib.load(f)
        logger.debug(f"Loaded run config from {path}")
    data = apply_env_overrides(data, os.environ if env is None else env)
    return RunConfig.model_validate(data)


def apply_threads(cfg: RunConfig) -> None:
    if cfg.num_threads is not None:
        torch.set_num_threads(cfg.num_threads)
        logger.info(f"Pinned torch to {cfg.num_threads} threads")
