"""Train and evaluate model variants under identical seeds and config."""

import csv
import logging
from pathlib import Path
from typing import Iterable, Sequence

from pydantic import BaseModel, ConfigDict

from .errors import ContractError
from .losses import LossWeights
from .metrics import MetricMode, evaluate
from .model import ModelConfig, Variant
from .scenes import Scene
from .training import TrainConfig, fit

logger = logging.getLogger(__name__)

TABLE_COLUMNS = (
    "variant",
    "seed",
    "ego_to_agent",
    "prior",
    "rollout",
    "l2_1s",
    "l2_2s",
    "l2_3s",
    "l2_avg",
    "col_1s",
    "col_2s",
    "col_3s",
    "col_avg",
)


class AblationRow(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    variant: Variant
    seed: int
    ego_to_agent: bool
    prior: bool
    rollout: bool
    l2_1s: float
    l2_2s: float
    l2_3s: float
    l2_avg: float
    col_1s: float
    col_2s: float
    col_3s: float
    col_avg: float


def parse_variants(names: Iterable[str]) -> list[Variant]:
    """Raises ContractError naming the first unknown variant."""
    variants = []
    for name in names:
        try:
            variants.append(Variant(name))
        except ValueError:
            known = ", ".join(v.value for v in Variant)
            raise ContractError(f"Unknown variant {name!r} (expected one of: {known})") from None
    return variants


def variant_weights(variant: Variant, weights: LossWeights) -> LossWeights:
    """Without the prior there is no KL term to weight."""
    if variant.uses_prior:
        return weights
    return weights.model_copy(update={"plan": 0.0})


def run_ablation(
    train_scenes: Sequence[Scene],
    eval_scenes: Sequence[Scene],
    variants: Iterable[str | Variant],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    weights: LossWeights,
    seeds: Sequence[int] = (0,),
    metric_mode: MetricMode | str = MetricMode.AT_TIMESTEP,
) -> list[AblationRow]:
    """One row per (variant, seed), in the order given."""
    parsed = parse_variants(v.value if isinstance(v, Variant) else v for v in variants)
    rows = []
    for variant in parsed:
        for seed in seeds:
            logger.info(f"Ablation: training {variant.value} with seed {seed}")
            state = fit(
                train_scenes,
                model_cfg.model_copy(update={"variant": variant, "init_seed": seed}),
                train_cfg.model_copy(update={"seed": seed}),
                variant_weights(variant, weights),
            )
            plan = evaluate(state.model, eval_scenes, metric_mode, seed=seed).plan
            rows.append(
                AblationRow(
                    variant=variant,
                    seed=seed,
                    ego_to_agent=not variant.masks_ego_to_agents,
                    prior=variant.uses_prior,
                    rollout=variant.uses_rollout,
                    l2_1s=plan.l2_at["1s"],
                    l2_2s=plan.l2_at["2s"],
                    l2_3s=plan.l2_at["3s"],
                    l2_avg=plan.l2_avg,
                    col_1s=plan.collision_at["1s"],
                    col_2s=plan.collision_at["2s"],
                    col_3s=plan.collision_at["3s"],
                    col_avg=plan.collision_avg,
                )
            )
    return rows


def write_ablation_csv(rows: Sequence[AblationRow], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=TABLE_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row.model_dump(mode="json"))
