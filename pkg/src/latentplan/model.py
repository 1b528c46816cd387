"""End-to-end planner: scene tokens -> latent distributions -> futures.

One shared set of encoders and decoders serves the ego plan and every agent
prediction; the ego is instance 0. Ablation variants switch the ego-to-agent
attention mask, the latent prior (future encoder + KL) and the recurrent
generator off independently.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Literal

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field
from torch import nn

from .bev import GridConfig, rasterize_bev
from .geometry import (
    MAP_CATEGORIES,
    FrameTag,
    MapCategory,
    Pose2,
    Trajectory,
    resample_polyline,
    se2_apply,
    se2_invert,
    trajectory_headings,
)
from .factory import build_decoder
from .kernels import AttentionConfig, seeded_init
from .matching import detection_cost, hungarian_match, map_cost
from .prior import (
    ClassDecoder,
    FutureEncoder,
    GenerationConfig,
    InstanceEncoder,
    LatentGaussian,
    SampleMode,
    sample_latent,
)
from .scenes import AGENT_CLASSES, AgentClass, Scene
from .tokenizer import MAP_POINTS, AgentDetection, AgentHeadOutput, MapDecode, SceneTokenizer, TokenSet

logger = logging.getLogger(__name__)


class Variant(str, Enum):
    FULL = "full"
    NO_EGO_TO_AGENT = "no_ego_to_agent"
    NO_TPM = "no_TPM"
    NO_LFTG = "no_LFTG"
    NEITHER = "neither"

    @property
    def uses_prior(self) -> bool:
        return self not in (Variant.NO_TPM, Variant.NEITHER)

    @property
    def uses_rollout(self) -> bool:
        return self not in (Variant.NO_LFTG, Variant.NEITHER)

    @property
    def masks_ego_to_agents(self) -> bool:
        return self == Variant.NO_EGO_TO_AGENT


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    attention: AttentionConfig = AttentionConfig()
    grid: GridConfig = GridConfig()
    generation: GenerationConfig = GenerationConfig()
    num_map_tokens: int = Field(16, gt=0)
    num_agent_slots: int = Field(16, gt=0)
    variant: Variant = Variant.FULL
    init_seed: int = 0
    dtype: Literal["float32", "float64"] = "float32"
    match_pos_weight: float = Field(1.0, ge=0.0)
    match_cls_weight: float = Field(1.0, ge=0.0)

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32


@dataclass(frozen=True)
class AgentPrediction:
    """A detected agent with its generated future in the ego frame."""

    position: tuple[float, float]
    heading: float
    score: float
    agent_class: AgentClass
    future: Trajectory


@dataclass
class PlanResult:
    ego: Trajectory
    agents: list[AgentPrediction]
    detections: list[AgentDetection]
    map: MapDecode


@dataclass
class SceneTargets:
    """Ground truth of one scene as tensors (agent futures in each agent's frame-0 frame)."""

    ego_future: torch.Tensor
    agent_positions: torch.Tensor
    agent_headings: torch.Tensor
    agent_classes: torch.Tensor
    agent_local_futures: torch.Tensor
    agent_box_centers: torch.Tensor
    agent_box_headings: torch.Tensor
    agent_box_sizes: torch.Tensor
    boundaries: list[torch.Tensor]
    dividers: list[torch.Tensor]
    map_points: np.ndarray
    map_categories: np.ndarray

    @property
    def num_agents(self) -> int:
        return self.agent_positions.shape[0]


@dataclass
class TrainingPass:
    """Everything the losses need from one training forward pass."""

    tokens: TokenSet
    agent_head: AgentHeadOutput
    map_decode: MapDecode
    det_pairs: list[tuple[int, int]]
    map_pairs: list[tuple[int, int]]
    instance_dist: LatentGaussian
    future_dist: LatentGaussian | None
    ego_recon: torch.Tensor
    agent_recon: torch.Tensor
    agent_class_logits: torch.Tensor
    matched_gt: list[int]
    targets: SceneTargets


def scene_targets(scene: Scene, dtype: torch.dtype = torch.float32) -> SceneTargets:
    def t(values) -> torch.Tensor:
        return torch.as_tensor(np.asarray(values, dtype=np.float64), dtype=dtype)

    agents = scene.agents
    horizon = len(scene.ego.future)
    local_futures, centers, headings = [], [], []
    for agent in agents:
        local_futures.append(se2_apply(se2_invert(agent.pose), agent.future.xy()))
        centers.append(agent.future.xy())
        headings.append(trajectory_headings(agent.future))
    map_points = [resample_polyline(p.xy(), MAP_POINTS) for p in scene.map]
    return SceneTargets(
        ego_future=t(scene.ego.future.xy()),
        agent_positions=t([[a.pose.x, a.pose.y] for a in agents]).reshape(-1, 2),
        agent_headings=t([a.pose.heading for a in agents]),
        agent_classes=torch.tensor(
            [AGENT_CLASSES.index(a.agent_class) for a in agents], dtype=torch.long
        ),
        agent_local_futures=t(local_futures).reshape(-1, horizon, 2),
        agent_box_centers=t(centers).reshape(-1, horizon, 2),
        agent_box_headings=t(headings).reshape(-1, horizon),
        agent_box_sizes=t([[a.box.length, a.box.width] for a in agents]).reshape(-1, 2),
        boundaries=[t(p.xy()) for p in scene.polylines(MapCategory.ROAD_BOUNDARY)],
        dividers=[t(p.xy()) for p in scene.polylines(MapCategory.LANE_DIVIDER)],
        map_points=np.asarray(map_points, dtype=np.float64).reshape(-1, MAP_POINTS, 2),
        map_categories=np.array([MAP_CATEGORIES.index(p.category) for p in scene.map], dtype=int),
    )


class LatentPlanner(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        gen = cfg.generation
        d = cfg.attention.model_dim
        self.tokenizer = SceneTokenizer(cfg.attention, cfg.grid, cfg.num_map_tokens, cfg.num_agent_slots)
        self.future_encoder = (
            FutureEncoder(gen.horizon, d, gen.latent_dim) if cfg.variant.uses_prior else None
        )
        self.instance_encoder = InstanceEncoder(d, gen.latent_dim)
        self.decoder = build_decoder(
            "rollout" if cfg.variant.uses_rollout else "direct",
            latent_dim=gen.latent_dim,
            horizon=gen.horizon,
            step_scale=gen.step_scale,
        )
        self.class_decoder = ClassDecoder(gen.latent_dim)

    @property
    def dtype(self) -> torch.dtype:
        return self.cfg.torch_dtype

    def scene_inputs(self, scene: Scene) -> tuple[torch.Tensor, torch.Tensor]:
        """(BEV grid, flattened ego history) in the model's dtype."""
        bev = torch.from_numpy(rasterize_bev(scene, self.cfg.grid).features).to(self.dtype)
        history = torch.from_numpy(scene.ego.past.xy().reshape(-1)).to(self.dtype)
        return bev, history

    def tokenize(self, scene: Scene) -> TokenSet:
        bev, history = self.scene_inputs(scene)
        return self.tokenizer(bev, history, self.cfg.variant.masks_ego_to_agents)

    def _match_detections(self, head: AgentHeadOutput, targets: SceneTargets) -> list[tuple[int, int]]:
        if targets.num_agents == 0:
            return []
        probs = torch.softmax(head.logits.detach(), dim=-1).numpy()
        cost = detection_cost(
            head.positions.detach().numpy(),
            probs,
            targets.agent_positions.numpy(),
            targets.agent_classes.numpy(),
            self.cfg.match_pos_weight,
            self.cfg.match_cls_weight,
        )
        return hungarian_match(cost)

    def _match_map(self, decode: MapDecode, targets: SceneTargets) -> list[tuple[int, int]]:
        if len(targets.map_categories) == 0:
            return []
        cost = map_cost(
            decode.points.detach().numpy(),
            torch.softmax(decode.logits.detach(), dim=-1).numpy(),
            targets.map_points,
            targets.map_categories,
            scale=self.tokenizer.position_scale,
            cls_weight=self.cfg.match_cls_weight,
        )
        return hungarian_match(cost)

    def training_pass(self, scene: Scene, generator: torch.Generator | None = None) -> TrainingPass:
        """Posterior-conditioned pass over the ego and every matched agent.

        With the prior on, reconstructions decode a reparameterized sample of
        the ground-truth future distribution; without it they decode the
        instance distribution's mean.
        """
        targets = scene_targets(scene, self.dtype)
        tokens = self.tokenize(scene)
        head = self.tokenizer.agent_head_outputs(tokens.agent_tokens)
        map_decode = self.tokenizer.decode_map(tokens.map_tokens)
        det_pairs = self._match_detections(head, targets)
        map_pairs = self._match_map(map_decode, targets)

        slots = [s for s, _ in det_pairs]
        matched_gt = [g for _, g in det_pairs]
        rows = torch.tensor([0] + [1 + s for s in slots], dtype=torch.long)
        context = tokens.instance_tokens[rows]
        instance_dist = self.instance_encoder(context)

        future_dist = None
        if self.future_encoder is not None:
            futures = torch.cat(
                [targets.ego_future.unsqueeze(0), targets.agent_local_futures[torch.tensor(matched_gt, dtype=torch.long)]], dim=0
            )
            future_dist = self.future_encoder(futures, context)
            z = sample_latent(future_dist, SampleMode.SAMPLE, generator).z
        else:
            z = instance_dist.mu
        recon = self.decoder.decode(z)
        return TrainingPass(
            tokens=tokens,
            agent_head=head,
            map_decode=map_decode,
            det_pairs=det_pairs,
            map_pairs=map_pairs,
            instance_dist=instance_dist,
            future_dist=future_dist,
            ego_recon=recon[0],
            agent_recon=recon[1:],
            agent_class_logits=self.class_decoder(z[1:]),
            matched_gt=matched_gt,
            targets=targets,
        )

    def _generate(
        self,
        tokens: TokenSet,
        mode: SampleMode | str,
        generator: torch.Generator | None,
    ) -> PlanResult:
        instance_dist = self.instance_encoder(tokens.instance_tokens)
        z = sample_latent(instance_dist, mode, generator).z
        futures = self.decoder.decode(z)
        class_logits = self.class_decoder(z[1:])
        head = self.tokenizer.agent_head_outputs(tokens.agent_tokens)
        detections = self.tokenizer.decode_agents(tokens.agent_tokens)
        background = torch.softmax(head.logits, dim=-1)[:, -1]

        agents = []
        for i, det in enumerate(detections):
            pose = Pose2(det.position[0], det.position[1], det.heading)
            local = futures[1 + i].numpy().astype(np.float64)
            agents.append(
                AgentPrediction(
                    position=det.position,
                    heading=pose.heading,
                    score=float(1.0 - background[i]),
                    agent_class=AGENT_CLASSES[int(class_logits[i].argmax())],
                    future=Trajectory.from_xy(se2_apply(pose, local), 1, FrameTag.EGO),
                )
            )
        ego = Trajectory.from_xy(futures[0].numpy().astype(np.float64), 1, FrameTag.EGO)
        return PlanResult(
            ego=ego,
            agents=agents,
            detections=detections,
            map=self.tokenizer.decode_map(tokens.map_tokens),
        )

    @torch.no_grad()
    def plan(
        self,
        scene: Scene,
        mode: SampleMode | str = SampleMode.MEAN,
        generator: torch.Generator | None = None,
    ) -> PlanResult:
        """Ego plan plus agent predictions from the instance distributions."""
        return self._generate(self.tokenize(scene), mode, generator)

    @torch.no_grad()
    def sample_futures(
        self,
        scene: Scene,
        n: int,
        seed: int,
        mode: SampleMode | str = SampleMode.SAMPLE,
    ) -> list[PlanResult]:
        """``n`` futures per instance; sample ``i`` uses a generator seeded from ``(seed, i)``."""
        tokens = self.tokenize(scene)
        results = []
        for i in range(n):
            generator = torch.Generator().manual_seed(derive_seed(seed, i))
            results.append(self._generate(tokens, mode, generator))
        return results


def derive_seed(*parts: int) -> int:
    """Stable 63-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence(list(parts)).generate_state(2, dtype=np.uint64)[0]) >> 1


def build_model(cfg: ModelConfig) -> LatentPlanner:
    """Construct a planner with parameters drawn from ``cfg.init_seed``."""
    with seeded_init(cfg.init_seed):
        model = LatentPlanner(cfg)
    model.to(cfg.torch_dtype)
    logger.debug(
        f"Built {cfg.variant.value} planner with {sum(p.numel() for p in model.parameters())} parameters"
    )
    return model

