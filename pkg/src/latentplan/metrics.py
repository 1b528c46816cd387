"""Planning, prediction and perception metrics.

Planning: L2 displacement and collision rate at 1 s / 2 s / 3 s (frames
2 / 4 / 6), either at the timestep or averaged over all frames up to it.
Prediction: EPA, minADE, minFDE and miss rate per agent class, with
predictions assigned to ground truth by center distance at frame 0.
Perception: center-distance detection mAP and Chamfer map AP.

Every function here is pure; no RNG is involved.
"""

import json
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Literal, Sequence

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field

from .errors import ShapeError
from .geometry import (
    EGO_LENGTH,
    EGO_WIDTH,
    MAP_CATEGORIES,
    FrameTag,
    MapCategory,
    Trajectory,
    boxes_overlap,
    footprints,
    resample_polyline,
)
from .matching import hungarian_match
from .model import AgentPrediction, LatentPlanner, PlanResult, derive_seed
from .prior import SampleMode
from .scenes import AgentClass, Scene
from .tokenizer import MAP_POINTS

logger = logging.getLogger(__name__)

# Frame index per reported horizon (2 Hz)
HORIZONS: dict[str, int] = {"1s": 2, "2s": 4, "3s": 6}

# Prediction assignment and hit gates, meters
MATCH_GATE = 2.0
FDE_GATE = 2.0
FP_PENALTY = 0.5
SCORE_THRESHOLD = 0.5

DETECTION_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)
MAP_THRESHOLDS = (0.5, 1.0, 1.5)

SCHEMA_PATH = Path(__file__).parent / "schemas" / "metrics.schema.json"


class MetricMode(str, Enum):
    AT_TIMESTEP = "at_timestep"
    FRAME_AVERAGED = "frame_averaged"


class PlanMetrics(BaseModel):
    model_config = ConfigDict(extra="forbid")

    l2_at: dict[str, float]
    l2_avg: float = Field(ge=0.0)
    collision_at: dict[str, float]
    collision_avg: float = Field(ge=0.0, le=1.0)
    mode: MetricMode


class PredMetrics(BaseModel):
    """EPA and motion errors; a value is None when its class has no ground truth."""

    model_config = ConfigDict(extra="forbid")

    epa_car: float | None = Field(None, le=1.0)
    epa_ped: float | None = Field(None, le=1.0)
    ade_car: float | None = None
    ade_ped: float | None = None
    fde_car: float | None = None
    fde_ped: float | None = None
    miss_rate_car: float | None = None
    miss_rate_ped: float | None = None


class PerceptionMetrics(BaseModel):
    model_config = ConfigDict(extra="forbid")

    det_map: float | None = None
    map_ap_at: dict[str, float | None] = Field(default_factory=dict)
    map_map: float | None = None


class MetricsReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    planner: Literal["model", "gt", "constant_velocity"]
    num_scenes: int = Field(ge=0)
    plan: PlanMetrics
    prediction: PredMetrics | None = None
    perception: PerceptionMetrics | None = None
    config: dict[str, Any] = Field(default_factory=dict)


def metrics_json_schema() -> dict[str, Any]:
    return MetricsReport.model_json_schema()


def write_metrics_schema(path: str | Path = SCHEMA_PATH) -> None:
    Path(path).write_text(json.dumps(metrics_json_schema(), indent=2, sort_keys=True) + "\n")


# -- planning --------------------------------------------------------------


def _check_horizon(plan: Trajectory, gt: Trajectory) -> None:
    if len(plan) != len(gt) or plan.start_index != gt.start_index:
        raise ShapeError(
            f"plan frames {plan.start_index}..+{len(plan)} do not match ground truth "
            f"{gt.start_index}..+{len(gt)}"
        )
    if len(plan) < max(HORIZONS.values()):
        raise ShapeError(f"metrics need {max(HORIZONS.values())} future frames, got {len(plan)}")


def l2_error(plan: Trajectory, gt: Trajectory, mode: MetricMode | str) -> dict[str, float]:
    """L2 displacement per horizon.

    ``at_timestep`` reports the error at frame k; ``frame_averaged`` the mean
    error over frames 1..k.
    """
    _check_horizon(plan, gt)
    per_frame = np.linalg.norm(plan.xy() - gt.xy(), axis=1)
    if MetricMode(mode) == MetricMode.AT_TIMESTEP:
        return {label: float(per_frame[k - 1]) for label, k in HORIZONS.items()}
    return {label: float(per_frame[:k].mean()) for label, k in HORIZONS.items()}


def collision_flags(
    plan: Trajectory, scene: Scene, length: float = EGO_LENGTH, width: float = EGO_WIDTH
) -> np.ndarray:
    """Per plan frame, whether the ego footprint overlaps any agent's GT box."""
    ego_boxes = footprints(plan, length, width)
    flags = np.zeros(len(plan), dtype=bool)
    for agent in scene.agents:
        agent_boxes = footprints(agent.future, agent.box.length, agent.box.width)
        offset = plan.start_index - agent.future.start_index
        for i, ego_box in enumerate(ego_boxes):
            j = i + offset
            if 0 <= j < len(agent_boxes) and not flags[i] and boxes_overlap(ego_box, agent_boxes[j]):
                flags[i] = True
    return flags


def collision_rate(plan: Trajectory, scene: Scene, mode: MetricMode | str) -> dict[str, float]:
    """Per horizon: 1.0 if any frame up to k collides (``at_timestep``), or the
    colliding fraction of frames 1..k (``frame_averaged``)."""
    flags = collision_flags(plan, scene)
    if MetricMode(mode) == MetricMode.AT_TIMESTEP:
        return {label: float(flags[:k].any()) for label, k in HORIZONS.items()}
    return {label: float(flags[:k].mean()) for label, k in HORIZONS.items()}


def plan_metrics(
    plans: Sequence[Trajectory], scenes: Sequence[Scene], mode: MetricMode | str
) -> PlanMetrics:
    """Dataset means over scenes; ``*_avg`` is the mean over the three horizons."""
    if len(plans) != len(scenes):
        raise ShapeError(f"{len(plans)} plans for {len(scenes)} scenes")
    mode = MetricMode(mode)
    l2 = {label: [] for label in HORIZONS}
    col = {label: [] for label in HORIZONS}
    for plan, scene in zip(plans, scenes):
        for label, v in l2_error(plan, scene.ego.future, mode).items():
            l2[label].append(v)
        for label, v in collision_rate(plan, scene, mode).items():
            col[label].append(v)

    def mean(values: list[float]) -> float:
        return math.fsum(values) / len(values) if values else 0.0

    l2_at = {label: mean(v) for label, v in l2.items()}
    col_at = {label: mean(v) for label, v in col.items()}
    return PlanMetrics(
        l2_at=l2_at,
        l2_avg=mean(list(l2_at.values())),
        collision_at=col_at,
        collision_avg=mean(list(col_at.values())),
        mode=mode,
    )


def constant_velocity_plan(past: Trajectory, horizon: int = 6) -> Trajectory:
    """Extrapolate the last observed displacement for ``horizon`` frames."""
    xy = past.xy()
    velocity = xy[-1] - xy[-2] if len(xy) >= 2 else np.zeros(2)
    steps = np.arange(1, horizon + 1, dtype=np.float64)[:, None]
    return Trajectory.from_xy(xy[-1] + steps * velocity, past.waypoints[-1].t_index + 1, FrameTag.EGO)


# -- prediction ------------------------------------------------------------


@dataclass
class MotionCounts:
    """Per-class accumulators; summed across scenes before forming rates."""

    gt: int = 0
    hit: int = 0
    fp: int = 0
    matched: int = 0
    ade_sum: float = 0.0
    fde_sum: float = 0.0
    miss: int = 0

    def __add__(self, other: "MotionCounts") -> "MotionCounts":
        return MotionCounts(
            self.gt + other.gt,
            self.hit + other.hit,
            self.fp + other.fp,
            self.matched + other.matched,
            self.ade_sum + other.ade_sum,
            self.fde_sum + other.fde_sum,
            self.miss + other.miss,
        )

    def epa(self, beta: float = FP_PENALTY) -> float | None:
        if self.gt == 0:
            return None
        return max(-1.0, (self.hit - beta * self.fp) / self.gt)

    def ade(self) -> float | None:
        return self.ade_sum / self.matched if self.matched else None

    def fde(self) -> float | None:
        return self.fde_sum / self.matched if self.matched else None

    def miss_rate(self) -> float | None:
        return self.miss / self.matched if self.matched else None


def motion_counts(
    predictions: Sequence[AgentPrediction],
    scene: Scene,
    agent_class: AgentClass | str,
    alternatives: Sequence[Sequence[Trajectory]] | None = None,
    gate: float = MATCH_GATE,
    fde_gate: float = FDE_GATE,
    score_threshold: float = SCORE_THRESHOLD,
) -> MotionCounts:
    """Assign confident predictions of one class to GT agents and count.

    Assignment is a minimum-cost matching on frame-0 center distance, kept
    only within ``gate``. A matched GT agent is a hit when its final
    displacement error is below ``fde_gate``; confident unmatched predictions
    are false positives. ``alternatives[i]`` are extra sampled futures of
    prediction ``i``; errors take the minimum over all of them.
    """
    agent_class = AgentClass(agent_class)
    candidates = [
        i
        for i, p in enumerate(predictions)
        if p.agent_class == agent_class and p.score >= score_threshold
    ]
    gts = [a for a in scene.agents if a.agent_class == agent_class]
    counts = MotionCounts(gt=len(gts))
    if not candidates:
        return counts
    if not gts:
        counts.fp = len(candidates)
        return counts

    pred_pos = np.array([predictions[i].position for i in candidates], dtype=np.float64)
    gt_pos = np.array([[a.pose.x, a.pose.y] for a in gts], dtype=np.float64)
    dist = np.linalg.norm(pred_pos[:, None] - gt_pos[None], axis=-1)
    gated = np.where(dist > gate, 1e6, dist)
    matched_preds = set()
    for r, c in hungarian_match(gated):
        if dist[r, c] > gate:
            continue
        matched_preds.add(r)
        index = candidates[r]
        futures = [predictions[index].future]
        if alternatives is not None:
            futures += list(alternatives[index])
        gt_xy = gts[c].future.xy()
        errors = np.stack([np.linalg.norm(f.xy() - gt_xy, axis=1) for f in futures])
        ade = float(errors.mean(axis=1).min())
        fde = float(errors[:, -1].min())
        counts.matched += 1
        counts.ade_sum += ade
        counts.fde_sum += fde
        if fde < fde_gate:
            counts.hit += 1
        else:
            counts.miss += 1
    counts.fp = len(candidates) - len(matched_preds)
    return counts


def epa(
    predictions: Sequence[AgentPrediction],
    scene: Scene,
    agent_class: AgentClass | str,
    beta: float = FP_PENALTY,
) -> float | None:
    """``(hits - beta * false_positives) / num_gt``, clamped at -1; None without GT."""
    return motion_counts(predictions, scene, agent_class).epa(beta)


def motion_errors(
    predictions: Sequence[AgentPrediction],
    scene: Scene,
    agent_class: AgentClass | str,
    alternatives: Sequence[Sequence[Trajectory]] | None = None,
) -> dict[str, float | None]:
    counts = motion_counts(predictions, scene, agent_class, alternatives)
    return {"ade": counts.ade(), "fde": counts.fde(), "miss_rate": counts.miss_rate()}


def pred_metrics(
    predictions: Sequence[Sequence[AgentPrediction]],
    scenes: Sequence[Scene],
    alternatives: Sequence[Sequence[Sequence[Trajectory]]] | None = None,
) -> PredMetrics:
    """Dataset-level metrics from counts summed over scenes."""
    totals = {cls: MotionCounts() for cls in AgentClass}
    for i, (preds, scene) in enumerate(zip(predictions, scenes)):
        alts = alternatives[i] if alternatives is not None else None
        for cls in AgentClass:
            totals[cls] = totals[cls] + motion_counts(preds, scene, cls, alts)
    car, ped = totals[AgentClass.CAR], totals[AgentClass.PEDESTRIAN]
    return PredMetrics(
        epa_car=car.epa(),
        epa_ped=ped.epa(),
        ade_car=car.ade(),
        ade_ped=ped.ade(),
        fde_car=car.fde(),
        fde_ped=ped.fde(),
        miss_rate_car=car.miss_rate(),
        miss_rate_ped=ped.miss_rate(),
    )


# -- perception ------------------------------------------------------------


def average_precision(scores: Sequence[float], is_tp: Sequence[bool], num_gt: int) -> float | None:
    """All-point interpolated area under the precision/recall curve."""
    if num_gt == 0:
        return None
    if not scores:
        return 0.0
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    tp = np.asarray(is_tp, dtype=np.float64)[order]
    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(1.0 - tp)
    recall = np.concatenate([[0.0], cum_tp / num_gt, [1.0]])
    precision = np.concatenate([[1.0], cum_tp / (cum_tp + cum_fp), [0.0]])
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    return float(np.sum((recall[1:] - recall[:-1]) * precision[1:]))


def _greedy_tp(
    scored: list[tuple[float, int, Any]],
    gts_by_scene: dict[int, list[Any]],
    distance,
    threshold: float,
) -> list[bool]:
    """Walk predictions by descending score, each claiming its nearest free GT."""
    claimed = {s: np.zeros(len(g), dtype=bool) for s, g in gts_by_scene.items()}
    flags = [False] * len(scored)
    order = sorted(range(len(scored)), key=lambda i: -scored[i][0])
    for i in order:
        _, scene_idx, item = scored[i]
        gts = gts_by_scene.get(scene_idx, [])
        best, best_d = -1, math.inf
        for j, gt in enumerate(gts):
            if claimed[scene_idx][j]:
                continue
            d = distance(item, gt)
            if d < best_d:
                best, best_d = j, d
        if best >= 0 and best_d <= threshold:
            claimed[scene_idx][best] = True
            flags[i] = True
    return flags


def detection_ap(
    predictions: Sequence[Sequence[AgentPrediction]],
    scenes: Sequence[Scene],
    agent_class: AgentClass | str,
    threshold: float,
) -> float | None:
    agent_class = AgentClass(agent_class)
    scored = [
        (p.score, s, np.asarray(p.position))
        for s, preds in enumerate(predictions)
        for p in preds
        if p.agent_class == agent_class
    ]
    gts = {
        s: [np.array([a.pose.x, a.pose.y]) for a in scene.agents if a.agent_class == agent_class]
        for s, scene in enumerate(scenes)
    }
    num_gt = sum(len(g) for g in gts.values())
    flags = _greedy_tp(scored, gts, lambda a, b: float(np.linalg.norm(a - b)), threshold)
    return average_precision([x[0] for x in scored], flags, num_gt)


def chamfer_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric mean nearest-point distance between two point sets."""
    d = np.linalg.norm(a[:, None] - b[None], axis=-1)
    return float(0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean()))


@dataclass(frozen=True)
class MapElement:
    points: np.ndarray
    category: MapCategory
    score: float


def map_elements(result: PlanResult) -> list[MapElement]:
    """Decoded map tokens whose best non-background category wins."""
    probs = torch.softmax(result.map.logits.detach(), dim=-1).numpy()
    points = result.map.points.detach().numpy().astype(np.float64)
    elements = []
    for pts, p in zip(points, probs):
        cat = int(np.argmax(p[: len(MAP_CATEGORIES)]))
        elements.append(MapElement(pts, MAP_CATEGORIES[cat], float(p[cat])))
    return elements


def map_ap(
    elements: Sequence[Sequence[MapElement]],
    scenes: Sequence[Scene],
    category: MapCategory | str,
    threshold: float,
) -> float | None:
    category = MapCategory(category)
    scored = [
        (e.score, s, e.points)
        for s, elems in enumerate(elements)
        for e in elems
        if e.category == category
    ]
    gts = {
        s: [resample_polyline(p.xy(), MAP_POINTS) for p in scene.polylines(category)]
        for s, scene in enumerate(scenes)
    }
    num_gt = sum(len(g) for g in gts.values())
    flags = _greedy_tp(scored, gts, chamfer_distance, threshold)
    return average_precision([x[0] for x in scored], flags, num_gt)


def _mean_defined(values: list[float | None]) -> float | None:
    defined = [v for v in values if v is not None]
    return math.fsum(defined) / len(defined) if defined else None


def perception_metrics(results: Sequence[PlanResult], scenes: Sequence[Scene]) -> PerceptionMetrics:
    predictions = [r.agents for r in results]
    det = [
        detection_ap(predictions, scenes, cls, t) for cls in AgentClass for t in DETECTION_THRESHOLDS
    ]
    elements = [map_elements(r) for r in results]
    map_at = {
        str(t): _mean_defined([map_ap(elements, scenes, cat, t) for cat in MAP_CATEGORIES])
        for t in MAP_THRESHOLDS
    }
    return PerceptionMetrics(
        det_map=_mean_defined(det),
        map_ap_at=map_at,
        map_map=_mean_defined(list(map_at.values())),
    )


# -- whole-dataset evaluation ---------------------------------------------


def evaluate_baseline(
    planner: Literal["gt", "constant_velocity"],
    scenes: Sequence[Scene],
    metric_mode: MetricMode | str,
    config: dict[str, Any] | None = None,
) -> MetricsReport:
    """Planning metrics for a model-free planner."""
    if planner == "gt":
        plans = [s.ego.future for s in scenes]
    elif planner == "constant_velocity":
        plans = [constant_velocity_plan(s.ego.past, len(s.ego.future)) for s in scenes]
    else:
        raise ValueError(f"Unknown baseline planner: {planner!r}")
    return MetricsReport(
        planner=planner,
        num_scenes=len(scenes),
        plan=plan_metrics(plans, scenes, metric_mode),
        config=config or {},
    )


def evaluate(
    model: LatentPlanner,
    scenes: Sequence[Scene],
    metric_mode: MetricMode | str = MetricMode.AT_TIMESTEP,
    mode: SampleMode | str = SampleMode.MEAN,
    seed: int = 0,
    config: dict[str, Any] | None = None,
) -> MetricsReport:
    """Run the planner on every scene and report all metrics."""
    model.eval()
    results = []
    for i, scene in enumerate(scenes):
        generator = torch.Generator().manual_seed(derive_seed(seed, i))
        results.append(model.plan(scene, mode, generator))
    report = MetricsReport(
        planner="model",
        num_scenes=len(scenes),
        plan=plan_metrics([r.ego for r in results], scenes, metric_mode),
        prediction=pred_metrics([r.agents for r in results], scenes),
        perception=perception_metrics(results, scenes),
        config=config or {},
    )
    logger.info(
        f"Evaluated {len(scenes)} scenes: l2_avg={report.plan.l2_avg:.3f} "
        f"collision_avg={report.plan.collision_avg:.3f}"
    )
    return report
