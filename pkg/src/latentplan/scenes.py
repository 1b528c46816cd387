"""Procedural driving scenes.

Scenes are generated directly in the ego's frame-0 coordinate frame: the ego
sits at the origin with heading 0 at frame 0 and drives along +x. Trajectories
follow the structural prior of real traffic: mostly straight, some
constant-curvature arcs and a few smooth (quintic) lane changes.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Iterable

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import GenerationError
from .geometry import (
    EGO_LENGTH,
    EGO_WIDTH,
    FRAME_PERIOD,
    FUTURE_FRAMES,
    PAST_FRAMES,
    FrameTag,
    MapCategory,
    OrientedBox,
    Polyline,
    Pose2,
    Trajectory,
    box_separation,
    footprints,
    se2_apply,
)

logger = logging.getLogger(__name__)

CAR_LENGTH = 4.0
CAR_WIDTH = 1.8
PEDESTRIAN_SIZE = 0.8

# Hard limits for config validation
MAX_SPEED = 15.0
MIN_VEHICLE_SPEED = 2.0
MAX_PEDESTRIAN_SPEED = 2.0
MAX_CURVATURE = 0.1


class AgentClass(str, Enum):
    CAR = "car"
    PEDESTRIAN = "pedestrian"


AGENT_CLASSES: tuple[AgentClass, ...] = tuple(AgentClass)


class MotionKind(str, Enum):
    STRAIGHT = "straight"
    ARC = "arc"
    LANE_CHANGE = "lane_change"


@dataclass(frozen=True)
class AgentRecord:
    """One traffic participant.

    ``motion_kind`` is generation metadata and is never shown to the model.
    """

    id: int
    agent_class: AgentClass
    box: OrientedBox
    past: Trajectory
    future: Trajectory
    motion_kind: MotionKind

    @property
    def pose(self) -> Pose2:
        return self.box.center


@dataclass(frozen=True)
class EgoRecord:
    past: Trajectory
    future: Trajectory
    box: OrientedBox
    motion_kind: MotionKind = MotionKind.STRAIGHT


@dataclass(frozen=True)
class Scene:
    id: str
    map: tuple[Polyline, ...]
    agents: tuple[AgentRecord, ...]
    ego: EgoRecord
    rng_seed: int

    def polylines(self, category: MapCategory) -> list[Polyline]:
        return [p for p in self.map if p.category == category]


class SceneGenConfig(BaseModel):
    """Scene generator settings."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    min_agents: int = Field(2, ge=0)
    max_agents: int = Field(12, ge=0, le=64)
    speed_range: tuple[float, float] = (2.0, 9.0)
    ego_speed_range: tuple[float, float] = (3.0, 8.0)
    pedestrian_speed_range: tuple[float, float] = (0.5, 2.0)
    curvature_min: float = Field(0.01, gt=0.0)
    curvature_max: float = Field(0.1, gt=0.0, le=MAX_CURVATURE)
    road_curvature_max: float = Field(0.04, gt=0.0, le=MAX_CURVATURE)
    extent: float = Field(60.0, gt=0.0)
    motion_weights: tuple[float, float, float] = (0.6, 0.3, 0.1)
    pedestrian_fraction: float = Field(0.25, ge=0.0, le=1.0)
    lane_count_range: tuple[int, int] = (2, 3)
    lane_width: float = Field(3.5, gt=0.0)
    crossing_probability: float = Field(0.5, ge=0.0, le=1.0)
    lane_change_duration: float = Field(3.0, gt=0.0)
    min_clearance: float = Field(0.6, ge=0.0)
    max_resamples: int = Field(100, ge=1)

    @model_validator(mode="after")
    def _check_ranges(self) -> "SceneGenConfig":
        if self.min_agents > self.max_agents:
            raise ValueError(f"min_agents {self.min_agents} > max_agents {self.max_agents}")
        for name in ("speed_range", "ego_speed_range"):
            lo, hi = getattr(self, name)
            if not MIN_VEHICLE_SPEED <= lo <= hi <= MAX_SPEED:
                raise ValueError(
                    f"{name} must satisfy {MIN_VEHICLE_SPEED} <= lo <= hi <= {MAX_SPEED}, got {(lo, hi)}"
                )
        lo, hi = self.pedestrian_speed_range
        if not 0.0 < lo <= hi <= MAX_PEDESTRIAN_SPEED:
            raise ValueError(f"pedestrian_speed_range must lie in (0, 2], got {(lo, hi)}")
        if self.curvature_min > self.curvature_max:
            raise ValueError("curvature_min must not exceed curvature_max")
        if min(self.motion_weights) < 0 or sum(self.motion_weights) <= 0:
            raise ValueError("motion_weights must be non-negative with a positive sum")
        if not 1 <= self.lane_count_range[0] <= self.lane_count_range[1]:
            raise ValueError(f"lane_count_range invalid: {self.lane_count_range}")
        return self


def frame_times(start: int, stop: int) -> np.ndarray:
    """Seconds for frame indices ``start..stop`` inclusive."""
    return np.arange(start, stop + 1, dtype=np.float64) * FRAME_PERIOD


def quintic_blend(tau: np.ndarray) -> np.ndarray:
    """C2-smooth 0 -> 1 blend with zero velocity and acceleration at both ends."""
    tau = np.clip(tau, 0.0, 1.0)
    return tau**3 * (10.0 - 15.0 * tau + 6.0 * tau**2)


def straight_motion(speed: float, t: np.ndarray) -> np.ndarray:
    return np.stack([speed * t, np.zeros_like(t)], axis=1)


def arc_motion(speed: float, curvature: float, t: np.ndarray) -> np.ndarray:
    """Constant-speed, constant-curvature path starting at the origin along +x."""
    theta = curvature * speed * t
    return np.stack([np.sin(theta) / curvature, (1.0 - np.cos(theta)) / curvature], axis=1)


def lane_change_motion(speed: float, offset: float, duration: float, t: np.ndarray) -> np.ndarray:
    return np.stack([speed * t, offset * quintic_blend(t / duration)], axis=1)


def road_points(s: np.ndarray, d: float, curvature: float) -> np.ndarray:
    """Points at arc length ``s`` and lateral offset ``d`` of a road through the origin."""
    s = np.asarray(s, dtype=np.float64)
    if curvature == 0.0:
        return np.stack([s, np.full_like(s, d)], axis=1)
    heading = curvature * s
    cx = np.sin(heading) / curvature
    cy = (1.0 - np.cos(heading)) / curvature
    return np.stack([cx - d * np.sin(heading), cy + d * np.cos(heading)], axis=1)


def _inside(points: np.ndarray, extent: float) -> np.ndarray:
    half = extent / 2.0
    return np.all(np.abs(points) < half, axis=-1)


def _clip_to_extent(points: np.ndarray, extent: float) -> np.ndarray | None:
    """Longest run of consecutive in-extent points, or None if shorter than 2."""
    mask = _inside(points, extent)
    best, cur_start, best_range = 0, None, (0, 0)
    for i, ok in enumerate(list(mask) + [False]):
        if ok and cur_start is None:
            cur_start = i
        elif not ok and cur_start is not None:
            if i - cur_start > best:
                best, best_range = i - cur_start, (cur_start, i)
            cur_start = None
    if best < 2:
        return None
    return points[best_range[0] : best_range[1]]


@dataclass(frozen=True)
class _Road:
    curvature: float
    lane_offsets: tuple[float, ...]
    right_offset: float
    left_offset: float


def _build_map(rng: np.random.Generator, cfg: SceneGenConfig, road: _Road) -> list[Polyline]:
    step = 2.0
    s = np.arange(-cfg.extent, cfg.extent + step, step)
    polylines: list[Polyline] = []

    def add(points: np.ndarray, category: MapCategory) -> None:
        clipped = _clip_to_extent(points, cfg.extent)
        if clipped is not None:
            polylines.append(Polyline(tuple(map(tuple, clipped)), category))

    # Road keeps the drivable area on the left of each boundary
    add(road_points(s, road.right_offset, road.curvature), MapCategory.ROAD_BOUNDARY)
    add(road_points(s, road.left_offset, road.curvature)[::-1], MapCategory.ROAD_BOUNDARY)
    for a, b in zip(road.lane_offsets, road.lane_offsets[1:]):
        add(road_points(s, (a + b) / 2.0, road.curvature), MapCategory.LANE_DIVIDER)

    if rng.random() < cfg.crossing_probability:
        s_c = rng.uniform(-cfg.extent / 4.0, cfg.extent / 4.0)
        corners = np.concatenate(
            [
                road_points(np.array([s_c - 2.0, s_c + 2.0]), road.right_offset, road.curvature),
                road_points(np.array([s_c + 2.0, s_c - 2.0]), road.left_offset, road.curvature),
            ]
        )
        ring = np.concatenate([corners, corners[:1]])
        if _inside(ring, cfg.extent).all():
            polylines.append(Polyline(tuple(map(tuple, ring)), MapCategory.PEDESTRIAN_CROSSING))
    return polylines


def _sample_kind(rng: np.random.Generator, weights: tuple[float, ...]) -> MotionKind:
    p = np.asarray(weights, dtype=np.float64)
    if p.sum() <= 0:
        return MotionKind.STRAIGHT
    return list(MotionKind)[int(rng.choice(len(p), p=p / p.sum()))]


def _split(xy: np.ndarray) -> tuple[Trajectory, Trajectory]:
    past = Trajectory.from_xy(xy[: PAST_FRAMES + 1], -PAST_FRAMES, FrameTag.EGO)
    future = Trajectory.from_xy(xy[PAST_FRAMES + 1 :], 1, FrameTag.EGO)
    return past, future


def _sample_ego(
    rng: np.random.Generator, cfg: SceneGenConfig
) -> tuple[EgoRecord, _Road]:
    t = frame_times(-PAST_FRAMES, FUTURE_FRAMES)
    for _ in range(cfg.max_resamples):
        n_lanes = int(rng.integers(cfg.lane_count_range[0], cfg.lane_count_range[1] + 1))
        ego_lane = int(rng.integers(0, n_lanes))
        w = cfg.lane_width
        offsets = tuple((i - ego_lane) * w for i in range(n_lanes))
        kind = _sample_kind(rng, cfg.motion_weights)
        speed = rng.uniform(*cfg.ego_speed_range)
        curvature = 0.0

        if kind == MotionKind.LANE_CHANGE:
            targets = [d for d in offsets if abs(abs(d) - w) < 1e-9]
            if not targets:
                kind = MotionKind.STRAIGHT
        if kind == MotionKind.ARC:
            curvature = float(
                rng.choice([-1.0, 1.0]) * rng.uniform(cfg.curvature_min, cfg.road_curvature_max)
            )
            xy = road_points(speed * t, 0.0, curvature)
        elif kind == MotionKind.LANE_CHANGE:
            target = float(targets[int(rng.integers(0, len(targets)))])
            xy = lane_change_motion(speed, target, cfg.lane_change_duration, t)
        else:
            xy = straight_motion(speed, t)

        if not _inside(xy, cfg.extent).all():
            continue
        road = _Road(
            curvature=curvature,
            lane_offsets=offsets,
            right_offset=offsets[0] - w / 2.0,
            left_offset=offsets[-1] + w / 2.0,
        )
        past, future = _split(xy)
        box = OrientedBox(Pose2(0.0, 0.0, 0.0), EGO_LENGTH, EGO_WIDTH)
        return EgoRecord(past=past, future=future, box=box, motion_kind=kind), road
    raise GenerationError(
        f"Could not place the ego inside a {cfg.extent} m extent after {cfg.max_resamples} tries"
    )


def _sample_agent(
    rng: np.random.Generator, cfg: SceneGenConfig, road: _Road, agent_id: int
) -> AgentRecord:
    t = frame_times(-PAST_FRAMES, FUTURE_FRAMES)
    half = cfg.extent / 2.0
    if rng.random() < cfg.pedestrian_fraction:
        agent_class = AgentClass.PEDESTRIAN
        length = width = PEDESTRIAN_SIZE
        x0, y0 = rng.uniform(-0.9 * half, 0.9 * half, size=2)
        heading = rng.uniform(-math.pi, math.pi)
        speed = rng.uniform(*cfg.pedestrian_speed_range)
        kind = _sample_kind(rng, cfg.motion_weights[:2])
    else:
        agent_class = AgentClass.CAR
        length, width = CAR_LENGTH, CAR_WIDTH
        lane = road.lane_offsets[int(rng.integers(0, len(road.lane_offsets)))]
        s0 = rng.uniform(-half, half)
        x0, y0 = road_points(np.array([s0]), lane, road.curvature)[0]
        heading = road.curvature * s0
        speed = rng.uniform(*cfg.speed_range)
        kind = _sample_kind(rng, cfg.motion_weights)

    if kind == MotionKind.ARC:
        curvature = rng.choice([-1.0, 1.0]) * rng.uniform(cfg.curvature_min, cfg.curvature_max)
        local = arc_motion(speed, float(curvature), t)
    elif kind == MotionKind.LANE_CHANGE:
        offset = rng.choice([-1.0, 1.0]) * cfg.lane_width
        local = lane_change_motion(speed, float(offset), cfg.lane_change_duration, t)
    else:
        local = straight_motion(speed, t)

    pose = Pose2(float(x0), float(y0), float(heading))
    past, future = _split(se2_apply(pose, local))
    return AgentRecord(
        id=agent_id,
        agent_class=agent_class,
        box=OrientedBox(pose, length, width),
        past=past,
        future=future,
        motion_kind=kind,
    )


def _full_track(past: Trajectory, future: Trajectory, length: float, width: float) -> list[OrientedBox]:
    full = Trajectory.from_xy(np.concatenate([past.xy(), future.xy()]), past.start_index)
    return footprints(full, length, width)


def generate_scene(cfg: SceneGenConfig, seed: int) -> Scene:
    """Generate one scene; a pure function of ``(cfg, seed)``.

    Agents whose boxes come closer than ``cfg.min_clearance`` to the ego or an
    already placed agent at any frame, or that leave the extent, are resampled
    up to ``cfg.max_resamples`` times and then dropped.

    Raises:
        GenerationError: If the ego cannot be placed or fewer than
            ``cfg.min_agents`` agents survive.
    """
    rng = np.random.default_rng(seed)
    ego, road = _sample_ego(rng, cfg)
    map_elements = _build_map(rng, cfg, road)

    tracks = [_full_track(ego.past, ego.future, ego.box.length, ego.box.width)]
    agents: list[AgentRecord] = []
    n_agents = int(rng.integers(cfg.min_agents, cfg.max_agents + 1))
    for agent_id in range(n_agents):
        for _ in range(cfg.max_resamples):
            agent = _sample_agent(rng, cfg, road, agent_id)
            full_xy = np.concatenate([agent.past.xy(), agent.future.xy()])
            if not _inside(full_xy, cfg.extent).all():
                continue
            track = _full_track(agent.past, agent.future, agent.box.length, agent.box.width)
            if all(
                box_separation(a, b) >= cfg.min_clearance
                for other in tracks
                for a, b in zip(track, other)
            ):
                agents.append(agent)
                tracks.append(track)
                break
        else:
            logger.debug(f"Scene {seed}: dropped agent {agent_id} after {cfg.max_resamples} tries")

    if len(agents) < cfg.min_agents:
        raise GenerationError(
            f"Scene {seed}: only {len(agents)} of the required {cfg.min_agents} agents could be placed"
        )
    # Renumber so ids stay contiguous after drops
    agents = [
        AgentRecord(i, a.agent_class, a.box, a.past, a.future, a.motion_kind)
        for i, a in enumerate(agents)
    ]
    return Scene(
        id=f"scene-{seed}",
        map=tuple(map_elements),
        agents=tuple(agents),
        ego=ego,
        rng_seed=seed,
    )


def generate_scenes(
    cfg: SceneGenConfig, seeds: Iterable[int], max_workers: int = 1
) -> list[Scene]:
    """Generate scenes for many seeds, preserving seed order."""
    seeds = list(seeds)
    if max_workers <= 1:
        return [generate_scene(cfg, s) for s in seeds]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(lambda s: generate_scene(cfg, s), seeds))
