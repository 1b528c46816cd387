"""Shared fixtures: hand-built scenes and toy-sized models."""

import numpy as np
import pytest

from latentplan.bev import GridConfig
from latentplan.geometry import FrameTag, MapCategory, OrientedBox, Polyline, Pose2, Trajectory
from latentplan.kernels import AttentionConfig
from latentplan.model import ModelConfig, Variant, build_model
from latentplan.prior import GenerationConfig
from latentplan.scenes import AgentClass, AgentRecord, EgoRecord, MotionKind, Scene


def straight_track(x0: float, y0: float, vx: float, vy: float) -> tuple[Trajectory, Trajectory]:
    """Past (frames -5..0) and future (1..6) of constant-velocity motion through (x0, y0)."""
    t = np.arange(-5, 7, dtype=np.float64) * 0.5
    xy = np.stack([x0 + vx * t, y0 + vy * t], axis=1)
    return (
        Trajectory.from_xy(xy[:6], -5, FrameTag.EGO),
        Trajectory.from_xy(xy[6:], 1, FrameTag.EGO),
    )


def make_agent(
    agent_id: int,
    x: float,
    y: float,
    vx: float = 4.0,
    vy: float = 0.0,
    agent_class: AgentClass = AgentClass.CAR,
) -> AgentRecord:
    past, future = straight_track(x, y, vx, vy)
    size = (4.0, 1.8) if agent_class == AgentClass.CAR else (0.8, 0.8)
    heading = float(np.arctan2(vy, vx))
    return AgentRecord(
        id=agent_id,
        agent_class=agent_class,
        box=OrientedBox(Pose2(x, y, heading), *size),
        past=past,
        future=future,
        motion_kind=MotionKind.STRAIGHT,
    )


def make_scene(
    agents: tuple[AgentRecord, ...] = (),
    polylines: tuple[Polyline, ...] = (),
    ego_speed: float = 4.0,
    scene_id: str = "toy",
) -> Scene:
    past, future = straight_track(0.0, 0.0, ego_speed, 0.0)
    ego = EgoRecord(past=past, future=future, box=OrientedBox(Pose2(0.0, 0.0, 0.0), 4.0, 1.8))
    return Scene(id=scene_id, map=tuple(polylines), agents=tuple(agents), ego=ego, rng_seed=0)


def road_map() -> tuple[Polyline, ...]:
    """Straight two-lane road along +x; drivable area on the left of each boundary."""
    return (
        Polyline(((-28.0, -5.25), (28.0, -5.25)), MapCategory.ROAD_BOUNDARY),
        Polyline(((28.0, 5.25), (-28.0, 5.25)), MapCategory.ROAD_BOUNDARY),
        Polyline(((-28.0, 1.75), (28.0, 1.75)), MapCategory.LANE_DIVIDER),
    )


@pytest.fixture
def toy_scene() -> Scene:
    """Ego plus two well-separated cars on a straight road."""
    return make_scene(
        agents=(make_agent(0, 10.0, 3.5), make_agent(1, -12.0, -3.5, vx=3.0)),
        polylines=road_map(),
    )


def toy_model_config(variant: Variant = Variant.FULL, dtype: str = "float32", seed: int = 0) -> ModelConfig:
    return ModelConfig(
        attention=AttentionConfig(model_dim=16, num_heads=2, num_layers=1, num_sample_points=2),
        grid=GridConfig(height=8, width=8, extent=60.0),
        generation=GenerationConfig(latent_dim=8, gru_hidden=8),
        num_map_tokens=4,
        num_agent_slots=4,
        variant=variant,
        init_seed=seed,
        dtype=dtype,
    )


@pytest.fixture
def toy_config() -> ModelConfig:
    return toy_model_config()


@pytest.fixture
def toy_model(toy_config):
    return build_model(toy_config)


@pytest.fixture
def toy_model64():
    """Toy planner in float64 for finite-difference checks."""
    return build_model(toy_model_config(dtype="float64"))

