"""Tests for procedural scene generation."""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from latentplan.errors import GenerationError
from latentplan.geometry import MapCategory, boxes_overlap, footprints, heading_at, Trajectory
from latentplan.scenes import (
    AgentClass,
    MotionKind,
    SceneGenConfig,
    arc_motion,
    frame_times,
    generate_scene,
    generate_scenes,
    lane_change_motion,
    quintic_blend,
    straight_motion,
)


@pytest.fixture(scope="module")
def scenes():
    return generate_scenes(SceneGenConfig(), range(24))


class TestMotionModels:
    """Tests for the closed-form motion primitives."""

    def test_straight_spacing(self) -> None:
        """Test that 4 m/s straight motion advances exactly 2.0 m per frame."""
        xy = straight_motion(4.0, frame_times(1, 6))
        np.testing.assert_allclose(np.linalg.norm(np.diff(xy, axis=0), axis=1), 2.0, atol=1e-12)

    def test_arc_heading_change(self) -> None:
        """Test that an arc turns by curvature * speed * dt per frame."""
        xy = arc_motion(6.0, 0.05, frame_times(0, 6))
        traj = Trajectory.from_xy(xy, 0)
        headings = [heading_at(traj, k) for k in range(6)]
        np.testing.assert_allclose(np.diff(headings), 0.15, atol=1e-6)

    def test_arc_matches_numerical_integration(self) -> None:
        """Test the closed-form arc against Euler integration of the heading ODE."""
        v, kappa, n = 6.0, 0.05, 30000
        dt = 3.0 / n
        pos, theta = np.zeros(2), 0.0
        for _ in range(n):
            pos += v * dt * np.array([math.cos(theta + 0.5 * kappa * v * dt), math.sin(theta + 0.5 * kappa * v * dt)])
            theta += kappa * v * dt
        np.testing.assert_allclose(arc_motion(v, kappa, np.array([3.0]))[0], pos, atol=1e-6)

    def test_quintic_blend_endpoints(self) -> None:
        """Test that the lane-change blend starts and ends at rest."""
        tau = np.array([0.0, 0.5, 1.0, 2.0])
        np.testing.assert_allclose(quintic_blend(tau), [0.0, 0.5, 1.0, 1.0])

    def test_lane_change_reaches_offset(self) -> None:
        """Test that a lane change ends at the target lateral offset."""
        xy = lane_change_motion(5.0, 3.5, 3.0, np.array([0.0, 3.0]))
        np.testing.assert_allclose(xy[:, 1], [0.0, 3.5])


class TestGenerateScene:
    """Tests for generate_scene."""

    def test_deterministic(self) -> None:
        """Test that the same (config, seed) yields equal scenes."""
        cfg = SceneGenConfig()
        assert generate_scene(cfg, 7) == generate_scene(cfg, 7)

    def test_different_seeds_differ(self) -> None:
        """Test that different seeds yield different scenes."""
        cfg = SceneGenConfig()
        assert generate_scene(cfg, 1) != generate_scene(cfg, 2)

    def test_parallel_matches_serial(self) -> None:
        """Test that worker threads do not change the generated scenes."""
        cfg = SceneGenConfig()
        assert generate_scenes(cfg, range(6), max_workers=3) == generate_scenes(cfg, range(6))

    def test_frame_layout(self, scenes) -> None:
        """Test past frames -5..0 and future frames 1..6 for every instance."""
        for scene in scenes:
            for record in [scene.ego, *scene.agents]:
                assert [w.t_index for w in record.past.waypoints] == list(range(-5, 1))
                assert [w.t_index for w in record.future.waypoints] == list(range(1, 7))

    def test_ego_at_origin(self, scenes) -> None:
        """Test that scenes are expressed in the ego's frame-0 frame."""
        for scene in scenes:
            np.testing.assert_allclose(scene.ego.past.xy()[-1], [0.0, 0.0], atol=1e-12)
            assert scene.ego.box.center.heading == 0.0

    def test_agent_count_range(self, scenes) -> None:
        """Test that every scene holds between 2 and 12 agents."""
        for scene in scenes:
            assert 2 <= len(scene.agents) <= 12
            assert [a.id for a in scene.agents] == list(range(len(scene.agents)))

    def test_gt_futures_collision_free(self, scenes) -> None:
        """Test that no two GT future footprints overlap at any frame."""
        for scene in scenes:
            tracks = [footprints(scene.ego.future, scene.ego.box.length, scene.ego.box.width)]
            tracks += [footprints(a.future, a.box.length, a.box.width) for a in scene.agents]
            for i in range(len(tracks)):
                for j in range(i + 1, len(tracks)):
                    for a, b in zip(tracks[i], tracks[j]):
                        assert not boxes_overlap(a, b)

    def test_within_extent(self, scenes) -> None:
        """Test that every trajectory and polyline lies inside the map extent."""
        half = SceneGenConfig().extent / 2
        for scene in scenes:
            for record in [scene.ego, *scene.agents]:
                assert np.abs(record.past.xy()).max() < half
                assert np.abs(record.future.xy()).max() < half
            for polyline in scene.map:
                assert np.abs(polyline.xy()).max() < half

    def test_straight_agents_have_zero_second_difference(self, scenes) -> None:
        """Test that straight movers have constant velocity."""
        seen = 0
        for scene in scenes:
            for agent in scene.agents:
                if agent.motion_kind != MotionKind.STRAIGHT:
                    continue
                xy = np.concatenate([agent.past.xy(), agent.future.xy()])
                assert np.abs(np.diff(xy, n=2, axis=0)).max() < 1e-9
                seen += 1
        assert seen > 0

    def test_map_has_boundaries(self, scenes) -> None:
        """Test that every scene has road boundaries on both sides."""
        for scene in scenes:
            assert len(scene.polylines(MapCategory.ROAD_BOUNDARY)) == 2

    def test_pedestrians_are_small_and_slow(self, scenes) -> None:
        """Test the pedestrian box size and speed limit."""
        for scene in scenes:
            for agent in scene.agents:
                if agent.agent_class != AgentClass.PEDESTRIAN:
                    continue
                assert agent.box.length == agent.box.width == 0.8
                steps = np.linalg.norm(np.diff(agent.future.xy(), axis=0), axis=1)
                assert steps.max() <= 2.0 * 0.5 + 1e-9

    def test_unsatisfiable_config_raises(self) -> None:
        """Test that 12 agents cannot be placed in a 10 m extent."""
        cfg = SceneGenConfig(min_agents=12, max_agents=12, extent=10.0, max_resamples=5)
        with pytest.raises(GenerationError):
            generate_scene(cfg, 0)


class TestSceneGenConfig:
    """Tests for config validation."""

    def test_rejects_unknown_keys(self) -> None:
        """Test that unknown fields are rejected."""
        with pytest.raises(ValidationError):
            SceneGenConfig(num_lanes=3)

    def test_rejects_speed_out_of_range(self) -> None:
        """Test that speeds above 15 m/s are rejected."""
        with pytest.raises(ValidationError):
            SceneGenConfig(speed_range=(2.0, 20.0))

    def test_rejects_large_curvature(self) -> None:
        """Test that |curvature| above 0.1 is rejected."""
        with pytest.raises(ValidationError):
            SceneGenConfig(curvature_max=0.2)

    def test_rejects_inverted_agent_range(self) -> None:
        """Test that min_agents above max_agents is rejected."""
        with pytest.raises(ValidationError):
            SceneGenConfig(min_agents=5, max_agents=3)
