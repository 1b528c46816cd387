"""SVG overlays of a scene with ground-truth and generated trajectories."""

import logging
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .geometry import MapCategory, OrientedBox, Trajectory  # noqa: E402
from .model import AgentPrediction  # noqa: E402
from .scenes import Scene  # noqa: E402

logger = logging.getLogger(__name__)

MAP_STYLE = {
    MapCategory.LANE_DIVIDER: dict(color="0.6", linestyle="--", linewidth=0.8),
    MapCategory.ROAD_BOUNDARY: dict(color="k", linestyle="-", linewidth=1.2),
    MapCategory.PEDESTRIAN_CROSSING: dict(color="tab:cyan", linestyle="-", linewidth=1.0),
}


def draw_trajectory(ax, traj: Trajectory, color: str, linestyle: str = "-", label: str | None = None) -> None:
    xy = traj.xy()
    ax.plot(xy[:, 0], xy[:, 1], color=color, linestyle=linestyle, linewidth=1.2, marker=".", label=label)


def draw_box(ax, box: OrientedBox, color: str) -> None:
    corners = np.vstack([box.corners(), box.corners()[:1]])
    ax.plot(corners[:, 0], corners[:, 1], color=color, linewidth=0.8)


def plot_scene(
    scene: Scene,
    path: str | Path,
    plans: Sequence[Trajectory] = (),
    predictions: Sequence[AgentPrediction] = (),
    score_threshold: float = 0.5,
) -> Path:
    """Write an SVG with map polylines, GT boxes and futures, and generated
    ego plans (one line per sample) plus confident agent predictions."""
    plt.rcParams["svg.hashsalt"] = "latentplan"
    fig, ax = plt.subplots(figsize=(6, 6))
    try:
        for polyline in scene.map:
            xy = polyline.xy()
            ax.plot(xy[:, 0], xy[:, 1], **MAP_STYLE[polyline.category])
        for agent in scene.agents:
            draw_box(ax, agent.box, "tab:blue")
            draw_trajectory(ax, agent.future, "tab:blue")
        draw_box(ax, scene.ego.box, "tab:green")
        draw_trajectory(ax, scene.ego.past, "0.3", linestyle=":")
        draw_trajectory(ax, scene.ego.future, "tab:green", label="ego GT")
        for i, plan in enumerate(plans):
            draw_trajectory(ax, plan, "tab:red", label="plan" if i == 0 else None)
        confident = [p for p in predictions if p.score >= score_threshold]
        for i, pred in enumerate(confident):
            draw_trajectory(ax, pred.future, "tab:orange", "--", label="prediction" if i == 0 else None)
        ax.set_aspect("equal")
        ax.grid(True, linewidth=0.3)
        ax.legend(loc="upper left", fontsize="small")
        ax.set_title(scene.id)
        path = Path(path)
        fig.savefig(path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    logger.info(f"Wrote plot for scene {scene.id} to {path}")
    return path
