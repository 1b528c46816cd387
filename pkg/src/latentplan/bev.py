"""Bird's-eye-view rasterization of a scene.

Channel layout of ``BEVGrid.features`` (H x W x C, C = 11):

    0..2   map categories, one-hot, traced along polylines
           (lane_divider, road_boundary, pedestrian_crossing)
    3..8   agent occupancy at frames -5..0 (one channel per frame, counts)
    9, 10  sin / cos of agent heading at frame 0, at the agent's cell

Row index grows with +y and column index with +x; the grid is centered on the
ego at frame 0. Cells outside every feature are zero.
"""

import math
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from skimage.draw import line

from .geometry import MAP_CATEGORIES, PAST_FRAMES, Pose2
from .scenes import Scene

MAP_CHANNELS = slice(0, 3)
OCCUPANCY_CHANNELS = slice(3, 3 + PAST_FRAMES + 1)
HEADING_SIN_CHANNEL = 3 + PAST_FRAMES + 1
HEADING_COS_CHANNEL = HEADING_SIN_CHANNEL + 1
NUM_CHANNELS = HEADING_COS_CHANNEL + 1


class GridConfig(BaseModel):
    """BEV grid resolution and metric extent (meters per side)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    height: int = Field(32, gt=0)
    width: int = Field(32, gt=0)
    extent: float = Field(60.0, gt=0.0)


@dataclass(frozen=True)
class BEVGrid:
    features: np.ndarray
    extent: float
    origin: Pose2 = Pose2(0.0, 0.0, 0.0)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.features.shape


def world_to_cell(x: float, y: float, cfg: GridConfig) -> tuple[int, int]:
    """(row, col) of the cell containing a point; may lie outside the grid."""
    half = cfg.extent / 2.0
    col = math.floor((x + half) * cfg.width / cfg.extent)
    row = math.floor((y + half) * cfg.height / cfg.extent)
    return row, col


def _in_grid(row: int, col: int, cfg: GridConfig) -> bool:
    return 0 <= row < cfg.height and 0 <= col < cfg.width


def rasterize_bev(scene: Scene, cfg: GridConfig) -> BEVGrid:
    """Rasterize map polylines and agent history into a BEV feature grid."""
    features = np.zeros((cfg.height, cfg.width, NUM_CHANNELS), dtype=np.float32)

    for polyline in scene.map:
        channel = MAP_CATEGORIES.index(polyline.category)
        cells = [world_to_cell(x, y, cfg) for x, y in polyline.points]
        for (r0, c0), (r1, c1) in zip(cells, cells[1:]):
            rr, cc = line(r0, c0, r1, c1)
            keep = (rr >= 0) & (rr < cfg.height) & (cc >= 0) & (cc < cfg.width)
            features[rr[keep], cc[keep], channel] = 1.0

    for agent in scene.agents:
        for offset, wp in enumerate(agent.past.waypoints):
            row, col = world_to_cell(wp.x, wp.y, cfg)
            if _in_grid(row, col, cfg):
                features[row, col, OCCUPANCY_CHANNELS.start + offset] += 1.0
        current = agent.past.waypoints[-1]
        row, col = world_to_cell(current.x, current.y, cfg)
        if _in_grid(row, col, cfg):
            features[row, col, HEADING_SIN_CHANNEL] += math.sin(agent.box.center.heading)
            features[row, col, HEADING_COS_CHANNEL] += math.cos(agent.box.center.heading)

    return BEVGrid(features=features, extent=cfg.extent)
