"""Plain 2D geometry: poses, oriented boxes, polylines, trajectories and collision tests.

All values are immutable and every function is pure, so the module is safe to
use from any number of threads.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateTrajectoryError

# 2 Hz keyframes
FRAME_PERIOD = 0.5

# 2 s of history plus the current frame, 3 s of future
PAST_FRAMES = 5
FUTURE_FRAMES = 6

# Default ego footprint (meters); typical passenger car
EGO_LENGTH = 4.0
EGO_WIDTH = 1.8


class FrameTag(str, Enum):
    """Coordinate frame a trajectory is expressed in."""

    GLOBAL = "scene-global"
    EGO = "ego-centric"


class MapCategory(str, Enum):
    """Vectorized map element categories."""

    LANE_DIVIDER = "lane_divider"
    ROAD_BOUNDARY = "road_boundary"
    PEDESTRIAN_CROSSING = "pedestrian_crossing"


MAP_CATEGORIES: tuple[MapCategory, ...] = tuple(MapCategory)


def normalize_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped = math.pi
    return wrapped


@dataclass(frozen=True)
class Waypoint:
    """A position at a keyframe index (0.5 s per frame)."""

    x: float
    y: float
    t_index: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"Waypoint coordinates must be finite, got ({self.x}, {self.y})")


@dataclass(frozen=True)
class Trajectory:
    """Timestamped waypoint sequence for one instance."""

    waypoints: tuple[Waypoint, ...]
    frame: FrameTag = FrameTag.EGO

    def __post_init__(self) -> None:
        object.__setattr__(self, "waypoints", tuple(self.waypoints))
        if len(self.waypoints) < 1:
            raise ValueError("Trajectory needs at least one waypoint")
        for prev, cur in zip(self.waypoints, self.waypoints[1:]):
            if cur.t_index != prev.t_index + 1:
                raise ValueError(
                    f"Trajectory t_index must increase by 1, got {prev.t_index} -> {cur.t_index}"
                )
        first, last = self.waypoints[0].t_index, self.waypoints[-1].t_index
        if first < -PAST_FRAMES or last > FUTURE_FRAMES:
            raise ValueError(
                f"Trajectory frames {first}..{last} outside [-{PAST_FRAMES}, {FUTURE_FRAMES}]"
            )

    @classmethod
    def from_xy(
        cls,
        xy: np.ndarray | Sequence[Sequence[float]],
        start_index: int,
        frame: FrameTag = FrameTag.EGO,
    ) -> "Trajectory":
        """Build a trajectory from an (n, 2) array starting at ``start_index``."""
        arr = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        return cls(
            tuple(
                Waypoint(float(x), float(y), start_index + i) for i, (x, y) in enumerate(arr)
            ),
            frame,
        )

    def __len__(self) -> int:
        return len(self.waypoints)

    @property
    def start_index(self) -> int:
        return self.waypoints[0].t_index

    def xy(self) -> np.ndarray:
        """Waypoints as an (n, 2) float64 array."""
        return np.array([(w.x, w.y) for w in self.waypoints], dtype=np.float64)

    def translated(self, dx: float, dy: float) -> "Trajectory":
        return Trajectory.from_xy(self.xy() + np.array([dx, dy]), self.start_index, self.frame)


@dataclass(frozen=True)
class Pose2:
    """Planar pose; heading is kept in (-pi, pi]."""

    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "heading", normalize_angle(float(self.heading)))

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.heading), math.sin(self.heading)
        return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class OrientedBox:
    """Rectangle with a pose at its center."""

    center: Pose2
    length: float
    width: float

    def __post_init__(self) -> None:
        if not (self.length > 0 and self.width > 0):
            raise ValueError(
                f"Box dimensions must be positive, got {self.length} x {self.width}"
            )

    def axes(self) -> np.ndarray:
        """Unit vectors along the box length and width, shape (2, 2)."""
        c, s = math.cos(self.center.heading), math.sin(self.center.heading)
        return np.array([[c, s], [-s, c]])

    def corners(self) -> np.ndarray:
        """Corners in counter-clockwise order, shape (4, 2)."""
        half = np.array(
            [
                [self.length / 2, self.width / 2],
                [-self.length / 2, self.width / 2],
                [-self.length / 2, -self.width / 2],
                [self.length / 2, -self.width / 2],
            ]
        )
        return se2_apply(self.center, half)


@dataclass(frozen=True)
class Polyline:
    """Ordered map polyline of one category."""

    points: tuple[tuple[float, float], ...]
    category: MapCategory

    def __post_init__(self) -> None:
        pts = tuple((float(x), float(y)) for x, y in self.points)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "category", MapCategory(self.category))
        if len(pts) < 2:
            raise ValueError(f"Polyline needs at least 2 points, got {len(pts)}")
        for a, b in zip(pts, pts[1:]):
            if a == b:
                raise ValueError(f"Polyline has repeated consecutive point {a}")

    def xy(self) -> np.ndarray:
        return np.array(self.points, dtype=np.float64)


def se2_apply(pose: Pose2, pts: np.ndarray | Iterable[Sequence[float]]) -> np.ndarray:
    """Rotate points by the pose heading, then translate by its position."""
    arr = np.asarray(list(pts) if not isinstance(pts, np.ndarray) else pts, dtype=np.float64)
    arr = arr.reshape(-1, 2)
    return arr @ pose.rotation().T + np.array([pose.x, pose.y])


def se2_invert(pose: Pose2) -> Pose2:
    """Pose whose transform undoes ``pose``."""
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    return Pose2(-c * pose.x - s * pose.y, s * pose.x - c * pose.y, -pose.heading)


def box_separation(a: OrientedBox, b: OrientedBox) -> float:
    """Largest gap between the boxes' projections over the 4 candidate axes.

    Positive values are a lower bound on the distance between the boxes; zero
    or negative means the boxes touch or overlap.
    """
    ca, cb = a.corners(), b.corners()
    gap = -math.inf
    for axis in np.concatenate([a.axes(), b.axes()]):
        pa, pb = ca @ axis, cb @ axis
        gap = max(gap, float(pb.min() - pa.max()), float(pa.min() - pb.max()))
    return gap


def boxes_overlap(a: OrientedBox, b: OrientedBox) -> bool:
    """Separating-axis test; boundary contact counts as overlap."""
    return box_separation(a, b) <= 0.0


def _segment_headings(xy: np.ndarray) -> list[float]:
    """Per-segment headings with zero-length segments filled from neighbours."""
    deltas = np.diff(xy, axis=0)
    headings: list[float | None] = [
        math.atan2(dy, dx) if (dx != 0.0 or dy != 0.0) else None for dx, dy in deltas
    ]
    last: float | None = None
    for i, h in enumerate(headings):
        if h is None:
            headings[i] = last
        else:
            last = h
    first = next((h for h in headings if h is not None), 0.0)
    return [first if h is None else h for h in headings]


def heading_at(traj: Trajectory, k: int) -> float:
    """Heading of the segment leaving frame ``k``.

    The last frame reuses the final segment; a zero-length segment falls back
    to the previous heading.

    Raises:
        DegenerateTrajectoryError: If the trajectory has a single waypoint.
        ValueError: If ``k`` is not a frame of the trajectory.
    """
    if len(traj) < 2:
        raise DegenerateTrajectoryError("heading_at needs a trajectory with at least 2 waypoints")
    pos = k - traj.start_index
    if not 0 <= pos < len(traj):
        raise ValueError(f"Frame {k} not in trajectory frames {traj.start_index}..")
    headings = _segment_headings(traj.xy())
    return headings[min(pos, len(headings) - 1)]


def trajectory_headings(traj: Trajectory) -> np.ndarray:
    """heading_at for every frame of the trajectory."""
    if len(traj) < 2:
        raise DegenerateTrajectoryError("trajectory_headings needs at least 2 waypoints")
    headings = _segment_headings(traj.xy())
    return np.array(headings + [headings[-1]])


def footprints(traj: Trajectory, length: float, width: float) -> list[OrientedBox]:
    """Box at every waypoint, oriented by heading_at."""
    headings = trajectory_headings(traj)
    return [
        OrientedBox(Pose2(w.x, w.y, h), length, width)
        for w, h in zip(traj.waypoints, headings)
    ]


def resample_polyline(points: np.ndarray, n: int) -> np.ndarray:
    """Resample a polyline to ``n`` points equally spaced by arc length."""
    points = np.asarray(points, dtype=np.float64)
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, arc[-1], n)
    return np.stack(
        [np.interp(targets, arc, points[:, 0]), np.interp(targets, arc, points[:, 1])], axis=1
    )
