"""JSON Lines persistence for scenes (one scene object per line, schema "v": 1)."""

import json
import logging
from pathlib import Path
from typing import Any, Iterable

from .errors import DatasetParseError
from .geometry import FrameTag, OrientedBox, Polyline, Pose2, Trajectory, Waypoint
from .scenes import AgentClass, AgentRecord, EgoRecord, MotionKind, Scene

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


def _pose_to_dict(pose: Pose2) -> dict[str, float]:
    return {"x": pose.x, "y": pose.y, "heading": pose.heading}


def _box_to_dict(box: OrientedBox) -> dict[str, Any]:
    return {"center": _pose_to_dict(box.center), "length": box.length, "width": box.width}


def _traj_to_dict(traj: Trajectory) -> dict[str, Any]:
    return {
        "waypoints": [{"x": w.x, "y": w.y, "t_index": w.t_index} for w in traj.waypoints],
        "frame": traj.frame.value,
    }


def scene_to_dict(scene: Scene) -> dict[str, Any]:
    """Serialize a scene using the documented field names."""
    return {
        "v": SCHEMA_VERSION,
        "id": scene.id,
        "map": [
            {"points": [list(p) for p in pl.points], "category": pl.category.value}
            for pl in scene.map
        ],
        "agents": [
            {
                "id": a.id,
                "class": a.agent_class.value,
                "box": _box_to_dict(a.box),
                "past": _traj_to_dict(a.past),
                "future": _traj_to_dict(a.future),
                "motion_kind": a.motion_kind.value,
            }
            for a in scene.agents
        ],
        "ego": {
            "past": _traj_to_dict(scene.ego.past),
            "future": _traj_to_dict(scene.ego.future),
            "box": _box_to_dict(scene.ego.box),
            "motion_kind": scene.ego.motion_kind.value,
        },
        "rng_seed": scene.rng_seed,
    }


def _box_from_dict(d: dict[str, Any]) -> OrientedBox:
    c = d["center"]
    return OrientedBox(Pose2(c["x"], c["y"], c["heading"]), d["length"], d["width"])


def _traj_from_dict(d: dict[str, Any]) -> Trajectory:
    return Trajectory(
        tuple(Waypoint(w["x"], w["y"], w["t_index"]) for w in d["waypoints"]),
        FrameTag(d["frame"]),
    )


def scene_from_dict(d: dict[str, Any]) -> Scene:
    """Inverse of :func:`scene_to_dict`.

    Raises:
        ValueError: On a schema version mismatch or invalid field values.
        TypeError: If the record is not a JSON object.
        KeyError: On a missing field.
    """
    if not isinstance(d, dict):
        raise TypeError(f"scene record must be a JSON object, got {type(d).__name__}")
    if d.get("v") != SCHEMA_VERSION:
        raise ValueError(f"Unsupported scene schema version: {d.get('v')!r}")
    ego = d["ego"]
    return Scene(
        id=d["id"],
        map=tuple(Polyline(tuple(map(tuple, p["points"])), p["category"]) for p in d["map"]),
        agents=tuple(
            AgentRecord(
                id=a["id"],
                agent_class=AgentClass(a["class"]),
                box=_box_from_dict(a["box"]),
                past=_traj_from_dict(a["past"]),
                future=_traj_from_dict(a["future"]),
                motion_kind=MotionKind(a["motion_kind"]),
            )
            for a in d["agents"]
        ),
        ego=EgoRecord(
            past=_traj_from_dict(ego["past"]),
            future=_traj_from_dict(ego["future"]),
            box=_box_from_dict(ego["box"]),
            motion_kind=MotionKind(ego.get("motion_kind", MotionKind.STRAIGHT.value)),
        ),
        rng_seed=d["rng_seed"],
    )


def dataset_write(scenes: Iterable[Scene], path: str | Path) -> int:
    """Write scenes as UTF-8 JSON Lines; returns the number written."""
    path = Path(path)
    count = 0
    with path.open("w", encoding="utf-8") as f:
        for scene in scenes:
            f.write(json.dumps(scene_to_dict(scene)) + "\n")
            count += 1
    logger.info(f"Wrote {count} scenes to {path}")
    return count


def dataset_read(path: str | Path) -> list[Scene]:
    """Read a JSON Lines dataset.

    Raises:
        FileNotFoundError: If the file does not exist.
        DatasetParseError: If a line is not a valid scene; names the line.
    """
    path = Path(path)
    scenes: list[Scene] = []
    with path.open("r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                scenes.append(scene_from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DatasetParseError(line_no, f"invalid scene record in {path}: {exc}") from exc
    logger.debug(f"Read {len(scenes)} scenes from {path}")
    return scenes
