"""Training objective.

``J = J_prior + lambda_plan * J_plan + lambda_map * J_map + lambda_det * J_det``

* ``J_prior``: trajectory loss on the reconstructed ego plan (L1, collision,
  boundary and lane-direction terms) plus L1 on matched agent
  reconstructions and a focal class term on them.
* ``J_plan``: KL(instance distribution || ground-truth future distribution),
  averaged over the ego and matched agents.
* ``J_map`` / ``J_det``: auxiliary map and detection heads after bipartite
  matching.

L1 terms are means over coordinates. Collision and boundary terms are sums
over future frames; the lane-direction term is a mean over frames.
"""

import math
from typing import TYPE_CHECKING

import torch
from pydantic import BaseModel, ConfigDict, Field

from .errors import ContractError
from .kernels import focal_loss
from .prior import LatentGaussian, kl_diag_gauss
from .scenes import AGENT_CLASSES
from .tokenizer import MAP_LOGITS

if TYPE_CHECKING:
    from .model import LatentPlanner, TrainingPass

# Clearance below which the ego is penalized, meters
D_SAFE = 0.5

# Keeps direction normalization differentiable at zero length
_DIR_EPS = 1e-6

FOCAL_GAMMA = 2.0
FOCAL_ALPHA = 0.25


class LossWeights(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    plan: float = Field(1.0, ge=0.0)
    map: float = Field(1.0, ge=0.0)
    det: float = Field(1.0, ge=0.0)
    cls: float = Field(1.0, ge=0.0)


class LossReport(BaseModel):
    """Scalar values of every loss term for one step or epoch."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    j_prior: float
    j_plan: float
    j_map: float
    j_det: float
    j_total: float
    l1: float
    collision: float
    boundary: float
    lane_dir: float
    agent_l1: float
    focal: float

    @classmethod
    def from_terms(cls, terms: dict[str, float], weights: LossWeights) -> "LossReport":
        j_total = total_loss(terms["j_prior"], terms["j_plan"], terms["j_map"], terms["j_det"], weights)
        return cls(j_total=j_total, **terms)

    @classmethod
    def mean(cls, reports: list["LossReport"], weights: LossWeights) -> "LossReport":
        """Field-wise mean with ``j_total`` recomputed from the averaged parts."""
        if not reports:
            raise ContractError("cannot average an empty list of loss reports")
        names = [n for n in cls.model_fields if n != "j_total"]
        terms = {n: math.fsum(getattr(r, n) for r in reports) / len(reports) for n in names}
        return cls.from_terms(terms, weights)

    def first_non_finite(self) -> str | None:
        for name in type(self).model_fields:
            if not math.isfinite(getattr(self, name)):
                return name
        return None


def total_loss(j_prior, j_plan, j_map, j_det, weights: LossWeights):
    """Weighted sum; works on floats and tensors alike."""
    return j_prior + weights.plan * j_plan + weights.map * j_map + weights.det * j_det


def trajectory_l1(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    return (pred - gt).abs().mean()


def _unit(v: torch.Tensor) -> torch.Tensor:
    return v / torch.sqrt((v * v).sum(dim=-1, keepdim=True) + _DIR_EPS)


def plan_directions(plan: torch.Tensor) -> torch.Tensor:
    """Unit heading per waypoint: the leaving segment, the last reusing the final one."""
    if plan.shape[0] < 2:
        deltas = plan
    else:
        deltas = plan[1:] - plan[:-1]
        deltas = torch.cat([deltas, deltas[-1:]], dim=0)
    return _unit(deltas)


def _box_geometry(
    centers: torch.Tensor, axis: torch.Tensor, length, width
) -> tuple[torch.Tensor, torch.Tensor]:
    """Corners (..., 4, 2) and axes (..., 2, 2) from centers and unit heading vectors."""
    normal = torch.stack([-axis[..., 1], axis[..., 0]], dim=-1)
    half_l = (torch.as_tensor(length, dtype=centers.dtype) / 2.0)[..., None, None]
    half_w = (torch.as_tensor(width, dtype=centers.dtype) / 2.0)[..., None, None]
    signs = torch.tensor([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]], dtype=centers.dtype)
    corners = (
        centers[..., None, :]
        + signs[:, :1] * half_l * axis[..., None, :]
        + signs[:, 1:] * half_w * normal[..., None, :]
    )
    return corners, torch.stack([axis, normal], dim=-2)


def box_separation_torch(
    a_corners: torch.Tensor, a_axes: torch.Tensor, b_corners: torch.Tensor, b_axes: torch.Tensor
) -> torch.Tensor:
    """Separating-axis gap over the 4 box axes; <= 0 means overlap."""
    axes = torch.cat([a_axes, b_axes], dim=-2)
    pa = a_corners @ axes.transpose(-1, -2)
    pb = b_corners @ axes.transpose(-1, -2)
    gaps = torch.maximum(pb.min(dim=-2).values - pa.max(dim=-2).values, pa.min(dim=-2).values - pb.max(dim=-2).values)
    return gaps.max(dim=-1).values


def collision_penalty(
    plan: torch.Tensor,
    agent_centers: torch.Tensor,
    agent_headings: torch.Tensor,
    agent_sizes: torch.Tensor,
    ego_length: float,
    ego_width: float,
    d_safe: float = D_SAFE,
) -> torch.Tensor:
    """Sum over agents and frames of ``max(0, d_safe - separation)``."""
    if agent_centers.shape[0] == 0:
        return plan.sum() * 0.0
    ego_corners, ego_axes = _box_geometry(plan, plan_directions(plan), ego_length, ego_width)
    agent_axis = torch.stack([agent_headings.cos(), agent_headings.sin()], dim=-1)
    sizes = agent_sizes[:, None, :].expand(-1, agent_centers.shape[1], -1)
    agent_corners, agent_axes = _box_geometry(agent_centers, agent_axis, sizes[..., 0], sizes[..., 1])
    sep = box_separation_torch(
        ego_corners.expand_as(agent_corners), ego_axes.expand_as(agent_axes), agent_corners, agent_axes
    )
    return torch.relu(d_safe - sep).sum()


def _segments(polylines: list[torch.Tensor]) -> tuple[torch.Tensor, torch.Tensor]:
    starts = torch.cat([p[:-1] for p in polylines], dim=0)
    ends = torch.cat([p[1:] for p in polylines], dim=0)
    return starts, ends


def _nearest_segment(points: torch.Tensor, starts: torch.Tensor, ends: torch.Tensor) -> torch.Tensor:
    seg = ends - starts
    rel = points[:, None, :] - starts[None]
    t = ((rel * seg[None]).sum(-1) / (seg * seg).sum(-1)[None]).clamp(0.0, 1.0)
    closest = starts[None] + t[..., None] * seg[None]
    dist2 = ((points[:, None, :] - closest) ** 2).sum(-1)
    return dist2.detach().argmin(dim=1)


def boundary_penalty(plan: torch.Tensor, boundaries: list[torch.Tensor]) -> torch.Tensor:
    """Sum over frames of how far each waypoint lies past its nearest road boundary.

    Boundaries keep the drivable area on their left, so the signed distance
    to the nearest segment's line is positive inside.
    """
    if not boundaries:
        return plan.sum() * 0.0
    starts, ends = _segments(boundaries)
    idx = _nearest_segment(plan, starts, ends)
    a, b = starts[idx], ends[idx]
    seg = b - a
    rel = plan - a
    cross = seg[:, 0] * rel[:, 1] - seg[:, 1] * rel[:, 0]
    signed = cross / torch.linalg.norm(seg, dim=-1)
    return torch.relu(-signed).sum()


def lane_direction_penalty(plan: torch.Tensor, dividers: list[torch.Tensor]) -> torch.Tensor:
    """Mean over frames of ``1 - cos`` between plan heading and the nearest divider tangent."""
    if not dividers:
        return plan.sum() * 0.0
    starts, ends = _segments(dividers)
    idx = _nearest_segment(plan, starts, ends)
    tangent = _unit(ends[idx] - starts[idx])
    return (1.0 - (plan_directions(plan) * tangent).sum(-1)).mean()


def loss_prior(
    tp: "TrainingPass",
    cls_weight: float = 1.0,
    ego_length: float = 4.0,
    ego_width: float = 1.8,
) -> dict[str, torch.Tensor]:
    """Reconstruction terms; keys ``j_prior, l1, collision, boundary, lane_dir, agent_l1, focal``."""
    targets = tp.targets
    plan = tp.ego_recon
    terms = {
        "l1": trajectory_l1(plan, targets.ego_future),
        "collision": collision_penalty(
            plan,
            targets.agent_box_centers,
            targets.agent_box_headings,
            targets.agent_box_sizes,
            ego_length,
            ego_width,
        ),
        "boundary": boundary_penalty(plan, targets.boundaries),
        "lane_dir": lane_direction_penalty(plan, targets.dividers),
    }
    zero = plan.sum() * 0.0
    if tp.matched_gt:
        gt_idx = torch.tensor(tp.matched_gt, dtype=torch.long)
        gt_local = targets.agent_local_futures[gt_idx]
        terms["agent_l1"] = (tp.agent_recon - gt_local).abs().mean(dim=(1, 2)).mean()
        terms["focal"] = focal_loss(
            tp.agent_class_logits, targets.agent_classes[gt_idx], FOCAL_GAMMA, FOCAL_ALPHA
        )
    else:
        terms["agent_l1"] = zero
        terms["focal"] = zero
    terms["j_prior"] = (
        terms["l1"]
        + terms["collision"]
        + terms["boundary"]
        + terms["lane_dir"]
        + terms["agent_l1"]
        + cls_weight * terms["focal"]
    )
    return terms


def loss_plan(q: LatentGaussian, p: LatentGaussian) -> torch.Tensor:
    """Mean over instances of KL(q_i || p_i).

    Raises:
        ContractError: If the two sides hold different instance counts.
    """
    if q.mu.shape[:-1] != p.mu.shape[:-1]:
        raise ContractError(
            f"KL needs paired instances, got {tuple(q.mu.shape[:-1])} and {tuple(p.mu.shape[:-1])}"
        )
    kl = kl_diag_gauss(q, p)
    return kl.mean() if kl.dim() else kl


def _polyline_l1_torch(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    forward = (pred - gt).abs().mean(dim=(-1, -2))
    backward = (pred - gt.flip(-2)).abs().mean(dim=(-1, -2))
    return torch.minimum(forward, backward)


def loss_aux(tp: "TrainingPass", position_scale: float) -> tuple[torch.Tensor, torch.Tensor]:
    """(J_map, J_det) after matching.

    J_det = matched position L1 + matched heading (sin, cos) L1 + focal over
    all slots, unmatched slots targeting background. J_map = matched point
    L1 (direction-agnostic) + focal over all map tokens. Positions are
    measured in units of ``position_scale``.
    """
    targets = tp.targets
    head = tp.agent_head
    zero = head.positions.sum() * 0.0

    background = len(AGENT_CLASSES)
    det_target = torch.full((head.logits.shape[0],), background, dtype=torch.long)
    pos_term = orient_term = zero
    if tp.det_pairs:
        slots = torch.tensor([s for s, _ in tp.det_pairs], dtype=torch.long)
        gts = torch.tensor([g for _, g in tp.det_pairs], dtype=torch.long)
        det_target[slots] = targets.agent_classes[gts]
        pos_term = ((head.positions[slots] - targets.agent_positions[gts]).abs() / position_scale).mean()
        gt_heading = targets.agent_headings[gts]
        gt_sincos = torch.stack([gt_heading.sin(), gt_heading.cos()], dim=-1)
        orient_term = (head.sincos[slots] - gt_sincos).abs().mean()
    j_det = pos_term + orient_term + focal_loss(head.logits, det_target, FOCAL_GAMMA, FOCAL_ALPHA)

    decode = tp.map_decode
    map_target = torch.full((decode.logits.shape[0],), MAP_LOGITS - 1, dtype=torch.long)
    pts_term = zero
    if tp.map_pairs:
        tokens = torch.tensor([s for s, _ in tp.map_pairs], dtype=torch.long)
        gts = [g for _, g in tp.map_pairs]
        map_target[tokens] = torch.as_tensor(targets.map_categories[gts], dtype=torch.long)
        gt_points = torch.as_tensor(targets.map_points[gts], dtype=decode.points.dtype)
        pts_term = (_polyline_l1_torch(decode.points[tokens], gt_points) / position_scale).mean()
    j_map = pts_term + focal_loss(decode.logits, map_target, FOCAL_GAMMA, FOCAL_ALPHA)
    return j_map, j_det


def compute_losses(
    model: "LatentPlanner",
    scene,
    weights: LossWeights,
    generator: torch.Generator | None = None,
) -> tuple[torch.Tensor, LossReport]:
    """Differentiable total objective and its report for one scene."""
    tp = model.training_pass(scene, generator)
    prior_terms = loss_prior(tp, weights.cls, scene.ego.box.length, scene.ego.box.width)
    if tp.future_dist is not None:
        j_plan = loss_plan(tp.instance_dist, tp.future_dist)
    else:
        j_plan = prior_terms["j_prior"] * 0.0
    j_map, j_det = loss_aux(tp, model.tokenizer.position_scale)
    total = total_loss(prior_terms["j_prior"], j_plan, j_map, j_det, weights)
    terms = {k: float(v.detach()) for k, v in prior_terms.items()}
    terms.update(j_plan=float(j_plan.detach()), j_map=float(j_map.detach()), j_det=float(j_det.detach()))
    return total, LossReport.from_terms(terms, weights)
