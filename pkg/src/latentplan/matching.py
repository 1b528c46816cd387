"""Bipartite matching of predicted slots to ground-truth instances."""

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import NumericError, ShapeError


def _solve(cost: np.ndarray, rows: list[int], cols: list[int]) -> tuple[float, dict[int, int]]:
    """Optimal total and assignment of the sub-problem on ``rows`` x ``cols``."""
    if not rows or not cols:
        return 0.0, {}
    r_idx, c_idx = linear_sum_assignment(cost[np.ix_(rows, cols)])
    assign = {rows[int(r)]: cols[int(c)] for r, c in zip(r_idx, c_idx)}
    return float(sum(cost[r, c] for r, c in assign.items())), assign


def hungarian_match(cost: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-cost one-to-one assignment of columns (GT) to rows (slots).

    Returns ``(row, col)`` pairs sorted by row. With fewer rows than
    columns, the surplus columns stay unmatched.

    Ties are broken by lowest row index: among assignments of equal total,
    row 0 takes the lowest column that still admits an optimal total, then
    row 1, and so on. Staying unmatched ranks after every column.

    Raises:
        NumericError: If any cost is NaN or infinite.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ShapeError(f"cost matrix must be 2-D, got shape {cost.shape}")
    if cost.size == 0:
        return []
    if not np.isfinite(cost).all():
        raise NumericError("cost matrix contains NaN or inf")

    n_rows, n_cols = cost.shape
    best, assign = _solve(cost, list(range(n_rows)), list(range(n_cols)))
    tol = 1e-9 * max(1.0, abs(best))
    pairs: list[tuple[int, int]] = []
    fixed_total = 0.0
    for r in range(n_rows):
        used = {c for _, c in pairs}
        later_rows = list(range(r + 1, n_rows))
        for c in range(assign.get(r, n_cols)):
            if c in used:
                continue
            free_cols = [j for j in range(n_cols) if j not in used and j != c]
            rest, rest_assign = _solve(cost, later_rows, free_cols)
            if fixed_total + cost[r, c] + rest <= best + tol:
                assign = {**rest_assign, r: c}
                break
        if r in assign:
            pairs.append((r, assign[r]))
            fixed_total += cost[r, assign[r]]
    return pairs


def assignment_cost(cost: np.ndarray, pairs: list[tuple[int, int]]) -> float:
    return float(sum(cost[r, c] for r, c in pairs))


def detection_cost(
    pred_positions: np.ndarray,
    pred_probs: np.ndarray,
    gt_positions: np.ndarray,
    gt_classes: np.ndarray,
    pos_weight: float = 1.0,
    cls_weight: float = 1.0,
) -> np.ndarray:
    """``pos_weight * |pos - gt_pos| + cls_weight * (1 - p[gt_class])``, shape (slots, GT)."""
    pred_positions = np.asarray(pred_positions, dtype=np.float64).reshape(-1, 2)
    gt_positions = np.asarray(gt_positions, dtype=np.float64).reshape(-1, 2)
    dist = np.linalg.norm(pred_positions[:, None, :] - gt_positions[None, :, :], axis=-1)
    cls_term = 1.0 - np.asarray(pred_probs, dtype=np.float64)[:, np.asarray(gt_classes, dtype=int)]
    return pos_weight * dist + cls_weight * cls_term.reshape(dist.shape)


def polyline_l1(pred_points: np.ndarray, gt_points: np.ndarray) -> np.ndarray:
    """Mean point L1 between equal-length point sets, minimized over GT direction.

    ``pred_points`` is (N, P, 2), ``gt_points`` (M, P, 2); returns (N, M).
    """
    pred_points = np.asarray(pred_points, dtype=np.float64)
    gt_points = np.asarray(gt_points, dtype=np.float64)
    if pred_points.shape[1:] != gt_points.shape[1:]:
        raise ShapeError(
            f"point sets differ in shape: {pred_points.shape[1:]} vs {gt_points.shape[1:]}"
        )
    forward = np.abs(pred_points[:, None] - gt_points[None]).mean(axis=(2, 3))
    backward = np.abs(pred_points[:, None] - gt_points[None, :, ::-1]).mean(axis=(2, 3))
    return np.minimum(forward, backward)


def map_cost(
    pred_points: np.ndarray,
    pred_probs: np.ndarray,
    gt_points: np.ndarray,
    gt_categories: np.ndarray,
    scale: float = 1.0,
    cls_weight: float = 1.0,
) -> np.ndarray:
    """Point-set L1 (in units of ``scale``) plus a category term, shape (tokens, GT)."""
    pts = polyline_l1(pred_points, gt_points) / scale
    cls_term = 1.0 - np.asarray(pred_probs, dtype=np.float64)[:, np.asarray(gt_categories, dtype=int)]
    return pts + cls_weight * cls_term.reshape(pts.shape)
