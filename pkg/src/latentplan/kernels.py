"""Differentiable building blocks shared by every model component.

Everything here is a thin ``torch.nn`` module or function with explicit shape
checks. Layers operate on unbatched token sets of shape ``(N, D)``; a scene is
the unit of computation.
"""

import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, model_validator
from torch import nn

from .errors import ContractError, NumericError, ShapeError

logger = logging.getLogger(__name__)


class AttentionConfig(BaseModel):
    """Attention block sizes."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    model_dim: int = Field(64, gt=0)
    num_heads: int = Field(4, gt=0)
    num_layers: int = Field(3, gt=0)
    num_sample_points: int = Field(4, gt=0)
    ffn_mult: int = Field(2, gt=0)
    interleave_self_attention: bool = False

    @model_validator(mode="after")
    def _check_heads(self) -> "AttentionConfig":
        if self.model_dim % self.num_heads:
            raise ValueError(
                f"model_dim {self.model_dim} is not divisible by num_heads {self.num_heads}"
            )
        return self


@contextmanager
def seeded_init(seed: int) -> Iterator[None]:
    """Run module construction under a private, seeded torch RNG."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield


def _check_width(x: torch.Tensor, width: int, where: str) -> None:
    if x.dim() == 0 or x.shape[-1] != width:
        raise ShapeError(f"{where}: expected last dimension {width}, got shape {tuple(x.shape)}")


class MLP(nn.Module):
    """Affine layers with tanh between them; the final layer is linear."""

    def __init__(self, dims: Sequence[int], name: str = "mlp"):
        super().__init__()
        if len(dims) < 2:
            raise ValueError(f"MLP needs at least input and output widths, got {list(dims)}")
        self.name = name
        self.dims = tuple(dims)
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims, dims[1:]))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_width(x, self.dims[0], f"{self.name}.layers.0")
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = torch.tanh(x)
        return x

    @property
    def last(self) -> nn.Linear:
        return self.layers[-1]


def mlp_forward(mlp: MLP, x: torch.Tensor) -> torch.Tensor:
    return mlp(x)


def gru_step(cell: nn.GRUCell, z_t: torch.Tensor, h_t: torch.Tensor) -> torch.Tensor:
    """One GRU update, ``h' = (1 - u) * n + u * h``."""
    _check_width(z_t, cell.input_size, "gru_step input")
    _check_width(h_t, cell.hidden_size, "gru_step hidden")
    return cell(z_t, h_t)


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention over explicit q/k/v/o projections.

    ``mask`` is boolean ``(Nq, Nk)``; True blocks a query from a key. A row
    must keep at least one key.
    """

    def __init__(self, model_dim: int, num_heads: int):
        super().__init__()
        if model_dim % num_heads:
            raise ValueError(f"model_dim {model_dim} not divisible by num_heads {num_heads}")
        self.model_dim = model_dim
        self.num_heads = num_heads
        self.head_dim = model_dim // num_heads
        self.q_proj = nn.Linear(model_dim, model_dim)
        self.k_proj = nn.Linear(model_dim, model_dim)
        self.v_proj = nn.Linear(model_dim, model_dim)
        self.out_proj = nn.Linear(model_dim, model_dim)

    def _heads(self, x: torch.Tensor) -> torch.Tensor:
        return x.reshape(x.shape[0], self.num_heads, self.head_dim).transpose(0, 1)

    def forward(
        self,
        query: torch.Tensor,
        key: torch.Tensor,
        value: torch.Tensor,
        mask: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns the output ``(Nq, D)`` and weights ``(heads, Nq, Nk)``."""
        for name, t in (("query", query), ("key", key), ("value", value)):
            if t.dim() != 2:
                raise ShapeError(f"attention {name} must be (N, D), got {tuple(t.shape)}")
            _check_width(t, self.model_dim, f"attention {name}")
        if key.shape[0] != value.shape[0]:
            raise ShapeError(f"attention key/value counts differ: {key.shape[0]} vs {value.shape[0]}")

        q, k, v = self._heads(self.q_proj(query)), self._heads(self.k_proj(key)), self._heads(self.v_proj(value))
        logits = q @ k.transpose(1, 2) / math.sqrt(self.head_dim)
        if not torch.isfinite(logits).all():
            raise NumericError("attention logits contain NaN or inf")
        if mask is not None:
            if mask.shape != (query.shape[0], key.shape[0]):
                raise ShapeError(
                    f"attention mask must be {(query.shape[0], key.shape[0])}, got {tuple(mask.shape)}"
                )
            if mask.all(dim=-1).any():
                raise ContractError("attention mask blocks every key for some query")
            logits = logits.masked_fill(mask, float("-inf"))
        weights = torch.softmax(logits, dim=-1)
        out = (weights @ v).transpose(0, 1).reshape(query.shape[0], self.model_dim)
        return self.out_proj(out), weights


class _AttentionLayer(nn.Module):
    def __init__(self, cfg: AttentionConfig, cross: bool, self_attention_first: bool):
        super().__init__()
        d = cfg.model_dim
        self.self_attn: MultiHeadAttention | None = None
        self.norm_kv: nn.LayerNorm | None = nn.LayerNorm(d) if cross else None
        if self_attention_first:
            self.self_norm = nn.LayerNorm(d)
            self.self_attn = MultiHeadAttention(d, cfg.num_heads)
        self.norm_q = nn.LayerNorm(d)
        self.attn = MultiHeadAttention(d, cfg.num_heads)
        self.norm_ffn = nn.LayerNorm(d)
        self.ffn = MLP([d, cfg.ffn_mult * d, d], name="ffn")

    def forward(
        self,
        x: torch.Tensor,
        memory: torch.Tensor | None,
        mask: torch.Tensor | None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        if self.self_attn is not None:
            h = self.self_norm(x)
            x = x + self.self_attn(h, h, h)[0]
        q = self.norm_q(x)
        if (memory is None) != (self.norm_kv is None):
            raise ShapeError("memory must be given to cross-attention blocks and only to them")
        kv = q if self.norm_kv is None else self.norm_kv(memory)
        attended, weights = self.attn(q, kv, kv, mask)
        x = x + attended
        x = x + self.ffn(self.norm_ffn(x))
        return x, weights


class AttentionBlock(nn.Module):
    """Stack of pre-norm attention layers.

    A self-attention block (``cross=False``) is called without ``memory``;
    a cross-attention block needs it. ``interleave_self_attention`` adds a
    self-attention sublayer ahead of each cross-attention.
    """

    def __init__(self, cfg: AttentionConfig, cross: bool = False):
        super().__init__()
        self.cfg = cfg
        interleave = cross and cfg.interleave_self_attention
        self.layers = nn.ModuleList(_AttentionLayer(cfg, cross, interleave) for _ in range(cfg.num_layers))

    def forward_with_weights(
        self,
        x: torch.Tensor,
        memory: torch.Tensor | None = None,
        mask: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, list[torch.Tensor]]:
        _check_width(x, self.cfg.model_dim, "attention block input")
        if memory is not None:
            _check_width(memory, self.cfg.model_dim, "attention block memory")
        weights = []
        for layer in self.layers:
            x, w = layer(x, memory, mask)
            weights.append(w)
        return x, weights

    def forward(
        self,
        x: torch.Tensor,
        memory: torch.Tensor | None = None,
        mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        return self.forward_with_weights(x, memory, mask)[0]


def mha_block(
    block: AttentionBlock,
    query: torch.Tensor,
    key_value: torch.Tensor | None = None,
    mask: torch.Tensor | None = None,
) -> torch.Tensor:
    return block(query, key_value, mask)


def sample_grid(features: torch.Tensor, points: torch.Tensor) -> torch.Tensor:
    """Bilinearly sample an ``(H, W, C)`` grid at normalized ``(x, y)`` points.

    ``points`` has shape ``(..., 2)`` in [0, 1]^2 where cell ``j`` of a side
    of length ``n`` spans ``[j/n, (j+1)/n]``. Points past the edge clamp to
    the border. Returns ``(..., C)``.
    """
    if features.dim() != 3:
        raise ShapeError(f"sample_grid features must be (H, W, C), got {tuple(features.shape)}")
    _check_width(points, 2, "sample_grid points")
    lead = points.shape[:-1]
    grid = (2.0 * points - 1.0).reshape(1, 1, -1, 2)
    image = features.permute(2, 0, 1).unsqueeze(0)
    sampled = F.grid_sample(image, grid, mode="bilinear", padding_mode="border", align_corners=False)
    return sampled[0, :, 0].transpose(0, 1).reshape(*lead, features.shape[-1])


class DeformableAttention(nn.Module):
    """Deformable cross-attention of queries onto a ``(H, W, D)`` grid.

    Each query predicts ``num_sample_points`` offsets (in cell units) per head
    around its reference point and softmax weights over them.
    """

    def __init__(self, cfg: AttentionConfig):
        super().__init__()
        d = cfg.model_dim
        self.cfg = cfg
        self.num_heads = cfg.num_heads
        self.num_points = cfg.num_sample_points
        self.head_dim = d // cfg.num_heads
        self.norm_q = nn.LayerNorm(d)
        self.offsets = nn.Linear(d, cfg.num_heads * cfg.num_sample_points * 2)
        self.weights = nn.Linear(d, cfg.num_heads * cfg.num_sample_points)
        self.value_proj = nn.Linear(d, d)
        self.out_proj = nn.Linear(d, d)
        self.norm_ffn = nn.LayerNorm(d)
        self.ffn = MLP([d, cfg.ffn_mult * d, d], name="ffn")
        self.reset_sampling()

    def reset_sampling(self) -> None:
        """Zero the offset/weight predictors; offsets start on a one-cell ring."""
        nn.init.zeros_(self.offsets.weight)
        nn.init.zeros_(self.weights.weight)
        nn.init.zeros_(self.weights.bias)
        angles = torch.arange(self.num_heads * self.num_points, dtype=torch.float64)
        angles = angles * (2.0 * math.pi / (self.num_heads * self.num_points))
        ring = torch.stack([angles.cos(), angles.sin()], dim=-1)
        with torch.no_grad():
            self.offsets.bias.copy_(ring.reshape(-1).to(self.offsets.bias.dtype))

    def sample(
        self, queries: torch.Tensor, ref_points: torch.Tensor, grid: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Weighted grid samples ``(Nq, D)`` and sampling locations ``(Nq, heads, P, 2)``."""
        n = queries.shape[0]
        height, width = grid.shape[0], grid.shape[1]
        offsets = self.offsets(queries).reshape(n, self.num_heads, self.num_points, 2)
        cell = torch.tensor([1.0 / width, 1.0 / height], dtype=grid.dtype)
        locations = ref_points[:, None, None, :] + offsets * cell
        weights = torch.softmax(
            self.weights(queries).reshape(n, self.num_heads, self.num_points), dim=-1
        )
        values = self.value_proj(grid).reshape(height, width, self.num_heads, self.head_dim)
        per_head = [
            sample_grid(values[:, :, h], locations[:, h]) for h in range(self.num_heads)
        ]
        sampled = torch.stack(per_head, dim=1)
        out = (weights.unsqueeze(-1) * sampled).sum(dim=2).reshape(n, -1)
        return out, locations

    def forward(
        self, queries: torch.Tensor, ref_points: torch.Tensor, grid: torch.Tensor
    ) -> torch.Tensor:
        if queries.dim() != 2:
            raise ShapeError(f"deformable queries must be (N, D), got {tuple(queries.shape)}")
        _check_width(queries, self.cfg.model_dim, "deformable queries")
        _check_width(grid, self.cfg.model_dim, "deformable grid")
        if ref_points.shape != (queries.shape[0], 2):
            raise ShapeError(
                f"ref_points must be {(queries.shape[0], 2)}, got {tuple(ref_points.shape)}"
            )
        sampled, _ = self.sample(self.norm_q(queries), ref_points, grid)
        x = queries + self.out_proj(sampled)
        return x + self.ffn(self.norm_ffn(x))


def deformable_attention(
    layer: DeformableAttention,
    queries: torch.Tensor,
    ref_points: torch.Tensor,
    grid: torch.Tensor,
) -> torch.Tensor:
    return layer(queries, ref_points, grid)


def focal_loss(
    logits: torch.Tensor,
    target: torch.Tensor,
    gamma: float = 2.0,
    alpha: float = 0.25,
) -> torch.Tensor:
    """Mean softmax focal loss ``alpha * (1 - p_t)**gamma * -log(p_t)``.

    Raises:
        ContractError: On an empty batch.
        ValueError: If ``gamma < 0`` or ``alpha`` is outside (0, 1].
        NumericError: If the logits are not finite.
    """
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    if logits.dim() != 2 or target.shape != logits.shape[:1]:
        raise ShapeError(
            f"focal_loss expects (N, K) logits and (N,) targets, got {tuple(logits.shape)} and {tuple(target.shape)}"
        )
    if logits.shape[0] == 0:
        raise ContractError("focal_loss of an empty batch is undefined")
    if not torch.isfinite(logits).all():
        raise NumericError("focal_loss logits contain NaN or inf")
    log_pt = torch.log_softmax(logits, dim=-1).gather(1, target.long().unsqueeze(1)).squeeze(1)
    pt = log_pt.exp()
    return (alpha * (1.0 - pt) ** gamma * -log_pt).mean()


def cosine_factor(step: int, total_steps: int) -> float:
    """Cosine learning-rate multiplier ``0.5 * (1 + cos(pi * t / T))``, flat at 0 after T."""
    if total_steps <= 0:
        return 1.0
    t = min(step, total_steps)
    return 0.5 * (1.0 + math.cos(math.pi * t / total_steps))


def build_optimizer(
    params: Iterable[torch.nn.Parameter],
    lr: float,
    weight_decay: float,
    total_steps: int,
) -> tuple[torch.optim.AdamW, torch.optim.lr_scheduler.LambdaLR]:
    """AdamW with decoupled weight decay and a per-step cosine schedule."""
    optimizer = torch.optim.AdamW(params, lr=lr, weight_decay=weight_decay)
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda step: cosine_factor(step, total_steps)
    )
    return optimizer, scheduler


def adamw_step(
    optimizer: torch.optim.Optimizer, scheduler: torch.optim.lr_scheduler.LRScheduler
) -> float:
    """Apply one optimizer update, advance the schedule and return the lr used."""
    lr = optimizer.param_groups[0]["lr"]
    optimizer.step()
    scheduler.step()
    return lr


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    worst_index: tuple[int, ...]
    analytic: float
    numeric: float
    coords_checked: int


def grad_check(
    f: Callable[[], torch.Tensor],
    params: Mapping[str, torch.Tensor] | nn.Module,
    eps: float = 1e-4,
    max_coords: int | None = None,
    seed: int = 0,
    floor: float = 1e-3,
) -> GradCheckResult:
    """Compare autograd gradients of scalar ``f()`` with central differences.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    Where both gradients are below ``floor`` the check is absolute: a
    tolerance ``tol`` on the result bounds ``|a - n|`` by ``tol * floor``.
    Pass ``floor=0.0`` for a purely relative comparison.
    Parameters are visited in sorted name order; with ``max_coords`` a seeded
    subset of coordinates is checked per parameter.

    Raises:
        ContractError: If a parameter is not float64.
        NumericError: If ``f`` returns a non-finite or non-scalar value.
    """
    named = dict(params.named_parameters()) if isinstance(params, nn.Module) else dict(params)
    named = {k: named[k] for k in sorted(named)}
    for name, p in named.items():
        if p.dtype != torch.float64:
            raise ContractError(f"grad_check needs float64 parameters, {name} is {p.dtype}")

    def evaluate() -> torch.Tensor:
        out = f()
        if out.numel() != 1 or not torch.isfinite(out).all():
            raise NumericError(f"grad_check objective is not a finite scalar: {out}")
        return out

    for p in named.values():
        p.grad = None
    evaluate().backward()
    analytic = {
        k: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for k, p in named.items()
    }

    rng = np.random.default_rng(seed)
    worst = GradCheckResult(0.0, "", (), 0.0, 0.0, 0)
    checked = 0
    for name, p in named.items():
        flat_count = p.numel()
        coords = np.arange(flat_count)
        if max_coords is not None and flat_count > max_coords:
            coords = np.sort(rng.choice(flat_count, size=max_coords, replace=False))
        for flat in coords:
            index = tuple(int(i) for i in np.unravel_index(int(flat), tuple(p.shape)))
            with torch.no_grad():
                original = p[index].item()
                p[index] = original + eps
                plus = evaluate().item()
                p[index] = original - eps
                minus = evaluate().item()
                p[index] = original
            numeric = (plus - minus) / (2.0 * eps)
            a = analytic[name][index].item()
            scale = max(abs(a), abs(numeric), floor)
            rel = abs(a - numeric) / scale if scale > 0.0 else 0.0
            checked += 1
            if rel >= worst.max_rel_error:
                worst = GradCheckResult(rel, name, index, a, numeric, 0)
    logger.debug(
        f"grad_check: {checked} coords, worst {worst.max_rel_error:.3e} at {worst.worst_param}{list(worst.worst_index)}"
    )
    return GradCheckResult(
        worst.max_rel_error, worst.worst_param, worst.worst_index, worst.analytic, worst.numeric, checked
    )
