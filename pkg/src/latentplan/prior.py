"""Trajectory prior in a latent space and latent future generation.

``FutureEncoder`` maps a ground-truth future (plus the instance's context
token) to a diagonal Gaussian; ``InstanceEncoder`` maps an instance token to
another. Training pulls the second toward the first with a KL term, so at
inference the instance distribution alone drives generation. Decoders that
turn a latent into waypoints live behind ``TrajectoryDecoder``.
"""

import logging
from dataclasses import dataclass
from enum import Enum

import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator
from torch import nn

from .errors import ShapeError
from .geometry import FUTURE_FRAMES
from .kernels import MLP, gru_step
from .scenes import AGENT_CLASSES

logger = logging.getLogger(__name__)

LOG_SIGMA_MIN = -6.0
LOG_SIGMA_MAX = 4.0


class SampleMode(str, Enum):
    MEAN = "mean"
    SAMPLE = "sample"


class GenerationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    latent_dim: int = Field(128, gt=0)
    gru_hidden: int = Field(128, gt=0)
    horizon: int = Field(FUTURE_FRAMES, ge=1)
    sample_mode: SampleMode = SampleMode.MEAN
    # Meters per unit of decoder output
    step_scale: float = Field(5.0, gt=0.0)

    @model_validator(mode="after")
    def _hidden_is_latent(self) -> "GenerationConfig":
        if self.gru_hidden != self.latent_dim:
            raise ValueError(
                f"gru_hidden ({self.gru_hidden}) must equal latent_dim ({self.latent_dim})"
            )
        return self


@dataclass
class LatentGaussian:
    """Diagonal Gaussian; ``log_sigma`` is clamped to [-6, 4].

    Tensors are ``(Z,)`` for one instance or ``(N, Z)`` for a batch.
    """

    mu: torch.Tensor
    log_sigma: torch.Tensor

    def __post_init__(self) -> None:
        if self.mu.shape != self.log_sigma.shape:
            raise ShapeError(
                f"mu and log_sigma shapes differ: {tuple(self.mu.shape)} vs {tuple(self.log_sigma.shape)}"
            )
        self.log_sigma = self.log_sigma.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX)

    @classmethod
    def from_params(cls, raw: torch.Tensor) -> "LatentGaussian":
        """Split the last dimension into (mu, log_sigma) halves."""
        mu, log_sigma = raw.chunk(2, dim=-1)
        return cls(mu, log_sigma)

    @property
    def sigma(self) -> torch.Tensor:
        return self.log_sigma.exp()

    @property
    def dim(self) -> int:
        return self.mu.shape[-1]

    def __getitem__(self, index) -> "LatentGaussian":
        return LatentGaussian(self.mu[index], self.log_sigma[index])


@dataclass
class LatentState:
    z: torch.Tensor
    t_index: int = 0


def kl_diag_gauss(q: LatentGaussian, p: LatentGaussian) -> torch.Tensor:
    """KL(q || p), summed over the latent dimension.

    Raises:
        ShapeError: If the Gaussians differ in shape.
    """
    if q.mu.shape != p.mu.shape:
        raise ShapeError(f"KL needs equal shapes, got {tuple(q.mu.shape)} and {tuple(p.mu.shape)}")
    var_ratio = torch.exp(2.0 * (q.log_sigma - p.log_sigma))
    mean_term = (q.mu - p.mu) ** 2 / (2.0 * torch.exp(2.0 * p.log_sigma))
    return (p.log_sigma - q.log_sigma + 0.5 * var_ratio + mean_term - 0.5).sum(dim=-1)


def sample_latent(
    g: LatentGaussian,
    mode: SampleMode | str = SampleMode.MEAN,
    generator: torch.Generator | None = None,
) -> LatentState:
    """``mu`` in mean mode, else the reparameterized ``mu + sigma * eps``."""
    if SampleMode(mode) == SampleMode.MEAN:
        return LatentState(g.mu)
    eps = torch.randn(g.mu.shape, generator=generator, dtype=g.mu.dtype)
    return LatentState(g.mu + g.sigma * eps)


class FutureEncoder(nn.Module):
    """Ground-truth future plus context token -> LatentGaussian. Training only."""

    def __init__(self, horizon: int, model_dim: int, latent_dim: int, position_scale: float = 10.0):
        super().__init__()
        self.horizon = horizon
        self.position_scale = position_scale
        self.mlp = MLP([2 * horizon + model_dim, latent_dim, 2 * latent_dim], name="future_encoder")

    def forward(self, future: torch.Tensor, context: torch.Tensor) -> LatentGaussian:
        """``future`` is (f, 2) or (N, f, 2) in each instance's frame-0 frame."""
        if future.shape[-2:] != (self.horizon, 2):
            raise ShapeError(
                f"future must hold {self.horizon} waypoints, got shape {tuple(future.shape)}"
            )
        flat = (future / self.position_scale).flatten(start_dim=-2)
        return LatentGaussian.from_params(self.mlp(torch.cat([flat, context], dim=-1)))


class InstanceEncoder(nn.Module):
    def __init__(self, model_dim: int, latent_dim: int):
        super().__init__()
        self.mlp = MLP([model_dim, latent_dim, 2 * latent_dim], name="instance_encoder")

    def forward(self, token: torch.Tensor) -> LatentGaussian:
        return LatentGaussian.from_params(self.mlp(token))


class RolloutDecoder(nn.Module):
    """GRU rollout ``z_{t+1} = g(z_t)`` with one waypoint decoded per state.

    Each step feeds a learned constant input; the waypoint head predicts the
    displacement from the previous waypoint, accumulated from the origin.
    """

    def __init__(self, latent_dim: int, horizon: int = FUTURE_FRAMES, step_scale: float = 5.0):
        super().__init__()
        self.horizon = horizon
        self.step_scale = step_scale
        self.cell = nn.GRUCell(latent_dim, latent_dim)
        self.step_input = nn.Parameter(torch.zeros(latent_dim))
        self.waypoint_head = MLP([latent_dim, latent_dim, 2], name="waypoint_head")

    def rollout(self, z0: torch.Tensor, steps: int | None = None) -> list[torch.Tensor]:
        """Exactly ``steps`` successive hidden states after ``z0``."""
        steps = self.horizon if steps is None else steps
        if steps < 1:
            raise ValueError(f"rollout needs at least one step, got {steps}")
        h = z0
        step_input = self.step_input.expand_as(z0)
        states = []
        for _ in range(steps):
            h = gru_step(self.cell, step_input, h)
            states.append(h)
        return states

    def decode_waypoints(self, states: list[torch.Tensor]) -> torch.Tensor:
        """Cumulative sum of per-state displacements, (..., len(states), 2)."""
        if not states:
            raise ValueError("decode_waypoints needs at least one state")
        deltas = torch.stack([self.waypoint_head(s) for s in states], dim=-2) * self.step_scale
        return deltas.cumsum(dim=-2)

    def decode(self, z0: torch.Tensor) -> torch.Tensor:
        return self.decode_waypoints(self.rollout(z0))

    def forward(self, z0: torch.Tensor) -> torch.Tensor:
        return self.decode(z0)


class DirectDecoder(nn.Module):
    """Whole-trajectory MLP decoder, no recurrent generation."""

    def __init__(self, latent_dim: int, horizon: int = FUTURE_FRAMES, step_scale: float = 5.0):
        super().__init__()
        self.horizon = horizon
        self.position_scale = step_scale * horizon
        self.mlp = MLP([latent_dim, latent_dim, 2 * horizon], name="direct_decoder")

    def decode(self, z0: torch.Tensor) -> torch.Tensor:
        out = self.mlp(z0) * self.position_scale
        return out.reshape(*z0.shape[:-1], self.horizon, 2)

    def forward(self, z0: torch.Tensor) -> torch.Tensor:
        return self.decode(z0)


class ClassDecoder(nn.Module):
    """Agent category logits from the initial latent."""

    def __init__(self, latent_dim: int, num_classes: int = len(AGENT_CLASSES)):
        super().__init__()
        self.mlp = MLP([latent_dim, latent_dim, num_classes], name="class_decoder")

    def forward(self, z0: torch.Tensor) -> torch.Tensor:
        return self.mlp(z0)
