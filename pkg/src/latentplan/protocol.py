"""TrajectoryDecoder protocol definition."""

from typing import Protocol, runtime_checkable

import torch


@runtime_checkable
class TrajectoryDecoder(Protocol):
    """Protocol for turning an initial latent into future waypoints.

    Implementations can generate step by step (latent rollout) or decode
    the whole horizon at once, while giving the planner one interface.
    """

    horizon: int

    def decode(self, z0: torch.Tensor) -> torch.Tensor:
        """Decode future waypoints.

        Args:
            z0: Initial latent, shape ``(Z,)`` or ``(N, Z)``.

        Returns:
            Waypoints for frames 1..horizon in the instance's frame-0 frame,
            shape ``(horizon, 2)`` or ``(N, horizon, 2)``.
        """
        ...
