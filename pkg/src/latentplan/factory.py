"""Factory function for trajectory decoder selection."""

from typing import Literal

from .geometry import FUTURE_FRAMES
from .prior import DirectDecoder, RolloutDecoder
from .protocol import TrajectoryDecoder

DecoderKind = Literal["rollout", "direct"]


def build_decoder(kind: DecoderKind = "rollout", **kwargs) -> TrajectoryDecoder:
    """Create a trajectory decoder.

    Args:
        kind: Which decoder to use
            - "rollout": GRU latent rollout, one waypoint per step
            - "direct": one MLP decoding the whole horizon
        **kwargs: Decoder configuration
            - latent_dim: Latent width (required)
            - horizon: Frames to generate (default 6)
            - step_scale: Meters per unit of decoder output (default 5.0)

    Returns:
        The TrajectoryDecoder instance.

    Raises:
        ValueError: If ``kind`` is unknown or ``latent_dim`` is missing.
    """
    if "latent_dim" not in kwargs:
        raise ValueError("latent_dim is required to build a decoder")
    latent_dim = kwargs["latent_dim"]
    horizon = kwargs.get("horizon", FUTURE_FRAMES)
    step_scale = kwargs.get("step_scale", 5.0)

    if kind == "rollout":
        return RolloutDecoder(latent_dim, horizon=horizon, step_scale=step_scale)
    if kind == "direct":
        return DirectDecoder(latent_dim, horizon=horizon, step_scale=step_scale)
    raise ValueError(f"Unknown decoder kind: {kind!r} (expected 'rollout' or 'direct')")
