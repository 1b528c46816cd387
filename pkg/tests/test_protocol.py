"""Tests for the TrajectoryDecoder protocol."""

from latentplan.prior import DirectDecoder, RolloutDecoder
from latentplan.protocol import TrajectoryDecoder


def test_rollout_decoder_implements_protocol():
    """Test that RolloutDecoder implements the TrajectoryDecoder protocol."""
    assert isinstance(RolloutDecoder(latent_dim=4), TrajectoryDecoder)


def test_direct_decoder_implements_protocol():
    """Test that DirectDecoder implements the TrajectoryDecoder protocol."""
    assert isinstance(DirectDecoder(latent_dim=4), TrajectoryDecoder)


def test_protocol_has_required_members():
    """Test that TrajectoryDecoder declares decode and a horizon."""
    assert hasattr(TrajectoryDecoder, "decode")
    assert "horizon" in TrajectoryDecoder.__annotations__
