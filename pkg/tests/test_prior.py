"""Tests for the latent trajectory prior and generation."""

import math

import numpy as np
import pytest
import torch
from pydantic import ValidationError
from scipy import integrate, stats
from torch import nn

from latentplan.errors import ShapeError
from latentplan.kernels import grad_check
from latentplan.prior import (
    LOG_SIGMA_MAX,
    ClassDecoder,
    DirectDecoder,
    FutureEncoder,
    GenerationConfig,
    InstanceEncoder,
    LatentGaussian,
    RolloutDecoder,
    SampleMode,
    kl_diag_gauss,
    sample_latent,
)
from latentplan.scenes import AGENT_CLASSES


def gauss(mu, log_sigma) -> LatentGaussian:
    return LatentGaussian(
        torch.tensor(mu, dtype=torch.float64), torch.tensor(log_sigma, dtype=torch.float64)
    )


class TestKL:
    """Tests for kl_diag_gauss."""

    def test_matches_quadrature(self) -> None:
        """Test the closed form against numerical integration on 100 random 1-D pairs."""
        rng = np.random.default_rng(0)
        for _ in range(100):
            q_mu, p_mu = rng.uniform(-2.0, 2.0, size=2)
            q_ls, p_ls = rng.uniform(-1.0, 1.0, size=2)
            q_dist = stats.norm(q_mu, math.exp(q_ls))
            p_dist = stats.norm(p_mu, math.exp(p_ls))
            lo, hi = q_mu - 12.0 * math.exp(q_ls), q_mu + 12.0 * math.exp(q_ls)
            numeric, _ = integrate.quad(
                lambda x: q_dist.pdf(x) * (q_dist.logpdf(x) - p_dist.logpdf(x)),
                lo,
                hi,
                epsabs=1e-10,
                epsrel=1e-10,
            )
            closed = kl_diag_gauss(gauss([q_mu], [q_ls]), gauss([p_mu], [p_ls]))
            assert float(closed) == pytest.approx(numeric, abs=1e-6)

    def test_self_divergence_is_zero(self) -> None:
        """Test KL(q || q) = 0."""
        q = gauss([0.4, -1.2, 3.0], [0.1, -2.0, 0.7])
        assert float(kl_diag_gauss(q, q)) == 0.0

    def test_unit_mean_shift(self) -> None:
        """Test KL(N(1, 1) || N(0, 1)) = 0.5."""
        assert float(kl_diag_gauss(gauss([1.0], [0.0]), gauss([0.0], [0.0]))) == pytest.approx(0.5)

    def test_non_negative_and_zero_on_self(self) -> None:
        """Test KL >= 0 and KL(q || q) = 0 over 10,000 random pairs."""
        gen = torch.Generator().manual_seed(0)
        q = LatentGaussian(*torch.randn(2, 10_000, 4, generator=gen, dtype=torch.float64))
        p = LatentGaussian(*torch.randn(2, 10_000, 4, generator=gen, dtype=torch.float64))
        assert (kl_diag_gauss(q, p) >= 0.0).all()
        assert (kl_diag_gauss(q, q) == 0.0).all()

    def test_batched_sums_last_dimension(self) -> None:
        """Test one divergence per row of a batch."""
        q = LatentGaussian(torch.zeros(3, 2), torch.zeros(3, 2))
        p = LatentGaussian(torch.ones(3, 2), torch.zeros(3, 2))
        torch.testing.assert_close(kl_diag_gauss(q, p), torch.ones(3))

    def test_shape_mismatch(self) -> None:
        """Test that Gaussians of different size raise ShapeError."""
        with pytest.raises(ShapeError):
            kl_diag_gauss(gauss([0.0], [0.0]), gauss([0.0, 0.0], [0.0, 0.0]))

    def test_gradient_matches_finite_differences(self) -> None:
        """Test autograd gradients in mu and log sigma of both sides against central differences."""
        gen = torch.Generator().manual_seed(4)
        params = {
            name: nn.Parameter(torch.rand(5, generator=gen, dtype=torch.float64) - 0.5)
            for name in ("q_mu", "q_log_sigma", "p_mu", "p_log_sigma")
        }

        def objective() -> torch.Tensor:
            q = LatentGaussian(params["q_mu"], params["q_log_sigma"])
            p = LatentGaussian(params["p_mu"], params["p_log_sigma"])
            return kl_diag_gauss(q, p)

        result = grad_check(objective, params, eps=1e-5)
        assert result.coords_checked == 20
        assert result.max_rel_error < 1e-4


class TestLatentGaussian:
    """Tests for LatentGaussian."""

    def test_log_sigma_clamped(self) -> None:
        """Test that log sigma is clamped into range on construction."""
        g = gauss([0.0, 0.0], [-50.0, 50.0])
        assert g.log_sigma.tolist() == [-6.0, LOG_SIGMA_MAX]

    def test_from_params_splits_halves(self) -> None:
        """Test the (mu, log_sigma) split of the last dimension."""
        g = LatentGaussian.from_params(torch.tensor([1.0, 2.0, 0.5, -0.5]))
        assert g.mu.tolist() == [1.0, 2.0]
        assert g.log_sigma.tolist() == [0.5, -0.5]

    def test_shape_mismatch(self) -> None:
        """Test that mu and log sigma must agree in shape."""
        with pytest.raises(ShapeError):
            LatentGaussian(torch.zeros(2), torch.zeros(3))


class TestSampling:
    """Tests for sample_latent."""

    def test_mean_mode(self) -> None:
        """Test that mean mode returns mu itself."""
        g = gauss([0.5, -0.5], [1.0, 1.0])
        assert torch.equal(sample_latent(g, SampleMode.MEAN).z, g.mu)

    def test_sample_mode_is_seeded(self) -> None:
        """Test that equal generator seeds give equal samples away from the mean."""
        g = gauss([0.5, -0.5], [0.0, 0.0])
        a = sample_latent(g, "sample", torch.Generator().manual_seed(3)).z
        b = sample_latent(g, "sample", torch.Generator().manual_seed(3)).z
        assert torch.equal(a, b)
        assert not torch.equal(a, g.mu)

    def test_sample_statistics(self) -> None:
        """Test the mean and variance of 10,000 standard normal samples."""
        g = LatentGaussian(torch.zeros(10_000, dtype=torch.float64), torch.zeros(10_000, dtype=torch.float64))
        z = sample_latent(g, SampleMode.SAMPLE, torch.Generator().manual_seed(5)).z
        assert abs(float(z.mean())) < 0.05
        assert abs(float(z.var()) - 1.0) < 0.1

    def test_sample_scales_and_shifts(self) -> None:
        """Test that samples follow the given mean and standard deviation."""
        mu = torch.full((10_000,), 2.0, dtype=torch.float64)
        log_sigma = torch.full((10_000,), math.log(0.5), dtype=torch.float64)
        z = sample_latent(LatentGaussian(mu, log_sigma), SampleMode.SAMPLE, torch.Generator().manual_seed(6)).z
        assert abs(float(z.mean()) - 2.0) < 0.05
        assert abs(float(z.var()) - 0.25) < 0.1


class TestRolloutDecoder:
    """Tests for the recurrent decoder."""

    def test_six_waypoints(self) -> None:
        """Test that decoding yields one waypoint per future frame."""
        decoder = RolloutDecoder(latent_dim=8)
        assert decoder(torch.zeros(8)).shape == (6, 2)
        assert decoder(torch.zeros(3, 8)).shape == (3, 6, 2)

    def test_zero_parameters_halve_state(self) -> None:
        """Test h_k = h_0 / 2^k when every GRU parameter is zero."""
        decoder = RolloutDecoder(latent_dim=4).to(torch.float64)
        with torch.no_grad():
            for p in decoder.cell.parameters():
                p.zero_()
        h0 = torch.tensor([1.0, -2.0, 4.0, 8.0], dtype=torch.float64)
        states = decoder.rollout(h0)
        assert len(states) == 6
        for k, h in enumerate(states, start=1):
            torch.testing.assert_close(h, h0 / 2**k)

    def test_waypoints_accumulate_displacements(self) -> None:
        """Test that a constant step yields evenly spaced waypoints."""
        decoder = RolloutDecoder(latent_dim=4).to(torch.float64)
        with torch.no_grad():
            decoder.waypoint_head.last.weight.zero_()
            decoder.waypoint_head.last.bias.copy_(torch.tensor([0.1, 0.0]))
        waypoints = decoder(torch.randn(4, dtype=torch.float64))
        expected = torch.stack([torch.arange(1, 7) * 0.5, torch.zeros(6)], dim=1).double()
        torch.testing.assert_close(waypoints, expected)

    def test_zero_steps_rejected(self) -> None:
        """Test that a rollout needs at least one step."""
        with pytest.raises(ValueError):
            RolloutDecoder(latent_dim=4).rollout(torch.zeros(4), steps=0)


class TestEncoders:
    """Tests for the latent encoders and the direct decoder."""

    def test_future_encoder(self) -> None:
        """Test the latent size from a future and its context token."""
        enc = FutureEncoder(horizon=6, model_dim=16, latent_dim=8)
        g = enc(torch.zeros(3, 6, 2), torch.zeros(3, 16))
        assert g.mu.shape == (3, 8)

    def test_future_encoder_horizon(self) -> None:
        """Test that a future of the wrong length raises ShapeError."""
        enc = FutureEncoder(horizon=6, model_dim=16, latent_dim=8)
        with pytest.raises(ShapeError, match="6 waypoints"):
            enc(torch.zeros(5, 2), torch.zeros(16))

    def test_instance_encoder(self) -> None:
        """Test one Gaussian per instance token."""
        assert InstanceEncoder(16, 8)(torch.zeros(5, 16)).dim == 8

    def test_direct_decoder(self) -> None:
        """Test the whole-trajectory decoder shape."""
        assert DirectDecoder(latent_dim=8)(torch.zeros(2, 8)).shape == (2, 6, 2)

    def test_zero_class_decoder_is_uniform(self) -> None:
        """Test that a zero-weight class decoder gives equal logits for every class."""
        decoder = ClassDecoder(latent_dim=8).to(torch.float64)
        with torch.no_grad():
            for p in decoder.parameters():
                p.zero_()
        logits = decoder(torch.randn(3, 8, dtype=torch.float64))
        assert logits.shape == (3, len(AGENT_CLASSES))
        assert torch.equal(logits, torch.zeros_like(logits))
        probs = torch.softmax(logits, dim=-1)
        torch.testing.assert_close(probs, torch.full_like(probs, 1.0 / len(AGENT_CLASSES)))


class TestGenerationConfig:
    """Tests for GenerationConfig."""

    def test_hidden_must_equal_latent(self) -> None:
        """Test that the GRU hidden size is tied to the latent size."""
        with pytest.raises(ValidationError, match="gru_hidden"):
            GenerationConfig(latent_dim=8, gru_hidden=16)

    def test_extra_keys_rejected(self) -> None:
        """Test that unknown keys are rejected."""
        with pytest.raises(ValidationError):
            GenerationConfig(latent_dim=8, gru_hidden=8, beam_width=3)
