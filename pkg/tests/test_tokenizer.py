"""Tests for scene tokenization."""

import pytest
import torch

from latentplan.bev import NUM_CHANNELS, OCCUPANCY_CHANNELS, GridConfig
from latentplan.errors import ShapeError
from latentplan.kernels import AttentionConfig, seeded_init
from latentplan.tokenizer import (
    AGENT_LOGITS,
    EGO_HISTORY_WIDTH,
    MAP_LOGITS,
    MAP_POINTS,
    SceneTokenizer,
    sinusoidal_encoding_2d,
)

D = 16


@pytest.fixture
def tokenizer() -> SceneTokenizer:
    with seeded_init(0):
        tok = SceneTokenizer(
            AttentionConfig(model_dim=D, num_heads=2, num_layers=2, num_sample_points=2),
            GridConfig(height=8, width=8, extent=60.0),
            num_map_tokens=4,
            num_agent_slots=5,
        )
    return tok.to(torch.float64)


class TestPositionalEncoding:
    """Tests for sinusoidal_encoding_2d."""

    def test_shape_and_range(self) -> None:
        """Test the (H*W, dim) shape and the [-1, 1] range."""
        enc = sinusoidal_encoding_2d(3, 5, 8)
        assert enc.shape == (15, 8)
        assert enc.abs().max() <= 1.0

    def test_distinct_cells(self) -> None:
        """Test that no two cells share an encoding."""
        enc = sinusoidal_encoding_2d(4, 4, 8)
        assert torch.unique(enc, dim=0).shape[0] == 16

    def test_dim_must_divide_by_four(self) -> None:
        """Test that an unusable width raises ShapeError."""
        with pytest.raises(ShapeError):
            sinusoidal_encoding_2d(4, 4, 6)


class TestSceneTokenizer:
    """Tests for SceneTokenizer."""

    def test_forward_shapes(self, tokenizer) -> None:
        """Test token counts and widths for one scene."""
        bev = torch.rand(8, 8, NUM_CHANNELS, dtype=torch.float64)
        tokens = tokenizer(bev, torch.zeros(EGO_HISTORY_WIDTH, dtype=torch.float64))
        assert tokens.map_tokens.shape == (4, D)
        assert tokens.agent_tokens.shape == (5, D)
        assert tokens.ego_token.shape == (1, D)
        assert tokens.instance_tokens.shape == (6, D)

    def test_bad_bev_shape(self, tokenizer) -> None:
        """Test that a grid of the wrong size raises ShapeError."""
        with pytest.raises(ShapeError, match="BEV grid"):
            tokenizer.encode_map_tokens(torch.zeros(4, 4, NUM_CHANNELS, dtype=torch.float64))

    def test_bad_ego_history(self, tokenizer) -> None:
        """Test that the ego history must be the flattened past frames."""
        with pytest.raises(ShapeError, match="ego history"):
            tokenizer.encode_ego(torch.zeros(EGO_HISTORY_WIDTH - 2, dtype=torch.float64))

    def test_ego_mask(self) -> None:
        """Test that only agent rows are blocked from the ego column."""
        assert SceneTokenizer.ego_mask(3, False) is None
        assert SceneTokenizer.ego_mask(0, True) is None
        mask = SceneTokenizer.ego_mask(3, True)
        assert mask.shape == (4, 4)
        assert mask[1:, 0].all()
        assert mask.sum() == 3

    def test_masked_fusion_matches_ego_free_fusion_within_tolerance(self, tokenizer) -> None:
        """Test that masked agent rows equal fusion without the ego token to 1e-12 in float64."""
        gen = torch.Generator().manual_seed(0)
        for _ in range(100):
            agents = torch.randn(5, D, generator=gen, dtype=torch.float64)
            ego = torch.randn(1, D, generator=gen, dtype=torch.float64)
            with torch.no_grad():
                masked = tokenizer.fuse_instances(agents, ego, mask_ego_to_agents=True)
                alone = tokenizer.fuse_block(agents)
            torch.testing.assert_close(masked[1:], alone, rtol=0.0, atol=1e-12)

    def test_unmasked_fusion_sees_ego(self, tokenizer) -> None:
        """Test that without the mask agent rows depend on the ego token."""
        agents = torch.randn(5, D, dtype=torch.float64)
        with torch.no_grad():
            a = tokenizer.fuse_instances(agents, torch.zeros(1, D, dtype=torch.float64))
            b = tokenizer.fuse_instances(agents, torch.ones(1, D, dtype=torch.float64))
        assert not torch.allclose(a[1:], b[1:])

    def test_ego_token_shape_checked(self, tokenizer) -> None:
        """Test that a malformed ego token raises ShapeError."""
        with pytest.raises(ShapeError, match="ego token"):
            tokenizer.fuse_instances(
                torch.zeros(5, D, dtype=torch.float64), torch.zeros(2, D, dtype=torch.float64)
            )


class TestHeads:
    """Tests for the auxiliary decoding heads."""

    def test_decode_agents(self, tokenizer) -> None:
        """Test one detection per slot with a heading in (-pi, pi]."""
        detections = tokenizer.decode_agents(torch.randn(5, D, dtype=torch.float64))
        assert len(detections) == 5
        for det in detections:
            assert len(det.class_logits) == AGENT_LOGITS
            assert -torch.pi <= det.heading <= torch.pi
            assert det.class_probs.sum() == pytest.approx(1.0)

    def test_decode_map(self, tokenizer) -> None:
        """Test polyline and logit shapes per map token."""
        decoded = tokenizer.decode_map(torch.randn(4, D, dtype=torch.float64))
        assert decoded.points.shape == (4, MAP_POINTS, 2)
        assert decoded.logits.shape == (4, MAP_LOGITS)

    def test_positions_in_meters(self, tokenizer) -> None:
        """Test that head positions are scaled by half the grid extent."""
        tokens = torch.randn(5, D, dtype=torch.float64)
        raw = tokenizer.agent_head(tokens)[:, :2]
        torch.testing.assert_close(tokenizer.agent_head_outputs(tokens).positions, raw * 30.0)


def silence(layers) -> None:
    """Zero every value path and FFN output so each layer reduces to its residual."""
    with torch.no_grad():
        for layer in layers:
            attn = getattr(layer, "attn", layer)
            value = attn.v_proj if hasattr(attn, "v_proj") else attn.value_proj
            value.weight.zero_()
            value.bias.zero_()
            attn.out_proj.bias.zero_()
            layer.ffn.last.weight.zero_()
            layer.ffn.last.bias.zero_()


def random_bev(seed: int = 0) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed)
    return torch.rand(8, 8, NUM_CHANNELS, generator=gen, dtype=torch.float64)


class TestTokenInvariants:
    """Residual, permutation and sensitivity properties of the token pipeline."""

    def test_map_tokens_residual_identity(self, tokenizer) -> None:
        """Test that silenced cross-attention returns the initial map queries."""
        silence(tokenizer.map_block.layers)
        with torch.no_grad():
            tokens = tokenizer.encode_map_tokens(torch.zeros(8, 8, NUM_CHANNELS, dtype=torch.float64))
        assert torch.equal(tokens, tokenizer.map_queries)

    def test_map_tokens_ignore_cell_order(self, tokenizer) -> None:
        """Test that permuting cells with their encodings leaves map tokens unchanged."""
        gen = torch.Generator().manual_seed(1)
        with torch.no_grad():
            cells = tokenizer.embed_cells(random_bev())
            perm = torch.randperm(cells.shape[0], generator=gen)
            torch.testing.assert_close(
                tokenizer.attend_map(cells[perm]), tokenizer.attend_map(cells), rtol=0.0, atol=1e-12
            )

    def test_agent_tokens_residual_identity(self, tokenizer) -> None:
        """Test that silenced deformable layers return the initial agent queries."""
        silence(tokenizer.agent_layers)
        with torch.no_grad():
            tokens = tokenizer.encode_agent_tokens(torch.zeros(8, 8, NUM_CHANNELS, dtype=torch.float64))
        assert torch.equal(tokens, tokenizer.agent_queries)

    def test_agent_tokens_follow_occupancy(self, tokenizer) -> None:
        """Test that shifting occupancy by one cell changes the agent tokens."""
        bev = torch.zeros(8, 8, NUM_CHANNELS, dtype=torch.float64)
        gen = torch.Generator().manual_seed(2)
        occupancy = (torch.rand(8, 8, generator=gen) < 0.3).to(torch.float64)
        bev[..., OCCUPANCY_CHANNELS] = occupancy.unsqueeze(-1)
        shifted = bev.clone()
        shifted[..., OCCUPANCY_CHANNELS] = torch.roll(occupancy, shifts=1, dims=1).unsqueeze(-1)
        with torch.no_grad():
            a = tokenizer.encode_agent_tokens(bev)
            b = tokenizer.encode_agent_tokens(shifted)
        assert not torch.allclose(a, b)

    def test_agent_slots_are_permutation_equivariant(self, tokenizer) -> None:
        """Test that permuting queries and reference points permutes the agent tokens."""
        bev = random_bev()
        perm = torch.tensor([3, 0, 4, 1, 2])
        with torch.no_grad():
            before = tokenizer.encode_agent_tokens(bev)
            tokenizer.agent_queries.copy_(tokenizer.agent_queries[perm].clone())
            tokenizer.agent_ref_logits.copy_(tokenizer.agent_ref_logits[perm].clone())
            after = tokenizer.encode_agent_tokens(bev)
        torch.testing.assert_close(after, before[perm], rtol=0.0, atol=1e-12)

    def test_single_instance_fusion(self, tokenizer) -> None:
        """Test that the ego alone attends only to itself with weight one."""
        ego = torch.randn(1, D, dtype=torch.float64)
        with torch.no_grad():
            fused = tokenizer.fuse_instances(torch.zeros(0, D, dtype=torch.float64), ego)
            _, weights = tokenizer.fuse_block.forward_with_weights(ego)
            x = ego
            for layer in tokenizer.fuse_block.layers:
                x = x + layer.attn.out_proj(layer.attn.v_proj(layer.norm_q(x)))
                x = x + layer.ffn(layer.norm_ffn(x))
        assert all(torch.equal(w, torch.ones_like(w)) for w in weights)
        torch.testing.assert_close(fused, x)

    def test_inject_map_residual_identity(self, tokenizer) -> None:
        """Test that silenced map injection leaves the instance tokens unchanged."""
        silence(tokenizer.inject_block.layers)
        instances = torch.randn(6, D, dtype=torch.float64)
        with torch.no_grad():
            out = tokenizer.inject_map(instances, torch.randn(4, D, dtype=torch.float64))
        assert torch.equal(out, instances)

    def test_inject_map_reaches_map_tokens(self, tokenizer) -> None:
        """Test a nonzero gradient of a toy loss with respect to the map tokens."""
        map_tokens = torch.randn(4, D, dtype=torch.float64, requires_grad=True)
        out = tokenizer.inject_map(torch.randn(6, D, dtype=torch.float64), map_tokens)
        (out**2).sum().backward()
        assert map_tokens.grad is not None
        assert map_tokens.grad.abs().sum() > 0

    def test_decode_agents_is_slot_equivariant(self, tokenizer) -> None:
        """Test that permuting slots permutes the detections."""
        tokens = torch.randn(5, D, dtype=torch.float64)
        perm = [2, 4, 0, 3, 1]
        base = tokenizer.decode_agents(tokens)
        permuted = tokenizer.decode_agents(tokens[perm])
        for det, i in zip(permuted, perm):
            assert det.position == pytest.approx(base[i].position, abs=1e-12)
            assert det.heading == pytest.approx(base[i].heading, abs=1e-12)
            assert det.class_logits == pytest.approx(base[i].class_logits, abs=1e-12)
