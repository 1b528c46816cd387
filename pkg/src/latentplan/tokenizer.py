"""Instance-centric scene tokens.

A BEV grid becomes three sets of learned tokens: map tokens (cross-attention
of learned queries onto the grid cells), agent tokens (deformable attention
around learned reference points) and an ego token (MLP over the ego history).
Ego and agent tokens are fused by self-attention into instance tokens, which
then cross-attend to the map tokens. Auxiliary heads decode agent boxes and
map polylines from their tokens.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .bev import NUM_CHANNELS, GridConfig
from .errors import ShapeError
from .geometry import MAP_CATEGORIES, PAST_FRAMES
from .kernels import MLP, AttentionBlock, AttentionConfig, DeformableAttention
from .scenes import AGENT_CLASSES

# Points decoded per map token
MAP_POINTS = 20

# Agent logits: one per class plus background (last)
AGENT_LOGITS = len(AGENT_CLASSES) + 1
MAP_LOGITS = len(MAP_CATEGORIES) + 1

EGO_HISTORY_WIDTH = 2 * (PAST_FRAMES + 1)


def sinusoidal_encoding_2d(height: int, width: int, dim: int) -> torch.Tensor:
    """Fixed (H*W, dim) encoding; the first half encodes x, the second y."""
    if dim % 4:
        raise ShapeError(f"2D positional encoding needs dim divisible by 4, got {dim}")
    quarter = dim // 4
    freqs = torch.exp(-math.log(10000.0) * torch.arange(quarter, dtype=torch.float64) / quarter)
    rows, cols = torch.meshgrid(
        torch.arange(height, dtype=torch.float64),
        torch.arange(width, dtype=torch.float64),
        indexing="ij",
    )
    x = cols.reshape(-1, 1) * freqs
    y = rows.reshape(-1, 1) * freqs
    return torch.cat([x.sin(), x.cos(), y.sin(), y.cos()], dim=1)


@dataclass
class TokenSet:
    """Scene tokens. ``instance_tokens`` row 0 is the ego."""

    map_tokens: torch.Tensor
    agent_tokens: torch.Tensor
    ego_token: torch.Tensor
    instance_tokens: torch.Tensor


@dataclass
class AgentHeadOutput:
    positions: torch.Tensor
    sincos: torch.Tensor
    logits: torch.Tensor

    @property
    def headings(self) -> torch.Tensor:
        return torch.atan2(self.sincos[:, 0], self.sincos[:, 1])


@dataclass(frozen=True)
class AgentDetection:
    position: tuple[float, float]
    heading: float
    class_logits: tuple[float, ...]
    matched_gt: int | None = None

    @property
    def class_probs(self) -> np.ndarray:
        logits = np.asarray(self.class_logits)
        e = np.exp(logits - logits.max())
        return e / e.sum()


@dataclass
class MapDecode:
    """Per map token: ``points`` (N, 20, 2) in meters and ``logits`` (N, 4)."""

    points: torch.Tensor
    logits: torch.Tensor


class SceneTokenizer(nn.Module):
    def __init__(
        self,
        attention: AttentionConfig,
        grid: GridConfig,
        num_map_tokens: int = 16,
        num_agent_slots: int = 16,
    ):
        super().__init__()
        d = attention.model_dim
        self.attention = attention
        self.grid = grid
        self.position_scale = grid.extent / 2.0
        bound = 1.0 / math.sqrt(d)

        self.cell_proj = nn.Linear(NUM_CHANNELS, d)
        self.register_buffer(
            "cell_pos", sinusoidal_encoding_2d(grid.height, grid.width, d).float(), persistent=False
        )
        self.map_queries = nn.Parameter(torch.empty(num_map_tokens, d).uniform_(-bound, bound))
        self.map_block = AttentionBlock(attention, cross=True)

        self.agent_queries = nn.Parameter(torch.empty(num_agent_slots, d).uniform_(-bound, bound))
        self.agent_ref_logits = nn.Parameter(torch.empty(num_agent_slots, 2).uniform_(-2.0, 2.0))
        self.agent_layers = nn.ModuleList(
            DeformableAttention(attention) for _ in range(attention.num_layers)
        )

        self.ego_encoder = MLP([EGO_HISTORY_WIDTH, d, d], name="ego_encoder")
        self.fuse_block = AttentionBlock(attention)
        self.inject_block = AttentionBlock(attention, cross=True)

        self.agent_head = MLP([d, d, 4 + AGENT_LOGITS], name="agent_head")
        self.map_head = MLP([d, d, 2 * MAP_POINTS + MAP_LOGITS], name="map_head")

    @property
    def model_dim(self) -> int:
        return self.attention.model_dim

    def embed_cells(self, bev: torch.Tensor) -> torch.Tensor:
        """Flattened, projected and position-encoded grid cells, (H*W, D)."""
        expected = (self.grid.height, self.grid.width, NUM_CHANNELS)
        if tuple(bev.shape) != expected:
            raise ShapeError(f"BEV grid must be {expected}, got {tuple(bev.shape)}")
        return self.cell_proj(bev.reshape(-1, NUM_CHANNELS)) + self.cell_pos.to(bev.dtype)

    def attend_map(self, cells: torch.Tensor) -> torch.Tensor:
        return self.map_block(self.map_queries, cells)

    def encode_map_tokens(self, bev: torch.Tensor) -> torch.Tensor:
        """M = CA(M0, B, B), shape (N_m, D)."""
        return self.attend_map(self.embed_cells(bev))

    def agent_ref_points(self) -> torch.Tensor:
        return torch.sigmoid(self.agent_ref_logits)

    def encode_agent_tokens(self, bev: torch.Tensor) -> torch.Tensor:
        """A = DA(A0, B, B), shape (N_a, D)."""
        grid = self.embed_cells(bev).reshape(self.grid.height, self.grid.width, self.model_dim)
        tokens, refs = self.agent_queries, self.agent_ref_points()
        for layer in self.agent_layers:
            tokens = layer(tokens, refs, grid)
        return tokens

    def encode_ego(self, ego_history: torch.Tensor) -> torch.Tensor:
        """Ego token (1, D) from the flattened frame -5..0 positions in meters."""
        if tuple(ego_history.shape) != (EGO_HISTORY_WIDTH,):
            raise ShapeError(
                f"ego history must have {EGO_HISTORY_WIDTH} values, got {tuple(ego_history.shape)}"
            )
        return self.ego_encoder(ego_history / self.position_scale).unsqueeze(0)

    @staticmethod
    def ego_mask(num_agents: int, mask_ego_to_agents: bool) -> torch.Tensor | None:
        """Blocks agent queries from the ego key when requested."""
        if not mask_ego_to_agents or num_agents == 0:
            return None
        mask = torch.zeros(num_agents + 1, num_agents + 1, dtype=torch.bool)
        mask[1:, 0] = True
        return mask

    def fuse_instances(
        self,
        agent_tokens: torch.Tensor,
        ego_token: torch.Tensor,
        mask_ego_to_agents: bool = False,
    ) -> torch.Tensor:
        """I = SA(I, I, I) over ``concat(e, A)``."""
        if ego_token.shape != (1, self.model_dim):
            raise ShapeError(f"ego token must be (1, {self.model_dim}), got {tuple(ego_token.shape)}")
        instances = torch.cat([ego_token, agent_tokens], dim=0)
        mask = self.ego_mask(agent_tokens.shape[0], mask_ego_to_agents)
        return self.fuse_block(instances, mask=mask)

    def inject_map(self, instance_tokens: torch.Tensor, map_tokens: torch.Tensor) -> torch.Tensor:
        """I = CA(I, M, M)."""
        return self.inject_block(instance_tokens, map_tokens)

    def forward(
        self,
        bev: torch.Tensor,
        ego_history: torch.Tensor,
        mask_ego_to_agents: bool = False,
    ) -> TokenSet:
        map_tokens = self.encode_map_tokens(bev)
        agent_tokens = self.encode_agent_tokens(bev)
        ego_token = self.encode_ego(ego_history)
        instances = self.fuse_instances(agent_tokens, ego_token, mask_ego_to_agents)
        instances = self.inject_map(instances, map_tokens)
        return TokenSet(map_tokens, agent_tokens, ego_token, instances)

    def agent_head_outputs(self, agent_tokens: torch.Tensor) -> AgentHeadOutput:
        out = self.agent_head(agent_tokens)
        return AgentHeadOutput(
            positions=out[:, :2] * self.position_scale,
            sincos=out[:, 2:4],
            logits=out[:, 4:],
        )

    def decode_agents(self, agent_tokens: torch.Tensor) -> list[AgentDetection]:
        """Position, heading (atan2 of the sin/cos pair) and class logits per slot."""
        with torch.no_grad():
            head = self.agent_head_outputs(agent_tokens)
            headings = head.headings
        return [
            AgentDetection(
                position=(float(p[0]), float(p[1])),
                heading=float(h),
                class_logits=tuple(float(v) for v in logits),
            )
            for p, h, logits in zip(head.positions, headings, head.logits)
        ]

    def decode_map(self, map_tokens: torch.Tensor) -> MapDecode:
        out = self.map_head(map_tokens)
        points = out[:, : 2 * MAP_POINTS].reshape(-1, MAP_POINTS, 2) * self.position_scale
        return MapDecode(points=points, logits=out[:, 2 * MAP_POINTS :])
