"""Toy joint video-pose denoiser.

One forward pass over a multi-view token grid: camera-ray channels are
concatenated to the latent channels, tokens are embedded, each temporal
slot receives its timestep embedding plus a modality bias (identifier 0 for
the RGB half, 1 for the pose half), and the blocks interleave rotary 3D
self-attention over each view's full temporal sequence, multi-view spatial
attention across all views per temporal index, label cross-attention, and
an MLP. Condition slots flow through the network like any other token;
their predictions are ignored by the training loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from einops import rearrange
from torch import nn

from ..errors import ValidationError
from .tokens import (
    LatentDims,
    MultiViewGrid,
    RopeTable,
    TokenGrid,
    deflate_views,
    inflate_views,
)

RAY_CHANNELS = 6
TIME_SCALE = 1000.0


@dataclass(frozen=True)
class DenoiserConfig:
    blocks: int = 2
    heads: int = 4
    width: int = 64
    label_vocab: int = 8
    cond_drop_prob: float = 0.2
    guidance_scale: float = 3.0
    sample_steps: int = 50
    modality_freq_dim: int = 16
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ValidationError("width must be divisible by heads")
        if (self.width // self.heads) % 2 != 0:
            raise ValidationError("head dim must be even for rotary encoding")
        if not 0.0 <= self.cond_drop_prob <= 1.0:
            raise ValidationError("cond_drop_prob must lie in [0, 1]")


def sinusoidal_embedding(x: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard sin/cos embedding of a scalar batch, shape (..., dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=x.dtype, device=x.device) / half
    )
    args = x[..., None] * freqs
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class ModalityEmbedding(nn.Module):
    """Frequency-encoded modality identifier mapped to the timestep width.

    The final layer is zero-initialized so the bias vanishes before any
    training step.
    """

    def __init__(self, width: int, freq_dim: int = 16):
        super().__init__()
        self.freq_dim = freq_dim
        self.net = nn.Sequential(
            nn.Linear(2 * freq_dim, width), nn.SiLU(), nn.Linear(width, width)
        )
        nn.init.zeros_(self.net[2].weight)
        nn.init.zeros_(self.net[2].bias)

    def forward(self, identifier: torch.Tensor) -> torch.Tensor:
        enc = sinusoidal_embedding(identifier.to(self.net[0].weight.dtype) * TIME_SCALE,
                                   2 * self.freq_dim)
        return self.net(enc)


def modality_bias(
    embedding: ModalityEmbedding, timestep_emb: torch.Tensor, identifier: int
) -> torch.Tensor:
    """timestep_emb + MLP(frequency_encode(identifier)), same width as input."""
    if identifier not in (0, 1):
        raise ValidationError("modality identifier must be 0 or 1")
    ident = torch.tensor(float(identifier), dtype=timestep_emb.dtype,
                         device=timestep_emb.device)
    return timestep_emb + embedding(ident)


def _apply_rope(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    # x: (B, heads, L, head_dim); cos/sin: (L, head_dim)
    x2 = torch.stack([-x[..., 1::2], x[..., 0::2]], dim=-1).flatten(-2)
    return x * cos + x2 * sin


class SelfAttention(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)

    def forward(self, x: torch.Tensor, rope: tuple[torch.Tensor, torch.Tensor] | None = None):
        q, k, v = rearrange(self.qkv(x), "b l (three h d) -> three b h l d",
                            three=3, h=self.heads)
        if rope is not None:
            cos, sin = rope
            q = _apply_rope(q, cos, sin)
            k = _apply_rope(k, cos, sin)
        out = F.scaled_dot_product_attention(q, k, v)
        return self.proj(rearrange(out, "b h l d -> b l (h d)"))


class CrossAttention(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(width, width)
        self.kv = nn.Linear(width, 2 * width)
        self.proj = nn.Linear(width, width)

    def forward(self, x: torch.Tensor, context: torch.Tensor):
        q = rearrange(self.q(x), "b l (h d) -> b h l d", h=self.heads)
        k, v = rearrange(self.kv(context), "b m (two h d) -> two b h m d",
                         two=2, h=self.heads)
        out = F.scaled_dot_product_attention(q, k, v)
        return self.proj(rearrange(out, "b h l d -> b l (h d)"))


class Block(nn.Module):
    def __init__(self, width: int, heads: int, mlp_ratio: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.attn3d = SelfAttention(width, heads)
        self.norm2 = nn.LayerNorm(width)
        self.mvattn = SelfAttention(width, heads)
        self.norm3 = nn.LayerNorm(width)
        self.xattn = CrossAttention(width, heads)
        self.norm4 = nn.LayerNorm(width)
        hidden = int(width * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(width, hidden), nn.GELU(), nn.Linear(hidden, width))

    def forward(self, x: torch.Tensor, rope, context: torch.Tensor):
        # x: (B, N, T, h, w, D)
        b, n, t, h, w, _ = x.shape
        y = rearrange(x, "b n t h w d -> (b n) (t h w) d")
        y = y + self.attn3d(self.norm1(y), rope=rope)
        y = rearrange(y, "(b n) (t h w) d -> b n t h w d", n=n, t=t, h=h, w=w)

        z = rearrange(y, "b n t h w d -> (b t) (n h w) d")
        z = z + self.mvattn(self.norm2(z))
        z = rearrange(z, "(b t) (n h w) d -> b n t h w d", t=t, n=n, h=h, w=w)

        flat = rearrange(z, "b n t h w d -> b (n t h w) d")
        flat = flat + self.xattn(self.norm3(flat), context)
        flat = flat + self.mlp(self.norm4(flat))
        return rearrange(flat, "b (n t h w) d -> b n t h w d", n=n, t=t, h=h, w=w)


class JointDenoiser(nn.Module):
    """Velocity-predicting transformer over multi-view video-pose tokens."""

    def __init__(self, config: DenoiserConfig, dims: LatentDims):
        super().__init__()
        self.config = config
        self.dims = dims
        width = config.width
        self.in_proj = nn.Linear(dims.c + RAY_CHANNELS, width)
        self.time_mlp = nn.Sequential(nn.Linear(width, width), nn.SiLU(), nn.Linear(width, width))
        self.modality = ModalityEmbedding(width, config.modality_freq_dim)
        self.label_emb = nn.Embedding(config.label_vocab, width)
        self.null_ctx = nn.Parameter(torch.zeros(1, width))
        self.blocks = nn.ModuleList(
            Block(width, config.heads, config.mlp_ratio) for _ in range(config.blocks)
        )
        self.norm_out = nn.LayerNorm(width)
        self.out_proj = nn.Linear(width, dims.c)

        table = RopeTable.for_dims(dims, channels=width // config.heads)
        cos, sin = table.cos_sin(dims.pe_indices())
        dtype = torch.get_default_dtype()
        self.register_buffer(
            "rope_cos", torch.from_numpy(cos.reshape(-1, cos.shape[-1])).to(dtype)
        )
        self.register_buffer(
            "rope_sin", torch.from_numpy(sin.reshape(-1, sin.shape[-1])).to(dtype)
        )
        cond = torch.from_numpy(dims.condition_mask())
        self.register_buffer("cond_mask", cond)
        self.register_buffer("modality_ids", torch.from_numpy(dims.modality_ids()))

    def slot_conditioning(self, t: torch.Tensor) -> torch.Tensor:
        """(B, T, width) per-slot conditioning: timestep embedding (zero time
        at the clean condition slots) plus the modality bias."""
        b = t.shape[0]
        t_slot = torch.where(
            self.cond_mask[None, :], torch.zeros_like(t)[:, None], t[:, None]
        )
        temb = self.time_mlp(
            sinusoidal_embedding(t_slot * TIME_SCALE, self.config.width)
        )
        mod = self.modality(self.modality_ids.to(t.dtype))
        return temb + mod[None, :, :]

    def forward(
        self,
        values: torch.Tensor,  # (B, N, T, h, w, c)
        t: torch.Tensor,  # (B,)
        label: torch.Tensor,  # (B,) long
        rays: torch.Tensor,  # (N, h, w, 6)
    ) -> torch.Tensor:
        b, n, tt, h, w, c = values.shape
        d = self.dims
        if (n, tt, h, w, c) != (d.n_views, d.temporal, d.h, d.w, d.c):
            raise ValidationError(
                f"input shape {values.shape[1:]} does not match dims "
                f"{(d.n_views, d.temporal, d.h, d.w, d.c)}"
            )
        ray_tok = rays[None, :, None].expand(b, n, tt, h, w, RAY_CHANNELS)
        x = self.in_proj(torch.cat([values, ray_tok], dim=-1))
        x = x + self.slot_conditioning(t)[:, None, :, None, None, :]

        context = torch.cat(
            [self.label_emb(label)[:, None, :], self.null_ctx.expand(b, 1, -1)], dim=1
        )
        rope = (self.rope_cos, self.rope_sin)
        for block in self.blocks:
            x = block(x, rope, context)
        return self.out_proj(self.norm_out(x))


def multiview_attention(layer: SelfAttention, grids: MultiViewGrid) -> MultiViewGrid:
    """Self-attention across all views' spatial tokens, independently per
    temporal index: (N, T, h, w, c) is inflated to (T, N*h*w, c), attended,
    and deflated back. Output shape equals input shape; with N=1 this is
    plain per-frame spatial self-attention."""
    values = grids.values()
    n, _, h, w, _ = values.shape
    dtype = next(layer.parameters()).dtype
    operand = torch.from_numpy(inflate_views(values)).to(dtype)
    with torch.no_grad():
        attended = layer(operand).numpy().astype(np.float64)
    out = deflate_views(attended, n, h, w)
    dims = grids.grids[0].dims
    return MultiViewGrid(
        grids=tuple(TokenGrid(values=out[v], dims=dims) for v in range(n)),
        rays=grids.rays,
    )


def denoise_step(
    model: JointDenoiser,
    grids: MultiViewGrid,
    timestep: float,
    label: int,
) -> np.ndarray:
    """Full forward pass on a single multi-view grid; returns the predicted
    velocity as an (N, T, h, w, c) array (condition slots included, callers
    ignore them)."""
    if not 0.0 <= timestep <= 1.0:
        raise ValidationError("timestep must lie in [0, 1]")
    dtype = next(model.parameters()).dtype
    values = torch.from_numpy(grids.values()).to(dtype)[None]
    rays = torch.from_numpy(grids.ray_values()).to(dtype)
    t = torch.tensor([timestep], dtype=dtype)
    lab = torch.tensor([label], dtype=torch.long)
    with torch.no_grad():
        out = model(values, t, lab, rays)
    return out[0].numpy()
