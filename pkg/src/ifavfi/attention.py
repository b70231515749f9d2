"""Windowed inter-frame attention and the Transformer block that hosts it.

One softmax per direction feeds two readouts: the value aggregation that
enhances appearance, and the attention-weighted coordinate offset that gives
a motion vector per query. Windows follow the shifted-window layout: the
plane is cut into N x N tiles, optionally offset by N // 2, and a query only
sees keys of the other frame that lie in its own tile and inside the frame.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import NamedTuple

import torch
from torch import nn

from . import tensor_core as tc
from .layers import Conv, LayerNorm2d, Linear

HEAD_DIM = 16


@dataclass(frozen=True)
class AttentionConfig:
    channels: int
    num_heads: int | None = None
    window_size: int = 7
    shifted: bool = False

    def __post_init__(self) -> None:
        if self.num_heads is None:
            object.__setattr__(self, "num_heads", max(1, self.channels // HEAD_DIM))
        if self.channels % self.num_heads:
            raise ValueError(f"channels {self.channels} not divisible by heads {self.num_heads}")
        if self.window_size < 3 or self.window_size % 2 == 0:
            raise ValueError(f"window size must be odd and >= 3, got {self.window_size}")

    @property
    def head_dim(self) -> int:
        return self.channels // self.num_heads

    @property
    def shift(self) -> int:
        return self.window_size // 2 if self.shifted else 0


def build_coordinate_map(h: int, w: int) -> torch.Tensor:
    """(1, 2, h, w) grid: channel 0 is x, channel 1 is y, both spanning [-1, 1]."""
    if h < 1 or w < 1:
        raise ValueError(f"coordinate map needs positive size, got {h}x{w}")
    ys = torch.linspace(-1.0, 1.0, h) if h > 1 else torch.zeros(1)
    xs = torch.linspace(-1.0, 1.0, w) if w > 1 else torch.zeros(1)
    grid_y, grid_x = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([grid_x, grid_y]).unsqueeze(0).to(tc.DTYPE)


def coordinate_step(n: int) -> float:
    return 2.0 / (n - 1) if n > 1 else 0.0


class WindowLayout(NamedTuple):
    """Index maps for one (h, w, N, shift) tiling.

    ``gather`` picks, for every (window, slot), the source pixel (clamped, so
    padding replicates the border). ``scatter`` is the inverse for in-frame
    pixels. ``rows``/``cols`` hold unclamped source coordinates and ``valid``
    marks slots inside the frame. ``allowed`` is the (window, query, key) mask.
    """

    h: int
    w: int
    window: int
    shift: int
    n_windows: int
    gather: torch.Tensor
    scatter: torch.Tensor
    rows: torch.Tensor
    cols: torch.Tensor
    valid: torch.Tensor
    allowed: torch.Tensor


def _tile_group(coord: torch.Tensor, window: int, shift: int) -> torch.Tensor:
    if shift == 0:
        return coord // window
    return torch.where(coord < shift, torch.zeros_like(coord), 1 + (coord - shift) // window)


@functools.lru_cache(maxsize=64)
def window_layout(h: int, w: int, window: int, shift: int) -> WindowLayout:
    if shift not in (0, window // 2):
        raise ValueError(f"shift must be 0 or {window // 2}, got {shift}")
    hp = -(-h // window) * window
    wp = -(-w // window) * window
    nwy, nwx = hp // window, wp // window
    # rolled position (wy*N + i, wx*N + j) reads padded pixel (+shift) mod padded size
    wy = torch.arange(nwy).view(-1, 1, 1, 1)
    wx = torch.arange(nwx).view(1, -1, 1, 1)
    i = torch.arange(window).view(1, 1, -1, 1)
    j = torch.arange(window).view(1, 1, 1, -1)
    rows = ((wy * window + i + shift) % hp).expand(nwy, nwx, window, window)
    cols = ((wx * window + j + shift) % wp).expand(nwy, nwx, window, window)
    rows = rows.reshape(nwy * nwx, window * window)
    cols = cols.reshape(nwy * nwx, window * window)
    valid = (rows < h) & (cols < w)
    gather = rows.clamp(max=h - 1) * w + cols.clamp(max=w - 1)

    flat_slot = torch.arange(rows.numel()).view_as(rows)
    scatter = torch.empty(h * w, dtype=torch.long)
    scatter[gather[valid]] = flat_slot[valid]

    grp_r = _tile_group(rows, window, shift)
    grp_c = _tile_group(cols, window, shift)
    same = (grp_r[:, :, None] == grp_r[:, None, :]) & (grp_c[:, :, None] == grp_c[:, None, :])
    allowed = same & valid[:, None, :]
    # padded queries are discarded on reverse; let them see every slot so no row is empty
    allowed = allowed | ~valid[:, :, None]
    return WindowLayout(h, w, window, shift, nwy * nwx, gather, scatter, rows, cols, valid, allowed)


def window_partition(x: torch.Tensor, window: int, shift: int = 0) -> tuple[torch.Tensor, WindowLayout]:
    """(n, c, h, w) -> (n, n_windows, N*N, c) plus its layout."""
    n, c, h, w = x.shape
    layout = window_layout(h, w, window, shift)
    flat = x.reshape(n, c, h * w)[:, :, layout.gather.reshape(-1)]
    return flat.view(n, c, layout.n_windows, window * window).permute(0, 2, 3, 1), layout


def window_reverse(windows: torch.Tensor, layout: WindowLayout) -> torch.Tensor:
    """Inverse of :func:`window_partition` on the in-frame region."""
    n, nw, slots, c = windows.shape
    flat = windows.reshape(n, nw * slots, c)[:, layout.scatter, :]
    return flat.permute(0, 2, 1).reshape(n, c, layout.h, layout.w)


def window_offsets(layout: WindowLayout, dtype: torch.dtype = tc.DTYPE) -> torch.Tensor:
    """(n_windows, query, key, 2) normalized offsets B_key - B_query."""
    dx = coordinate_step(layout.w)
    dy = coordinate_step(layout.h)
    ox = (layout.cols[:, None, :] - layout.cols[:, :, None]).to(dtype) * dx
    oy = (layout.rows[:, None, :] - layout.rows[:, :, None]).to(dtype) * dy
    return torch.stack([ox, oy], dim=-1)


class AttentionParams(nn.Module):
    """Shared projections W_Q, W_K, W_V and the output projection."""

    def __init__(self, channels: int) -> None:
        super().__init__()
        self.q = Linear(channels, channels, bias=False)
        self.k = Linear(channels, channels, bias=False)
        self.v = Linear(channels, channels, bias=False)
        self.proj = Linear(channels, channels)


class AttentionMap(NamedTuple):
    weights: torch.Tensor  # (n, n_windows, heads, query, key)
    layout: WindowLayout


def _split_heads(win: torch.Tensor, heads: int) -> torch.Tensor:
    n, nw, slots, c = win.shape
    return win.view(n, nw, slots, heads, c // heads).permute(0, 1, 3, 2, 4)


def attention_map(
    query_feat: torch.Tensor, key_feat: torch.Tensor, cfg: AttentionConfig, params: AttentionParams
) -> tuple[AttentionMap, torch.Tensor]:
    """Softmax(Q K^T / sqrt(head_dim)) per window; also returns windowed values."""
    q_win, layout = window_partition(params.q(query_feat), cfg.window_size, cfg.shift)
    k_win, _ = window_partition(params.k(key_feat), cfg.window_size, cfg.shift)
    v_win, _ = window_partition(params.v(key_feat), cfg.window_size, cfg.shift)
    q = _split_heads(q_win, cfg.num_heads)
    k = _split_heads(k_win, cfg.num_heads)
    logits = (q @ k.transpose(-1, -2)) * cfg.head_dim**-0.5
    weights = tc.softmax_lastdim(logits, layout.allowed[None, :, None])
    return AttentionMap(weights, layout), _split_heads(v_win, cfg.num_heads)


class Attended(NamedTuple):
    update: torch.Tensor  # projected S V, to be added to the query features
    motion: torch.Tensor  # (n, 2, h, w) head-averaged motion vectors
    attn: AttentionMap


def attend(
    query_feat: torch.Tensor, key_feat: torch.Tensor, cfg: AttentionConfig, params: AttentionParams
) -> Attended:
    """One direction of inter-frame attention with the map reused for motion."""
    if query_feat.shape != key_feat.shape:
        raise ValueError(
            f"frame feature shapes differ: {tuple(query_feat.shape)} vs {tuple(key_feat.shape)}"
        )
    amap, v = attention_map(query_feat, key_feat, cfg, params)
    n, nw, heads, slots, hd = v.shape
    agg = (amap.weights @ v).permute(0, 1, 3, 2, 4).reshape(n, nw, slots, heads * hd)
    update = params.proj(window_reverse(agg, amap.layout))

    mean_w = amap.weights.mean(dim=2)
    motion = torch.einsum("nwqk,wqkd->nwqd", mean_w, window_offsets(amap.layout, mean_w.dtype))
    return Attended(update, window_reverse(motion, amap.layout), amap)


def inter_frame_attention(
    a0: torch.Tensor, a1: torch.Tensor, cfg: AttentionConfig, params: AttentionParams
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Returns (enhanced a0, enhanced a1, motion 0->1, motion 1->0)."""
    fwd = attend(a0, a1, cfg, params)
    bwd = attend(a1, a0, cfg, params)
    return a0 + fwd.update, a1 + bwd.update, fwd.motion, bwd.motion


def scale_motion(motion: torch.Tensor, t: float) -> torch.Tensor:
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"timestep must lie in [0, 1], got {t}")
    return motion * t


class BlockOutput(NamedTuple):
    a0: torch.Tensor
    a1: torch.Tensor
    motion_feat01: torch.Tensor
    motion_feat10: torch.Tensor
    motion01: torch.Tensor
    motion10: torch.Tensor


class TransformerBlock(nn.Module):
    """Pre-norm block: x + IFA(norm x), then x + MLP(norm x).

    The MLP carries a depthwise 3x3 conv in place of positional encoding.
    Motion vectors go through a bias-free 2 -> C linear layer, so scaling the
    features by t is the same as scaling the vectors.
    """

    def __init__(self, cfg: AttentionConfig, mlp_ratio: int = 4, motion_channels: int | None = None) -> None:
        super().__init__()
        c = cfg.channels
        hidden = c * mlp_ratio
        self.cfg = cfg
        self.norm1 = LayerNorm2d(c)
        self.attn = AttentionParams(c)
        self.norm2 = LayerNorm2d(c)
        self.fc1 = Linear(c, hidden)
        self.dwconv = Conv(hidden, hidden, 3, groups=hidden, act=None)
        self.fc2 = Linear(hidden, c)
        self.motion = Linear(2, motion_channels or c, bias=False)

    def mlp(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(tc.activation(self.dwconv(self.fc1(x)), "gelu"))

    def forward(self, a0: torch.Tensor, a1: torch.Tensor) -> BlockOutput:
        n0, n1 = self.norm1(a0), self.norm1(a1)
        fwd = attend(n0, n1, self.cfg, self.attn)
        bwd = attend(n1, n0, self.cfg, self.attn)
        a0 = a0 + fwd.update
        a1 = a1 + bwd.update
        a0 = a0 + self.mlp(self.norm2(a0))
        a1 = a1 + self.mlp(self.norm2(a1))
        return BlockOutput(a0, a1, self.motion(fwd.motion), self.motion(bwd.motion), fwd.motion, bwd.motion)
