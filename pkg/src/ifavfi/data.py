"""Synthetic frame pairs with known motion."""

from __future__ import annotations

import torch

from . import tensor_core as tc
from .training import Triplet


def smooth_texture(h: int, w: int, seed: int = 0, octaves: int = 4) -> torch.Tensor:
    """(1, 3, h, w) band-limited random texture in [0, 1]."""
    rng = tc.SeededRng(seed)
    out = torch.zeros(1, 3, h, w)
    amp = 1.0
    for o in range(octaves):
        gh, gw = max(2, h >> (octaves - o)), max(2, w >> (octaves - o))
        coarse = rng.uniform(-1.0, 1.0, (1, 3, gh, gw))
        out = out + amp * tc.bilinear_resize(coarse, h, w, align_corners=True)
        amp *= 0.6
    out = out - out.amin()
    return out / out.amax()


def translation_frames(size: int = 64, shift: int = 4, steps=(0, 4), seed: int = 0) -> list[torch.Tensor]:
    """Crops of one texture with content moved right by ``s`` pixels for each ``s`` in ``steps``."""
    tex = smooth_texture(size, size + shift, seed)
    return [tex[..., shift - s : shift - s + size].contiguous() for s in steps]


def translation_triplet(size: int = 64, shift: int = 4, t: float = 0.5, seed: int = 0) -> Triplet:
    """I_0, ground-truth I_t and I_1 for a uniform rightward translation of ``shift`` pixels.

    ``t * shift`` must be a whole number of pixels so the middle frame is exact.
    """
    mid = t * shift
    if abs(mid - round(mid)) > 1e-9:
        raise ValueError(f"t * shift = {mid} is not an integer pixel offset")
    i0, gt, i1 = translation_frames(size, shift, (0, round(mid), shift), seed)
    return Triplet(i0, gt, i1, t)
