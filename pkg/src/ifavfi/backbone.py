"""Low-level CNN pyramid, cross-scale dilated embedding, and the two-stage
motion-appearance Transformer extractor."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch
from torch import nn

from . import tensor_core as tc
from .attention import AttentionConfig, TransformerBlock
from .layers import Conv, Linear

VARIANTS = {
    "tiny": dict(C=8, N1=1, N2=1),
    "small": dict(C=16, N1=2, N2=2),
    "large": dict(C=32, N1=4, N2=4),
}


@dataclass(frozen=True)
class ModelConfig:
    C: int = 16
    N1: int = 2
    N2: int = 2
    window_size: int = 7
    variant: str = "small"

    @classmethod
    def named(cls, variant: str, window_size: int = 7) -> "ModelConfig":
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
        return cls(window_size=window_size, variant=variant, **VARIANTS[variant])


class LowLevelPyramid(NamedTuple):
    L0: torch.Tensor
    L1: torch.Tensor
    L2: torch.Tensor


class StageFeatures(NamedTuple):
    """Per-stage outputs for both frames; motion features are per direction."""

    a0: torch.Tensor
    a1: torch.Tensor
    motion_feat01: torch.Tensor
    motion_feat10: torch.Tensor
    motion01: torch.Tensor
    motion10: torch.Tensor


class LowLevelExtractor(nn.Module):
    def __init__(self, C: int) -> None:
        super().__init__()
        self.s0 = nn.Sequential(Conv(3, C), Conv(C, C))
        self.s1 = nn.Sequential(Conv(C, 2 * C, stride=2), Conv(2 * C, 2 * C))
        self.s2 = nn.Sequential(Conv(2 * C, 4 * C, stride=2), Conv(4 * C, 4 * C))

    def forward(self, image: torch.Tensor) -> LowLevelPyramid:
        h, w = image.shape[-2:]
        if h % 16 or w % 16:
            raise ValueError(f"image size {h}x{w} must be divisible by 16; pad the input first")
        l0 = self.s0(image)
        l1 = self.s1(l0)
        return LowLevelPyramid(l0, l1, self.s2(l1))


def low_level_extract(image: torch.Tensor, extractor: LowLevelExtractor) -> LowLevelPyramid:
    return extractor(image)


# scale k -> (stride, dilations); three branches for the finest map, one for the coarsest
EMBED_BRANCHES = {0: (8, (1, 2, 4)), 1: (4, (1, 2)), 2: (2, (1,))}


class CrossScaleEmbed(nn.Module):
    def __init__(self, C: int, branch_channels: int | None = None) -> None:
        super().__init__()
        bc = branch_channels or 2 * C
        self.branches = nn.ModuleList()
        self.scale_of_branch = []
        for k, (stride, dilations) in EMBED_BRANCHES.items():
            for d in dilations:
                self.branches.append(Conv((2**k) * C, bc, 3, stride=stride, dilation=d))
                self.scale_of_branch.append(k)
        self.fuse = Linear(bc * len(self.branches), 8 * C)

    def branch_outputs(self, pyr: LowLevelPyramid) -> list[torch.Tensor]:
        return [conv(pyr[k]) for conv, k in zip(self.branches, self.scale_of_branch)]

    def forward(self, pyr: LowLevelPyramid) -> torch.Tensor:
        return self.fuse(tc.concat_channels(self.branch_outputs(pyr)))


def cross_scale_embed(pyr: LowLevelPyramid, embed: CrossScaleEmbed) -> torch.Tensor:
    return embed(pyr)


class MotionAppearanceExtractor(nn.Module):
    """Stage 1: N1 blocks at 8C; stride-2 conv to 16C; stage 2: N2 blocks."""

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        c1, c2 = 8 * cfg.C, 16 * cfg.C
        self.stage1 = nn.ModuleList(
            TransformerBlock(AttentionConfig(c1, window_size=cfg.window_size, shifted=i % 2 == 1))
            for i in range(cfg.N1)
        )
        self.down = Conv(c1, c2, 3, stride=2)
        self.stage2 = nn.ModuleList(
            TransformerBlock(AttentionConfig(c2, window_size=cfg.window_size, shifted=i % 2 == 1))
            for i in range(cfg.N2)
        )

    @staticmethod
    def _run(blocks: nn.ModuleList, a0: torch.Tensor, a1: torch.Tensor) -> StageFeatures:
        out = None
        for blk in blocks:
            out = blk(a0, a1)
            a0, a1 = out.a0, out.a1
        return StageFeatures(*out)

    def forward(self, c0: torch.Tensor, c1: torch.Tensor) -> tuple[StageFeatures, StageFeatures]:
        s1 = self._run(self.stage1, c0, c1)
        s2 = self._run(self.stage2, self.down(s1.a0), self.down(s1.a1))
        return s1, s2


def motion_appearance_extract(
    c0: torch.Tensor, c1: torch.Tensor, extractor: MotionAppearanceExtractor
) -> tuple[StageFeatures, StageFeatures]:
    return extractor(c0, c1)
