"""Flow/mask estimation, backward warping, fusion, refinement, and the
end-to-end interpolator."""

from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

from . import tensor_core as tc
from .backbone import (
    CrossScaleEmbed,
    LowLevelExtractor,
    LowLevelPyramid,
    ModelConfig,
    MotionAppearanceExtractor,
    StageFeatures,
)
from .layers import Conv, init_weights

PAD_MULTIPLE = 16


def backward_warp(image: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Sample ``image`` at ``p + flow(p)`` (pixel units) bilinearly; zeros outside."""
    n, c, h, w = image.shape
    if flow.shape != (n, 2, h, w):
        raise ValueError(f"flow shape {tuple(flow.shape)} does not match image {tuple(image.shape)}")
    ys = torch.arange(h, dtype=image.dtype).view(1, h, 1)
    xs = torch.arange(w, dtype=image.dtype).view(1, 1, w)
    px = xs + flow[:, 0]
    py = ys + flow[:, 1]
    x0 = torch.floor(px).detach()
    y0 = torch.floor(py).detach()
    fx = (px - x0).unsqueeze(1)
    fy = (py - y0).unsqueeze(1)
    x0 = x0.long()
    y0 = y0.long()
    flat = image.reshape(n, c, h * w)

    def tap(yi: torch.Tensor, xi: torch.Tensor) -> torch.Tensor:
        inside = ((xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)).unsqueeze(1)
        idx = (yi.clamp(0, h - 1) * w + xi.clamp(0, w - 1)).view(n, 1, h * w).expand(n, c, h * w)
        vals = torch.gather(flat, 2, idx).view(n, c, h, w)
        return torch.where(inside, vals, torch.zeros((), dtype=vals.dtype))

    v00, v01 = tap(y0, x0), tap(y0, x0 + 1)
    v10, v11 = tap(y0 + 1, x0), tap(y0 + 1, x0 + 1)
    top = v00 + fx * (v01 - v00)
    bottom = v10 + fx * (v11 - v10)
    return top + fy * (bottom - top)


class FlowState(NamedTuple):
    """Bidirectional flow (t->0 xy, t->1 xy) in pixels plus fusion-mask logits."""

    flow: torch.Tensor
    mask_logits: torch.Tensor

    @classmethod
    def zeros(cls, n: int, h: int, w: int, dtype: torch.dtype = tc.DTYPE) -> "FlowState":
        return cls(torch.zeros(n, 4, h, w, dtype=dtype), torch.zeros(n, 1, h, w, dtype=dtype))

    @property
    def mask(self) -> torch.Tensor:
        return torch.sigmoid(self.mask_logits)

    def __add__(self, other):  # type: ignore[override]
        return FlowState(self.flow + other.flow, self.mask_logits + other.mask_logits)


class WarpResult(NamedTuple):
    warped0: torch.Tensor
    warped1: torch.Tensor
    fused: torch.Tensor
    mask: torch.Tensor


def fuse_warped(i0: torch.Tensor, i1: torch.Tensor, state: FlowState) -> WarpResult:
    w0 = backward_warp(i0, state.flow[:, 0:2])
    w1 = backward_warp(i1, state.flow[:, 2:4])
    o = state.mask
    return WarpResult(w0, w1, o * w0 + (1 - o) * w1, o)


def resize_flow(flow: torch.Tensor, h: int, w: int) -> torch.Tensor:
    """Bilinear resize with vectors rescaled to the new pixel grid."""
    sy = h / flow.shape[-2]
    sx = w / flow.shape[-1]
    out = tc.bilinear_resize(flow, h, w)
    scale = torch.tensor([sx, sy] * (flow.shape[1] // 2), dtype=flow.dtype).view(1, -1, 1, 1)
    return out * scale


def scale_motion_features(stage: StageFeatures, t: float) -> tuple[torch.Tensor, torch.Tensor]:
    """t * features(0->1) and (1 - t) * features(1->0)."""
    return stage.motion_feat01 * t, stage.motion_feat10 * (1.0 - t)


class MotionHead(nn.Module):
    """Three 3x3 convs producing a 5-channel (4 flow + 1 mask logit) residual."""

    def __init__(self, c_in: int) -> None:
        super().__init__()
        c1, c2 = 2 * c_in // 3, c_in // 3
        self.conv1 = Conv(c_in, c1)
        self.conv2 = Conv(c1, c2)
        self.conv3 = Conv(c2, 5, act=None)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv3(self.conv2(self.conv1(x)))


def head_inputs(
    stage: StageFeatures, t: float, prev: FlowState, i0: torch.Tensor, i1: torch.Tensor
) -> tuple[torch.Tensor, int]:
    """Build the working-scale head input; returns it with the downscale factor."""
    m0t, m1t = scale_motion_features(stage, t)
    feats = tc.concat_channels([m0t, stage.a0, m1t, stage.a1])
    feats = tc.pixel_shuffle(tc.pixel_shuffle(feats, 2), 2)
    hw, ww = feats.shape[-2:]
    factor = i0.shape[-1] // ww
    flow_w = resize_flow(prev.flow, hw, ww)
    warped0 = backward_warp(tc.bilinear_resize(i0, hw, ww), flow_w[:, 0:2])
    warped1 = backward_warp(tc.bilinear_resize(i1, hw, ww), flow_w[:, 2:4])
    mask_w = tc.bilinear_resize(prev.mask_logits, hw, ww)
    return tc.concat_channels([feats, warped0, warped1, flow_w, mask_w]), factor


def estimate_motion_stage(
    stage: StageFeatures, t: float, prev: FlowState, i0: torch.Tensor, i1: torch.Tensor, head: MotionHead
) -> tuple[FlowState, FlowState]:
    """Returns (updated state, full-resolution residual)."""
    x, _ = head_inputs(stage, t, prev, i0, i1)
    res = head(x)
    h, w = i0.shape[-2:]
    residual = FlowState(resize_flow(res[:, :4], h, w), tc.bilinear_resize(res[:, 4:5], h, w))
    return prev + residual, residual


class RefineNet(nn.Module):
    """Three stride-2 encoder stages and three pixel-shuffle decoder stages.

    Encoder inputs take the low-level features of both frames at their scale;
    the two deepest levels also take the stage-1 / stage-2 appearance features.
    """

    def __init__(self, C: int) -> None:
        super().__init__()
        self.enc1 = Conv(3 + 2 * C, 2 * C, stride=2)
        self.enc2 = Conv(2 * C + 4 * C, 4 * C, stride=2)
        self.enc3 = Conv(4 * C + 8 * C + 16 * C, 8 * C, stride=2)
        self.dec3 = Conv(8 * C + 32 * C, 4 * 4 * C)
        self.dec2 = Conv(4 * C + 4 * C, 4 * 2 * C)
        self.dec1 = Conv(2 * C + 2 * C, 4 * C)
        self.out = Conv(C + 3, 3, act=None)

    def forward(
        self,
        fused: torch.Tensor,
        pyr0: LowLevelPyramid,
        pyr1: LowLevelPyramid,
        stage1: StageFeatures,
        stage2: StageFeatures,
    ) -> torch.Tensor:
        cat = tc.concat_channels
        e1 = self.enc1(cat([fused, pyr0.L0, pyr1.L0]))
        e2 = self.enc2(cat([e1, pyr0.L1, pyr1.L1]))
        h4, w4 = e2.shape[-2:]
        a_s1 = [tc.bilinear_resize(a, h4, w4) for a in (stage1.a0, stage1.a1)]
        e3 = self.enc3(cat([e2, pyr0.L2, pyr1.L2, *a_s1]))
        h8, w8 = e3.shape[-2:]
        a_s2 = [tc.bilinear_resize(a, h8, w8) for a in (stage2.a0, stage2.a1)]
        d3 = tc.pixel_shuffle(self.dec3(cat([e3, *a_s2])), 2)
        d2 = tc.pixel_shuffle(self.dec2(cat([d3, e2])), 2)
        d1 = tc.pixel_shuffle(self.dec1(cat([d2, e1])), 2)
        return self.out(cat([d1, fused]))


def refine(
    fused: torch.Tensor,
    pyr0: LowLevelPyramid,
    pyr1: LowLevelPyramid,
    stage1: StageFeatures,
    stage2: StageFeatures,
    net: RefineNet,
) -> torch.Tensor:
    return fused + net(fused, pyr0, pyr1, stage1, stage2)


class Features(NamedTuple):
    """Everything upstream of the timestep; reusable across t."""

    pyr0: LowLevelPyramid
    pyr1: LowLevelPyramid
    stage1: StageFeatures
    stage2: StageFeatures


class Synthesis(NamedTuple):
    image: torch.Tensor
    fused: torch.Tensor
    state: FlowState
    stage_fused: list  # fused frame after each estimation stage, coarse first
    residuals: list


class FrameInterpolator(nn.Module):
    def __init__(self, cfg: ModelConfig, seed: int | None = 0) -> None:
        super().__init__()
        C = cfg.C
        self.cfg = cfg
        self.lowlevel = LowLevelExtractor(C)
        self.embed = CrossScaleEmbed(C)
        self.extractor = MotionAppearanceExtractor(cfg)
        # stage-2 (coarse, H/16) head runs first, then stage-1 (H/8)
        self.head2 = MotionHead(4 * C + 11)
        self.head1 = MotionHead(2 * C + 11)
        self.refine = RefineNet(C)
        if seed is not None:
            init_weights(self, seed)

    def extract(self, i0: torch.Tensor, i1: torch.Tensor) -> Features:
        pyr0, pyr1 = self.lowlevel(i0), self.lowlevel(i1)
        s1, s2 = self.extractor(self.embed(pyr0), self.embed(pyr1))
        return Features(pyr0, pyr1, s1, s2)

    def synthesize(self, feats: Features, i0: torch.Tensor, i1: torch.Tensor, t: float) -> Synthesis:
        n, _, h, w = i0.shape
        state = FlowState.zeros(n, h, w, i0.dtype)
        stage_fused, residuals = [], []
        for stage, head in ((feats.stage2, self.head2), (feats.stage1, self.head1)):
            state, res = estimate_motion_stage(stage, t, state, i0, i1, head)
            residuals.append(res)
            stage_fused.append(fuse_warped(i0, i1, state).fused)
        fused = stage_fused[-1]
        image = refine(fused, feats.pyr0, feats.pyr1, feats.stage1, feats.stage2, self.refine)
        return Synthesis(image, fused, state, stage_fused, residuals)

    def forward(self, i0: torch.Tensor, i1: torch.Tensor, t: float) -> Synthesis:
        return self.synthesize(self.extract(i0, i1), i0, i1, t)


class FeatureCache:
    """Holds extractor outputs for one frame pair so several t reuse them."""

    def __init__(self) -> None:
        self._key: tuple[torch.Tensor, torch.Tensor] | None = None
        self.features: Features | None = None
        self.hits = 0

    def get(self, model: FrameInterpolator, i0: torch.Tensor, i1: torch.Tensor) -> Features:
        if (
            self._key is not None
            and self._key[0].shape == i0.shape
            and torch.equal(self._key[0], i0)
            and torch.equal(self._key[1], i1)
        ):
            self.hits += 1
            return self.features
        self._key = (i0.clone(), i1.clone())
        self.features = model.extract(i0, i1)
        return self.features


class Diagnostics(NamedTuple):
    flow: torch.Tensor
    mask: torch.Tensor
    fused: torch.Tensor


def pad_to_multiple(x: torch.Tensor, multiple: int = PAD_MULTIPLE) -> torch.Tensor:
    h, w = x.shape[-2:]
    ph, pw = -h % multiple, -w % multiple
    if ph == 0 and pw == 0:
        return x
    return F.pad(x, (0, pw, 0, ph), mode="replicate")


def interpolate(
    i0: torch.Tensor,
    i1: torch.Tensor,
    t: float,
    model: FrameInterpolator,
    cache: FeatureCache | None = None,
) -> tuple[torch.Tensor, Diagnostics]:
    """Synthesize the frame at ``t`` in (0, 1); inputs are (n, 3, H, W) in [0, 1]."""
    if not 0.0 < t < 1.0:
        raise ValueError(f"timestep must lie strictly inside (0, 1), got {t}")
    if i0.shape != i1.shape or i0.dim() != 4 or i0.shape[1] != 3:
        raise ValueError(f"frames must share a (n, 3, H, W) shape, got {tuple(i0.shape)} and {tuple(i1.shape)}")
    h, w = i0.shape[-2:]
    p0, p1 = pad_to_multiple(i0), pad_to_multiple(i1)
    feats = cache.get(model, p0, p1) if cache is not None else model.extract(p0, p1)
    out = model.synthesize(feats, p0, p1, t)
    crop = (..., slice(0, h), slice(0, w))
    return out.image[crop], Diagnostics(out.state.flow[crop], out.state.mask[crop], out.fused[crop])
