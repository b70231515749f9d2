"""Laplacian-pyramid losses, AdamW with warmup + cosine schedule, and the
single-triplet overfit loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import torch

from . import tensor_core as tc
from .synthesis import FrameInterpolator

WARP_WEIGHT = 0.5
PYRAMID_LEVELS = 5
_GAUSS_1D = torch.tensor([1.0, 4.0, 6.0, 4.0, 1.0], dtype=tc.DTYPE) / 16.0


def _reflect_index(n: int, pad: int) -> torch.Tensor:
    """Mirror (edge not repeated) source indices for ``pad`` cells each side."""
    idx = torch.arange(-pad, n + pad)
    if n == 1:
        return torch.zeros_like(idx)
    period = 2 * (n - 1)
    idx = idx.remainder(period)
    return torch.where(idx >= n, period - idx, idx)


def gaussian_blur(x: torch.Tensor) -> torch.Tensor:
    """Separable (1, 4, 6, 4, 1) / 16 blur with reflect borders."""
    n, c, h, w = x.shape
    x = x[:, :, _reflect_index(h, 2), :]
    x = x[:, :, :, _reflect_index(w, 2)]
    k = _GAUSS_1D.to(x.dtype)
    x = tc.conv2d(x.reshape(n * c, 1, h + 4, w + 4), k.view(1, 1, 5, 1))
    x = tc.conv2d(x, k.view(1, 1, 1, 5))
    return x.view(n, c, h, w)


def pyr_down(x: torch.Tensor) -> torch.Tensor:
    return gaussian_blur(x)[:, :, ::2, ::2]


def pyr_up(x: torch.Tensor, h: int, w: int) -> torch.Tensor:
    """Zero-insert upsample then blur (gain 4), cropped to (h, w)."""
    n, c, hs, ws = x.shape
    up = x.new_zeros(n, c, 2 * hs, 2 * ws)
    up[:, :, ::2, ::2] = x * 4.0
    return gaussian_blur(up)[:, :, :h, :w]


def laplacian_pyramid(image: torch.Tensor, levels: int = PYRAMID_LEVELS) -> list[torch.Tensor]:
    """``levels - 1`` band-pass images (finest first) and the low-pass residual."""
    h, w = image.shape[-2:]
    if min(h, w) < 2 ** (levels - 1):
        raise ValueError(f"image {h}x{w} too small for a {levels}-level pyramid")
    bands = []
    cur = image
    for _ in range(levels - 1):
        down = pyr_down(cur)
        bands.append(cur - pyr_up(down, *cur.shape[-2:]))
        cur = down
    bands.append(cur)
    return bands


def collapse_pyramid(pyr: Sequence[torch.Tensor]) -> torch.Tensor:
    cur = pyr[-1]
    for band in reversed(pyr[:-1]):
        cur = band + pyr_up(cur, *band.shape[-2:])
    return cur


def laplacian_loss(a: torch.Tensor, b: torch.Tensor, levels: int = PYRAMID_LEVELS) -> torch.Tensor:
    """Sum over levels of 2**level * mean |pyr(a) - pyr(b)|, finest level first."""
    if a.shape != b.shape:
        raise ValueError(f"laplacian_loss shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    pa = laplacian_pyramid(a, levels)
    pb = laplacian_pyramid(b, levels)
    return sum((2.0**i) * (x - y).abs().mean() for i, (x, y) in enumerate(zip(pa, pb)))


class LossReport(NamedTuple):
    warp_losses: list
    rec_loss: torch.Tensor
    total: torch.Tensor
    weight: float = WARP_WEIGHT


def combine_losses(rec: torch.Tensor, warps: Sequence[torch.Tensor], weight: float = WARP_WEIGHT) -> torch.Tensor:
    warp_sum = warps[0]
    for w in warps[1:]:
        warp_sum = warp_sum + w
    return rec + weight * warp_sum


def total_loss(
    stage_fused: Sequence[torch.Tensor], final: torch.Tensor, gt: torch.Tensor, weight: float = WARP_WEIGHT
) -> LossReport:
    warps = [laplacian_loss(f, gt) for f in stage_fused]
    rec = laplacian_loss(final, gt)
    return LossReport(warps, rec, combine_losses(rec, warps, weight), weight)


def lr_at(step: int, peak: float, warmup: int, total: int, floor: float) -> float:
    """Linear warmup from 0 to ``peak``, then cosine down to ``floor`` at ``total``."""
    if warmup > 0 and step < warmup:
        return peak * step / warmup
    span = max(total - warmup, 1)
    progress = min(max(step - warmup, 0) / span, 1.0)
    return floor + 0.5 * (peak - floor) * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimizerState:
    """AdamW (decoupled weight decay) with schedule bookkeeping.

    Moments live in the wrapped ``torch.optim.AdamW``.
    """

    params: list
    peak_lr: float = 2e-4
    floor_lr: float = 2e-5
    warmup: int = 2000
    total_steps: int = 10000
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 1e-4
    eps: float = 1e-8
    step: int = 0
    lr_history: list = field(default_factory=list)

    def __post_init__(self) -> None:
        self.params = list(self.params)
        self.opt = torch.optim.AdamW(
            self.params, lr=0.0, betas=self.betas, weight_decay=self.weight_decay, eps=self.eps
        )

    def current_lr(self) -> float:
        return lr_at(self.step, self.peak_lr, self.warmup, self.total_steps, self.floor_lr)

    def moments(self, p: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor] | None:
        st = self.opt.state.get(p)
        if not st:
            return None
        return st["exp_avg"], st["exp_avg_sq"]


def optimizer_step(state: OptimizerState) -> float:
    """One AdamW update at the scheduled lr; returns the lr used."""
    lr = state.current_lr()
    for group in state.opt.param_groups:
        group["lr"] = lr
    state.opt.step()
    state.lr_history.append(lr)
    state.step += 1
    return lr


class Triplet(NamedTuple):
    i0: torch.Tensor
    gt: torch.Tensor
    i1: torch.Tensor
    t: float


class CurveRow(NamedTuple):
    step: int
    total: float
    rec: float
    warp1: float
    warp2: float


def train_overfit(
    model: FrameInterpolator,
    triplets: Triplet | Iterable[Triplet],
    steps: int,
    peak_lr: float = 2e-4,
    warmup: int = 20,
    floor_lr: float | None = None,
    weight_decay: float = 1e-4,
) -> list[CurveRow]:
    """Forward, loss, backward, AdamW for ``steps`` iterations.

    Several triplets are cycled one per step. Raises ``FloatingPointError``
    with the step index if the loss stops being finite.
    """
    if isinstance(triplets, Triplet):
        triplets = [triplets]
    triplets = list(triplets)
    opt = OptimizerState(
        model.parameters(),
        peak_lr=peak_lr,
        floor_lr=peak_lr / 10 if floor_lr is None else floor_lr,
        warmup=warmup,
        total_steps=steps,
        weight_decay=weight_decay,
    )
    params = opt.params
    curve: list[CurveRow] = []
    model.train()
    for step in range(steps):
        trip = triplets[step % len(triplets)]
        tc.zero_grad(params)
        out = model(trip.i0, trip.i1, trip.t)
        report = total_loss(out.stage_fused, out.image, trip.gt)
        total = report.total.item()
        if not math.isfinite(total):
            raise FloatingPointError(f"non-finite loss {total} at step {step}")
        tc.backward(report.total)
        optimizer_step(opt)
        warps = [w.item() for w in report.warp_losses]
        curve.append(CurveRow(step, total, report.rec_loss.item(), *warps))
    model.eval()
    return curve
