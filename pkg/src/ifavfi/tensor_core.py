"""Dense NCHW tensor kernels with reverse-mode gradients.

Tensors are ``torch.Tensor`` in float32; autograd provides the recorded tape.
The wrappers here pin down the conventions the rest of the package relies on
(channel-wise linear layers, half-pixel bilinear sampling, masked softmax) and
check shapes up front so errors name both operands.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

Tensor = torch.Tensor
Parameter = torch.nn.Parameter

DTYPE = torch.float32
LEAKY_SLOPE = 0.1


class SeededRng:
    """PCG64 stream; identical seeds give identical draws on every platform."""

    def __init__(self, seed: int) -> None:
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low: float, high: float, shape: Sequence[int]) -> Tensor:
        draw = self._gen.uniform(low, high, size=tuple(shape)).astype(np.float32)
        return torch.from_numpy(draw)

    def normal(self, shape: Sequence[int], scale: float = 1.0) -> Tensor:
        draw = self._gen.normal(0.0, scale, size=tuple(shape)).astype(np.float32)
        return torch.from_numpy(draw)

    def integers(self, low: int, high: int, size: int) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def choice(self, n: int, k: int) -> np.ndarray:
        return self._gen.choice(n, size=k, replace=False)


def new_parameter(shape: Sequence[int], fill: float = 0.0) -> Parameter:
    """Parameter with a zero-filled gradient buffer of the same shape."""
    p = Parameter(torch.full(tuple(shape), fill, dtype=DTYPE))
    p.grad = torch.zeros_like(p)
    return p


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        if p.grad is None:
            p.grad = torch.zeros_like(p)
        else:
            p.grad.zero_()


no_grad = torch.no_grad


def _require_4d(x: Tensor, what: str) -> None:
    if x.dim() != 4:
        raise ValueError(f"{what} must be 4-D (n, c, h, w), got shape {tuple(x.shape)}")


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
    groups: int = 1,
) -> Tensor:
    """Cross-correlation with zero padding, bias added per output channel."""
    _require_4d(x, "conv2d input")
    if weight.dim() != 4:
        raise ValueError(f"conv2d weight must be 4-D, got shape {tuple(weight.shape)}")
    if stride < 1 or dilation < 1:
        raise ValueError(f"stride and dilation must be >= 1, got {stride}, {dilation}")
    c_in = x.shape[1]
    if c_in % groups or weight.shape[0] % groups or weight.shape[1] * groups != c_in:
        raise ValueError(
            f"conv2d shape mismatch: input {tuple(x.shape)} vs weight "
            f"{tuple(weight.shape)} with groups={groups}"
        )
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(
            f"conv2d bias shape {tuple(bias.shape)} does not match weight {tuple(weight.shape)}"
        )
    return F.conv2d(x, weight, bias, stride=stride, padding=padding, dilation=dilation, groups=groups)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-position matrix-vector product.

    For 4-D input the features are the channel axis; otherwise the last axis.
    ``weight`` is (out, in).
    """
    feat_dim = 1 if x.dim() == 4 else x.dim() - 1
    if weight.dim() != 2 or x.shape[feat_dim] != weight.shape[1]:
        raise ValueError(
            f"linear shape mismatch: input {tuple(x.shape)} (features on axis {feat_dim}) "
            f"vs weight {tuple(weight.shape)}"
        )
    if x.dim() == 4:
        out = torch.einsum("nchw,oc->nohw", x, weight)
        if bias is not None:
            out = out + bias.view(1, -1, 1, 1)
        return out
    return F.linear(x, weight, bias)


def softmax_lastdim(x: Tensor, mask: Tensor | None = None) -> Tensor:
    """Max-subtracted softmax over the last axis.

    ``mask`` (broadcastable bool, True = keep) zeroes entries exactly. Each row
    must keep at least one entry.
    """
    if x.shape[-1] < 1:
        raise ValueError("softmax over an empty axis")
    if mask is not None:
        x = x.masked_fill(~mask, float("-inf"))
    x = x - x.amax(dim=-1, keepdim=True).detach()
    e = torch.exp(x)
    return e / e.sum(dim=-1, keepdim=True)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over channels at each spatial position, then affine per channel."""
    _require_4d(x, "layer_norm input")
    mean = x.mean(dim=1, keepdim=True)
    var = ((x - mean) ** 2).mean(dim=1, keepdim=True)
    y = (x - mean) / torch.sqrt(var + eps)
    return y * gamma.view(1, -1, 1, 1) + beta.view(1, -1, 1, 1)


def activation(x: Tensor, kind: str = "leaky_relu") -> Tensor:
    if kind == "leaky_relu":
        return F.leaky_relu(x, LEAKY_SLOPE)
    if kind == "gelu":
        return F.gelu(x)
    raise ValueError(f"unknown activation {kind!r}")


def _axis_taps(n_in: int, n_out: int, align_corners: bool, dtype: torch.dtype) -> tuple[Tensor, Tensor, Tensor]:
    """Lower/upper source indices and fractional weights along one axis."""
    i = torch.arange(n_out, dtype=torch.float64)
    if align_corners:
        src = i * ((n_in - 1) / (n_out - 1)) if n_out > 1 else torch.zeros_like(i)
    else:
        src = (i + 0.5) * (n_in / n_out) - 0.5
    src = src.clamp(0.0, n_in - 1)
    lo = src.floor().long()
    hi = (lo + 1).clamp(max=n_in - 1)
    frac = (src - lo.to(torch.float64)).to(dtype)
    return lo, hi, frac


def bilinear_resize(x: Tensor, out_h: int, out_w: int, align_corners: bool = False) -> Tensor:
    """Separable bilinear resampling in lerp form (constants map to themselves exactly)."""
    _require_4d(x, "bilinear_resize input")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got {out_h}x{out_w}")
    h, w = x.shape[-2:]
    if (h, w) == (out_h, out_w):
        return x
    lo, hi, fy = _axis_taps(h, out_h, align_corners, x.dtype)
    top, bot = x[:, :, lo, :], x[:, :, hi, :]
    rows = top + fy.view(1, 1, -1, 1) * (bot - top)
    lo, hi, fx = _axis_taps(w, out_w, align_corners, x.dtype)
    left, right = rows[:, :, :, lo], rows[:, :, :, hi]
    return left + fx.view(1, 1, 1, -1) * (right - left)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """(n, c*r*r, h, w) -> (n, c, h*r, w*r); channel c*r*r + dy*r + dx lands at (y*r+dy, x*r+dx)."""
    _require_4d(x, "pixel_shuffle input")
    if x.shape[1] % (r * r):
        raise ValueError(f"pixel_shuffle: {x.shape[1]} channels not divisible by r^2={r * r}")
    return F.pixel_shuffle(x, r)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    _require_4d(x, "pixel_unshuffle input")
    return F.pixel_unshuffle(x, r)


def concat_channels(inputs: Sequence[Tensor]) -> Tensor:
    if not inputs:
        raise ValueError("concat_channels needs at least one tensor")
    n, _, h, w = inputs[0].shape
    for t in inputs:
        _require_4d(t, "concat_channels input")
        if (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise ValueError(
                f"concat_channels spatial mismatch: {tuple(inputs[0].shape)} vs {tuple(t.shape)}"
            )
    if len(inputs) == 1:
        return inputs[0]
    return torch.cat(list(inputs), dim=1)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into every reachable parameter's ``.grad``."""
    if loss.numel() != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    if loss.grad_fn is None:
        raise RuntimeError("backward called on a tensor that was not produced by a recorded graph")
    loss.backward()


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Parameter],
    eps: float = 1e-3,
    coords_per_param: int = 32,
    seed: int = 0,
) -> float:
    """Max relative error between autograd and central differences.

    Samples ``coords_per_param`` coordinates of each parameter (all of them if
    smaller). The relative error uses ``max(|analytic|, |numeric|, 1e-6)`` as
    denominator.
    """
    params = list(params)
    saved = [p.grad for p in params]
    for p in params:
        p.grad = torch.zeros_like(p)
    with torch.enable_grad():
        backward(f())
    analytic = [p.grad.detach().clone() for p in params]

    rng = SeededRng(seed)
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, analytic):
            flat = p.data.view(-1)
            gflat = g.view(-1)
            k = min(coords_per_param, flat.numel())
            for idx in rng.choice(flat.numel(), k):
                orig = flat[idx].item()
                flat[idx] = orig + eps
                up = f().item()
                flat[idx] = orig - eps
                down = f().item()
                flat[idx] = orig
                numeric = (up - down) / (2.0 * eps)
                a = gflat[idx].item()
                denom = max(abs(a), abs(numeric), 1e-6)
                worst = max(worst, abs(a - numeric) / denom)
    for p, g in zip(params, saved):
        p.grad = g
    return worst


@contextlib.contextmanager
def deterministic(threads: int | None = None):
    """Pin torch to deterministic kernels and an optional thread count."""
    prev_threads = torch.get_num_threads()
    prev_det = torch.are_deterministic_algorithms_enabled()
    if threads is not None:
        torch.set_num_threads(max(1, int(threads)))
    torch.use_deterministic_algorithms(True)
    try:
        yield
    finally:
        torch.set_num_threads(prev_threads)
        torch.use_deterministic_algorithms(prev_det)


def fan_in_bound(shape: Sequence[int]) -> float:
    """``1/sqrt(fan_in)`` for a (out, in, ...) weight."""
    fan_in = int(np.prod(shape[1:]))
    return 1.0 / math.sqrt(fan_in)
