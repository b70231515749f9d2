"""Invariant checks grouped by module, runnable without the test suite."""

from __future__ import annotations

import math
import tempfile
import time
from contextlib import contextmanager, nullcontext
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from . import attention as at
from . import io
from . import metrics as mt
from . import synthesis as sy
from . import tensor_core as tc
from . import training as tr
from .backbone import ModelConfig
from .data import translation_triplet
from .layers import init_weights


def _rand(*shape, seed=0, low=0.0, high=1.0):
    return tc.SeededRng(seed).uniform(low, high, shape)


def _check(cond: bool, what: str) -> None:
    if not cond:
        raise AssertionError(what)


def check_tensor_core() -> None:
    x = _rand(1, 2, 5, 5, seed=1, low=-1)
    w = _rand(3, 2, 3, 3, seed=2, low=-1)
    out = tc.conv2d(x, w, None, padding=1)
    xp = np.pad(x[0].double().numpy(), ((0, 0), (1, 1), (1, 1)))
    ref = np.einsum("oikl,iyxkl->oyx", w.double().numpy(), np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2)))
    _check(np.abs(out[0].numpy() - ref).max() <= 1e-5, "conv2d disagrees with the window-sum reference")
    s = tc.softmax_lastdim(_rand(6, 9, seed=3, low=-5, high=5))
    _check((s.sum(-1) - 1).abs().max() <= 1e-6, "softmax rows do not sum to 1")
    y = _rand(1, 8, 3, 4, seed=4)
    _check(torch.equal(tc.pixel_unshuffle(tc.pixel_shuffle(y, 2), 2), y), "pixel shuffle is not invertible")
    c = torch.full((1, 1, 5, 7), 0.3)
    _check(torch.equal(tc.bilinear_resize(c, 9, 3), torch.full((1, 1, 9, 3), 0.3)), "resize changes a constant")


def check_attention() -> None:
    for seed in range(20):
        cfg = at.AttentionConfig(16, window_size=(3, 5, 7)[seed % 3], shifted=bool(seed % 2))
        p = init_weights(at.AttentionParams(16), seed)
        h, w = 5 + seed % 7, 4 + seed % 9
        a0, a1 = _rand(1, 16, h, w, seed=seed), _rand(1, 16, h, w, seed=seed + 100)
        amap, _ = at.attention_map(a0, a1, cfg, p)
        _check((amap.weights.sum(-1) - 1).abs().max() <= 1e-6, "attention rows do not sum to 1")
        masked = ~amap.layout.allowed[None, :, None].expand_as(amap.weights)
        _check(bool((amap.weights[masked] == 0).all()), "masked attention entries are non-zero")
        e0, e1, m01, m10 = at.inter_frame_attention(a0, a1, cfg, p)
        dx, dy = at.coordinate_step(w), at.coordinate_step(h)
        bound = torch.tensor([dx, dy]).view(1, 2, 1, 1) * (cfg.window_size - 1) + 1e-6
        _check(bool((m01.abs() <= bound).all() and (m10.abs() <= bound).all()), "motion exceeds window reach")
        f0, f1, n01, n10 = at.inter_frame_attention(a1, a0, cfg, p)
        _check(torch.equal(e0, f1) and torch.equal(m01, n10), "direction swap is not symmetric")


def check_backbone() -> None:
    model = sy.FrameInterpolator(ModelConfig.named("tiny"), seed=0)
    i0, i1 = _rand(1, 3, 48, 32, seed=1), _rand(1, 3, 48, 32, seed=2)
    with torch.no_grad():
        f = model.extract(i0, i1)
        g = model.extract(i0, i1)
    C = model.cfg.C
    _check(f.pyr0.L2.shape == (1, 4 * C, 12, 8), "low-level pyramid shape")
    _check(f.stage1.a0.shape == (1, 8 * C, 6, 4) and f.stage2.a1.shape == (1, 16 * C, 3, 2), "stage shapes")
    _check(all(torch.equal(a, b) for a, b in zip(f.stage2, g.stage2)), "extractor is not deterministic")


def check_synthesis() -> None:
    img = _rand(1, 3, 8, 10, seed=5)
    _check(torch.equal(sy.backward_warp(img, torch.zeros(1, 2, 8, 10)), img), "zero-flow warp is not identity")
    flow = torch.zeros(1, 2, 8, 10)
    flow[:, 0] = 1.0
    out = sy.backward_warp(torch.roll(img, 1, -1), flow)
    _check(torch.equal(out[..., :-1], img[..., :-1]), "integer-shift warp")
    state = sy.FlowState(_rand(1, 4, 8, 10, seed=6, low=-2, high=2), _rand(1, 1, 8, 10, seed=7, low=-4, high=4))
    r = sy.fuse_warped(img, _rand(1, 3, 8, 10, seed=8), state)
    lo, hi = torch.minimum(r.warped0, r.warped1), torch.maximum(r.warped0, r.warped1)
    _check(bool(((r.fused >= lo - 1e-6) & (r.fused <= hi + 1e-6)).all()), "fusion is not convex")
    model = sy.FrameInterpolator(ModelConfig.named("tiny"), seed=0)
    i0, i1 = _rand(1, 3, 32, 32, seed=9), _rand(1, 3, 32, 32, seed=10)
    cache = sy.FeatureCache()
    with torch.no_grad():
        for t in (0.25, 0.5, 0.75):
            a, _ = sy.interpolate(i0, i1, t, model, cache)
            b, _ = sy.interpolate(i0, i1, t, model)
            _check(torch.equal(a, b), f"cached output differs at t={t}")


def check_losses() -> None:
    x = _rand(1, 3, 40, 36, seed=11)
    _check((tr.collapse_pyramid(tr.laplacian_pyramid(x)) - x).abs().mean() <= 1e-5, "pyramid collapse")
    gt = _rand(1, 3, 32, 32, seed=12)
    rep = tr.total_loss([_rand(1, 3, 32, 32, seed=13), gt], gt, gt)
    _check(torch.equal(tr.combine_losses(rep.rec_loss, rep.warp_losses), rep.total), "loss recomposition")
    _check(rep.total.item() == 0.5 * rep.warp_losses[0].item(), "warp weight")
    _check(tr.lr_at(0, 1.0, 10, 100, 0.1) == 0.0 and tr.lr_at(10, 1.0, 10, 100, 0.1) == 1.0, "lr schedule endpoints")


def check_metrics() -> None:
    a = np.full((3, 8, 8), 0.5)
    _check(abs(mt.psnr(a, a + 0.1) - 20.0) <= 1e-6, "psnr of a 0.1 offset")
    _check(mt.psnr(a, a) == math.inf, "psnr sentinel")
    _check(abs(mt.ssim(a, a) - 1.0) <= 1e-6, "ssim of identical images")
    _check(abs(mt.interpolation_error(a, a + 2 / 255) - 2.0) <= 1e-9, "interpolation error scale")


def check_io() -> None:
    model = sy.FrameInterpolator(ModelConfig.named("tiny"), seed=3)
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "w.emav"
        io.save_weights(model, path)
        back = io.load_weights(path)
        same = all(
            n0 == n1 and torch.equal(p0, p1)
            for (n0, p0), (n1, p1) in zip(model.named_parameters(), back.named_parameters())
        )
        _check(same, "weights round trip")
        flow = _rand(2, 5, 7, seed=4, low=-3, high=3)
        io.write_flow(Path(d) / "f.flo", flow)
        _check(np.array_equal(io.read_flow(Path(d) / "f.flo"), flow.numpy()), "flow file round trip")


def check_overfit() -> None:
    trip = translation_triplet()
    model = sy.FrameInterpolator(ModelConfig.named("tiny"), seed=0)
    with torch.no_grad():
        before = mt.psnr(model(trip.i0, trip.i1, trip.t).image.clamp(0, 1), trip.gt)
    curve = tr.train_overfit(model, trip, 200)
    with torch.no_grad():
        after = mt.psnr(model(trip.i0, trip.i1, trip.t).image.clamp(0, 1), trip.gt)
    _check(curve[-1].total <= 0.5 * curve[0].total, "overfit loss did not halve")
    _check(after >= before + 5.0, f"overfit psnr gain {after - before:.2f} dB < 5 dB")


FAST_GROUPS: dict[str, Callable[[], None]] = {
    "tensor_core": check_tensor_core,
    "attention": check_attention,
    "backbone": check_backbone,
    "synthesis": check_synthesis,
    "losses": check_losses,
    "metrics": check_metrics,
    "io": check_io,
}


@contextmanager
def _perturbed_softmax():
    orig = tc.softmax_lastdim
    tc.softmax_lastdim = lambda x, mask=None: orig(x, mask) * 1.01
    try:
        yield
    finally:
        tc.softmax_lastdim = orig


def run(level: str = "fast", inject_fault: str | None = None, echo=print) -> list[str]:
    """Run every group and return the names of the failed ones."""
    groups = dict(FAST_GROUPS)
    if level == "full":
        groups["overfit"] = check_overfit
    failed = []
    ctx = _perturbed_softmax() if inject_fault == "softmax" else nullcontext()
    with ctx:
        for name, fn in groups.items():
            start = time.perf_counter()
            try:
                fn()
            except AssertionError as err:
                failed.append(name)
                echo(f"FAIL {name}: {err} ({time.perf_counter() - start:.2f}s)")
            else:
                echo(f"PASS {name} ({time.perf_counter() - start:.2f}s)")
    return failed
