import time
from typing import NamedTuple

import numpy as np
import pytest
import torch

from ifavfi.backbone import ModelConfig
from ifavfi.data import translation_triplet
from ifavfi.metrics import psnr
from ifavfi.synthesis import FrameInterpolator
from ifavfi.training import Triplet, train_overfit


def rel_err(actual, expected) -> float:
    """max |actual - expected| / max |expected| (normwise)."""
    a = np.asarray(actual.detach().numpy() if isinstance(actual, torch.Tensor) else actual, dtype=np.float64)
    e = np.asarray(expected.detach().numpy() if isinstance(expected, torch.Tensor) else expected, dtype=np.float64)
    return float(np.max(np.abs(a - e)) / max(np.max(np.abs(e)), 1e-12))


def rand(*shape, seed=0, low=0.0, high=1.0):
    g = np.random.default_rng(seed)
    return torch.from_numpy(g.uniform(low, high, size=shape).astype(np.float32))


@pytest.fixture(scope="session")
def tiny_model():
    return FrameInterpolator(ModelConfig.named("tiny"), seed=0)


class OverfitRun(NamedTuple):
    model: FrameInterpolator
    triplet: Triplet
    curve: list
    psnr_before: float
    psnr_after: float
    seconds: float


def overfit_translation(seed=0, steps=200):
    """The desk-scale learning run: 64x64, 4 px rightward shift, t = 0.5, tiny config."""
    trip = translation_triplet(size=64, shift=4, t=0.5)
    model = FrameInterpolator(ModelConfig.named("tiny"), seed=seed)
    with torch.no_grad():
        before = psnr(model(trip.i0, trip.i1, trip.t).image.clamp(0, 1), trip.gt)
    start = time.perf_counter()
    curve = train_overfit(model, trip, steps, peak_lr=2e-4, warmup=20)
    seconds = time.perf_counter() - start
    with torch.no_grad():
        after = psnr(model(trip.i0, trip.i1, trip.t).image.clamp(0, 1), trip.gt)
    return OverfitRun(model, trip, curve, before, after, seconds)


@pytest.fixture(scope="session")
def overfit_run():
    return overfit_translation()


@pytest.fixture(scope="session")
def multi_t_run():
    trips = [translation_triplet(size=64, shift=4, t=t) for t in (0.25, 0.5, 0.75)]
    model = FrameInterpolator(ModelConfig.named("tiny"), seed=0)
    train_overfit(model, trips, 200)
    return model, trips


ACCEPTANCE_RESULTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        status, title, detail, seconds = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"[{status}] {n:>2}. {title}: {detail} ({seconds:.1f}s)")
