import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ifavfi import metrics as mt

from .oracles import ssim_scalar


def pair(seed, shape=(3, 8, 8)):
    g = np.random.default_rng(seed)
    return g.uniform(size=shape), g.uniform(size=shape)


def psnr_scalar(a, b):
    total = 0.0
    for x, y in zip(a.ravel(), b.ravel()):
        total += (float(x) - float(y)) ** 2
    return 10 * math.log10(1.0 / (total / a.size))


def ie_scalar(a, b):
    total = 0.0
    for x, y in zip(a.ravel(), b.ravel()):
        total += (255.0 * (float(x) - float(y))) ** 2
    return math.sqrt(total / a.size)


class TestPsnr:
    def test_identical_is_inf(self):
        a, _ = pair(0)
        assert mt.psnr(a, a) == math.inf

    def test_uniform_tenth(self):
        a = np.full((3, 8, 8), 0.5)
        assert abs(mt.psnr(a, a + 0.1) - 20.0) <= 1e-6

    def test_homogeneity(self):
        a, b = pair(1)
        assert mt.psnr(0.5 * a, 0.5 * b, peak=0.5) == pytest.approx(mt.psnr(a, b), abs=1e-9)


class TestIE:
    def test_identical(self):
        a, _ = pair(2)
        assert mt.interpolation_error(a, a) == 0.0

    def test_two_levels(self):
        a = np.full((3, 8, 8), 0.4)
        assert mt.interpolation_error(a, a + 2 / 255) == pytest.approx(2.0, abs=1e-9)

    def test_permutation(self):
        a, b = pair(3)
        perm = np.random.default_rng(0).permutation(a.size)
        assert mt.interpolation_error(a.ravel()[perm], b.ravel()[perm]) == pytest.approx(mt.interpolation_error(a, b), abs=1e-12)


class TestSsim:
    def test_identical(self):
        a, _ = pair(4, (3, 32, 32))
        assert mt.ssim(a, a) == pytest.approx(1.0, abs=1e-6)

    def test_anticorrelated(self):
        a = (np.random.default_rng(5).uniform(size=(3, 32, 32)) > 0.5).astype(float)
        a[1:] = a[0]
        assert mt.ssim(a, 1 - a) < -0.5

    def test_window_size(self):
        assert mt.ssim_window_size(256, 256) == 11
        assert mt.ssim_window_size(8, 8) == 7
        assert mt.ssim_window_size(9, 20) == 9

    def test_window_normalized(self):
        w = mt.gaussian_window(11)
        assert w.sum() == pytest.approx(1.0) and w.argmax() == 60


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_metrics_match_scalar_oracles_8x8(seed):
    a, b = pair(seed)
    assert abs(mt.psnr(a, b) - psnr_scalar(a, b)) <= 1e-5
    assert abs(mt.interpolation_error(a, b) - ie_scalar(a, b)) <= 1e-5
    assert abs(mt.ssim(a, b) - ssim_scalar(a.mean(0), b.mean(0), win=7)) <= 1e-5


def test_ssim_accepts_batched_tensor_layout():
    import torch

    a, b = pair(9, (1, 3, 16, 16))
    assert mt.ssim(torch.from_numpy(a), torch.from_numpy(b)) == pytest.approx(mt.ssim(a[0], b[0]), abs=1e-12)
