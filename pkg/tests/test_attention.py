import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from ifavfi import attention as at
from ifavfi import tensor_core as tc
from ifavfi.layers import init_weights, zero_module

from .conftest import rand, rel_err
from .oracles import attention_bruteforce, tile_group


def make_params(c, seed=0):
    return init_weights(at.AttentionParams(c), seed)


def run_oracle(a0, a1, params, cfg):
    w = {k: getattr(params, k).weight.detach().double().numpy() for k in ("q", "k", "v", "proj")}
    return attention_bruteforce(
        a0[0].double().numpy(), a1[0].double().numpy(), w["q"], w["k"], w["v"], w["proj"],
        params.proj.bias.detach().double().numpy(), cfg.num_heads, cfg.window_size, cfg.shift,
    )


class TestCoordinateMap:
    def test_center_of_3x3(self):
        assert build(3, 3)[0, :, 1, 1].tolist() == [0.0, 0.0]

    def test_corners(self):
        b = build(4, 6)
        assert b[0, :, 0, 0].tolist() == [-1.0, -1.0]
        assert b[0, :, -1, -1].tolist() == [1.0, 1.0]

    def test_row_spacing(self):
        assert build(1, 5)[0, 0, 0].tolist() == [-1.0, -0.5, 0.0, 0.5, 1.0]
        assert build(1, 5)[0, 1].abs().max() == 0

    def test_channel_order(self):
        b = build(3, 5)
        assert (b[0, 0, 0] == b[0, 0, 2]).all()  # x varies along columns only
        assert (b[0, 1, :, 0] == b[0, 1, :, 4]).all()


def build(h, w):
    return at.build_coordinate_map(h, w)


class TestConfig:
    def test_heads_from_head_dim(self):
        assert at.AttentionConfig(128).num_heads == 8
        assert at.AttentionConfig(128).head_dim == 16

    @pytest.mark.parametrize("n", [1, 4, 6])
    def test_bad_window(self, n):
        with pytest.raises(ValueError):
            at.AttentionConfig(16, window_size=n)

    def test_indivisible_heads(self):
        with pytest.raises(ValueError):
            at.AttentionConfig(10, num_heads=3)


class TestWindowPartition:
    def test_single_window_identity_layout(self):
        x = rand(1, 2, 7, 7)
        win, layout = at.window_partition(x, 7, 0)
        assert torch.equal(layout.gather, torch.arange(49).view(1, 49))
        assert torch.equal(win[0, 0], x[0].reshape(2, 49).T)

    @pytest.mark.parametrize("shift", [0, 3])
    def test_round_trip_bit_exact(self, shift):
        x = rand(1, 2, 10, 10, seed=3)
        win, layout = at.window_partition(x, 7, shift)
        assert torch.equal(at.window_reverse(win, layout), x)

    def test_padding_masked(self):
        _, layout = at.window_partition(rand(1, 1, 10, 9), 7, 0)
        assert (~layout.valid).sum() == 14 * 14 - 90
        # no valid query may see a padded key
        assert not (layout.allowed & layout.valid[:, :, None] & ~layout.valid[:, None, :]).any()

    def test_bad_shift(self):
        with pytest.raises(ValueError):
            at.window_layout(8, 8, 7, 2)

    def test_allowed_matches_tile_groups(self):
        layout = at.window_layout(9, 11, 5, 2)
        for w in range(layout.n_windows):
            for q in range(25):
                if not layout.valid[w, q]:
                    continue
                for k in range(25):
                    r0, c0 = layout.rows[w, q].item(), layout.cols[w, q].item()
                    r1, c1 = layout.rows[w, k].item(), layout.cols[w, k].item()
                    expect = (
                        bool(layout.valid[w, k])
                        and tile_group(r0, 5, 2) == tile_group(r1, 5, 2)
                        and tile_group(c0, 5, 2) == tile_group(c1, 5, 2)
                    )
                    assert bool(layout.allowed[w, q, k]) == expect


def _cases(n_cases, base=0):
    rng = np.random.default_rng(base)
    for seed in range(n_cases):
        h, w = (int(v) for v in rng.integers(1, 9, size=2))
        heads = int(rng.integers(1, 3))
        hd = int(rng.integers(1, 5))
        window = int(rng.choice([3, 5, 7]))
        yield seed, h, w, heads, hd, window, bool(rng.integers(0, 2))


class TestOracle:
    def test_2x2_hand_set(self):
        cfg = at.AttentionConfig(1, num_heads=1, window_size=3)
        p = make_params(1)
        with torch.no_grad():
            p.q.weight.fill_(1.0)
            p.k.weight.fill_(2.0)
            p.v.weight.fill_(0.5)
            p.proj.weight.fill_(1.5)
            p.proj.bias.fill_(0.1)
        a0 = torch.tensor([[0.1, 0.4], [-0.3, 0.9]]).view(1, 1, 2, 2)
        a1 = torch.tensor([[0.7, -0.2], [0.5, 0.0]]).view(1, 1, 2, 2)
        e0, _, m01, _ = at.inter_frame_attention(a0, a1, cfg, p)
        ref_e, ref_m = run_oracle(a0, a1, p, cfg)
        assert rel_err(e0[0], ref_e) <= 1e-5
        assert rel_err(m01[0], ref_m) <= 1e-5

    @pytest.mark.parametrize("seed,h,w,heads,hd,window,shifted", list(_cases(40, base=1)))
    def test_random_maps(self, seed, h, w, heads, hd, window, shifted):
        cfg = at.AttentionConfig(heads * hd, num_heads=heads, window_size=window, shifted=shifted)
        p = make_params(cfg.channels, seed)
        a0 = rand(1, cfg.channels, h, w, seed=seed, low=-2, high=2)
        a1 = rand(1, cfg.channels, h, w, seed=seed + 1000, low=-2, high=2)
        e0, e1, m01, m10 = at.inter_frame_attention(a0, a1, cfg, p)
        ref_e, ref_m = run_oracle(a0, a1, p, cfg)
        assert rel_err(e0[0], ref_e) <= 1e-5
        if np.abs(ref_m).max() > 0:
            assert rel_err(m01[0], ref_m) <= 1e-5
        ref_e1, ref_m1 = run_oracle(a1, a0, p, cfg)
        assert rel_err(e1[0], ref_e1) <= 1e-5

    def test_one_hot_key(self):
        c = 16
        cfg = at.AttentionConfig(c, num_heads=1, window_size=3)
        p = make_params(c)
        with torch.no_grad():
            p.q.weight.copy_(torch.eye(c) * 10)
            p.k.weight.copy_(torch.eye(c) * 10)
        a0 = torch.zeros(1, c, 3, 3)
        a1 = torch.zeros(1, c, 3, 3)
        for i, (y, x) in enumerate([(y, x) for y in range(3) for x in range(3)]):
            a1[0, i, y, x] = 1.0  # orthogonal codes per key
        a0[0, 2, 1, 1] = 1.0  # query (1, 1) matches key (0, 2) only
        _, _, m01, _ = at.inter_frame_attention(a0, a1, cfg, p)
        assert abs(m01[0, 0, 1, 1].item() - 1.0) < 1e-3
        assert abs(m01[0, 1, 1, 1].item() + 1.0) < 1e-3


class TestNormalization:
    @pytest.mark.parametrize("seed", range(0, 100, 9))
    def test_rows_and_mask(self, seed):
        rng = np.random.default_rng(seed)
        h, w = (int(v) for v in rng.integers(3, 16, size=2))
        cfg = at.AttentionConfig(16, window_size=int(rng.choice([3, 5, 7])), shifted=bool(seed % 2))
        p = make_params(16, seed)
        amap, _ = at.attention_map(rand(1, 16, h, w, seed=seed), rand(1, 16, h, w, seed=seed + 1), cfg, p)
        s = amap.weights
        assert (s >= 0).all()
        assert (s.sum(-1) - 1).abs().max() <= 1e-6
        masked = ~amap.layout.allowed[None, :, None].expand_as(s)
        assert (s[masked] == 0).all()

    def test_logit_offset_invariance(self, monkeypatch):
        cfg = at.AttentionConfig(16, window_size=5, shifted=True)
        p = make_params(16, 3)
        a0, a1 = rand(1, 16, 9, 9, seed=1), rand(1, 16, 9, 9, seed=2)
        base = at.inter_frame_attention(a0, a1, cfg, p)
        orig = tc.softmax_lastdim
        monkeypatch.setattr(tc, "softmax_lastdim", lambda x, mask=None: orig(x + 7.5, mask))
        shifted = at.inter_frame_attention(a0, a1, cfg, p)
        for a, b in zip(base, shifted):
            assert (a - b).abs().max() <= 1e-5


class TestMotion:
    @pytest.mark.parametrize("seed", range(100))
    def test_window_reach_bound(self, seed):
        rng = np.random.default_rng(seed)
        h, w = (int(v) for v in rng.integers(2, 14, size=2))
        window = int(rng.choice([3, 5, 7]))
        cfg = at.AttentionConfig(16, window_size=window, shifted=bool(rng.integers(0, 2)))
        p = make_params(16, seed)
        a0 = rand(1, 16, h, w, seed=seed, low=-3, high=3)
        a1 = rand(1, 16, h, w, seed=seed + 7, low=-3, high=3)
        _, _, m01, m10 = at.inter_frame_attention(a0, a1, cfg, p)
        dx, dy = at.coordinate_step(w), at.coordinate_step(h)
        for m in (m01, m10):
            assert (m[:, 0].abs() <= (window - 1) * dx + 1e-6).all()
            assert (m[:, 1].abs() <= (window - 1) * dy + 1e-6).all()

    def test_uniform_features_zero_at_window_centres(self):
        cfg = at.AttentionConfig(16, window_size=7)
        p = make_params(16, 1)
        a = torch.full((1, 16, 14, 14), 0.3)
        _, _, m01, m10 = at.inter_frame_attention(a, a, cfg, p)
        for y in (3, 10):
            for x in (3, 10):
                assert m01[0, :, y, x].abs().max() <= 1e-6
                assert m10[0, :, y, x].abs().max() <= 1e-6

    def test_direction_symmetry_bit_exact(self):
        cfg = at.AttentionConfig(32, window_size=5, shifted=True)
        p = make_params(32, 4)
        a0, a1 = rand(1, 32, 10, 12, seed=5), rand(1, 32, 10, 12, seed=6)
        e0, e1, m01, m10 = at.inter_frame_attention(a0, a1, cfg, p)
        f0, f1, n01, n10 = at.inter_frame_attention(a1, a0, cfg, p)
        assert torch.equal(e0, f1) and torch.equal(e1, f0)
        assert torch.equal(m01, n10) and torch.equal(m10, n01)

    def test_shape_mismatch(self):
        cfg = at.AttentionConfig(16)
        with pytest.raises(ValueError):
            at.inter_frame_attention(torch.zeros(1, 16, 4, 4), torch.zeros(1, 16, 4, 5), cfg, make_params(16))


class TestScaleMotion:
    m = rand(1, 2, 5, 5, seed=9, low=-1)

    def test_endpoints(self):
        assert torch.equal(at.scale_motion(self.m, 0.0), torch.zeros_like(self.m))
        assert torch.equal(at.scale_motion(self.m, 1.0), self.m)

    def test_half(self):
        assert torch.equal(at.scale_motion(self.m, 0.5), self.m / 2)

    @settings(max_examples=30, deadline=None)
    @given(t1=st.floats(0.05, 1.0), t2=st.floats(0.0, 1.0))
    def test_proportional(self, t1, t2):
        a, b = at.scale_motion(self.m, t1), at.scale_motion(self.m, t2)
        assert torch.allclose(a * (t2 / t1), b, rtol=1e-6, atol=1e-7)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            at.scale_motion(self.m, 1.5)


class TestBlock:
    def block(self, c=32, shifted=False, seed=0):
        return init_weights(at.TransformerBlock(at.AttentionConfig(c, window_size=5, shifted=shifted)), seed)

    def test_motion_layer_input_is_2(self):
        assert self.block().motion.weight.shape == (32, 2)

    def test_zero_projections_identity(self):
        blk = self.block()
        zero_module(blk.attn.proj)
        zero_module(blk.fc2)
        a0, a1 = rand(1, 32, 7, 9, seed=1), rand(1, 32, 7, 9, seed=2)
        out = blk(a0, a1)
        assert torch.equal(out.a0, a0) and torch.equal(out.a1, a1)

    def test_zero_motion_gives_zero_features(self):
        blk = self.block()
        assert torch.equal(blk.motion(torch.zeros(1, 2, 4, 4)), torch.zeros(1, 32, 4, 4))

    @pytest.mark.parametrize("shifted", [False, True])
    def test_composition_oracle(self, shifted):
        blk = self.block(shifted=shifted, seed=3)
        a0, a1 = rand(1, 32, 9, 8, seed=4, low=-1), rand(1, 32, 9, 8, seed=5, low=-1)
        out = blk(a0, a1)

        def ln(x, m):
            return tc.layer_norm(x, m.gamma, m.beta)

        def mlp(x):
            h = tc.linear(x, blk.fc1.weight, blk.fc1.bias)
            h = tc.conv2d(h, blk.dwconv.weight, blk.dwconv.bias, padding=1, groups=h.shape[1])
            return tc.linear(tc.activation(h, "gelu"), blk.fc2.weight, blk.fc2.bias)

        n0, n1 = ln(a0, blk.norm1), ln(a1, blk.norm1)
        e0, e1, m01, m10 = at.inter_frame_attention(n0, n1, blk.cfg, blk.attn)
        x0 = a0 + (e0 - n0)
        x1 = a1 + (e1 - n1)
        x0 = x0 + mlp(ln(x0, blk.norm2))
        x1 = x1 + mlp(ln(x1, blk.norm2))
        assert rel_err(out.a0, x0) <= 1e-6
        assert rel_err(out.a1, x1) <= 1e-6
        assert rel_err(out.motion_feat01, tc.linear(m01, blk.motion.weight)) <= 1e-6
        assert rel_err(out.motion_feat10, tc.linear(m10, blk.motion.weight)) <= 1e-6
