import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omnisal import oracles as O
from omnisal.dwf import (EQUAL_WEIGHTS, FusionWeights, GEFParams, block_shared_se, dwf_fuse, gef,
                         make_dwf_params, make_gef_params, permute_dwf_params, waf_weights)
from omnisal.tensor import ConvParams, SEParams, ShapeError

from conftest import rand_tensor


def forced_gef(channels, bias):
    """GEF whose importance map is sigmoid(bias) everywhere."""
    return GEFParams(SEParams.zeros(2 * channels), ConvParams.constant(2 * channels, channels, bias))


@pytest.fixture
def feats(rng):
    f_e = rand_tensor(rng, 8, 3, 5)
    return f_e, [rand_tensor(rng, 8, 3, 5) for _ in range(4)]


class TestGEF:
    def test_closed_mask_returns_equirect(self, feats):
        f_e, f_cs = feats
        _, out = gef(f_e, f_cs[0], forced_gef(8, -40.0))
        np.testing.assert_allclose(out, f_e, atol=1e-4)

    def test_open_mask_returns_cube(self, feats):
        f_e, f_cs = feats
        _, out = gef(f_e, f_cs[0], forced_gef(8, 40.0))
        np.testing.assert_allclose(out, f_cs[0], atol=1e-4)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.booleans())
    def test_convex_envelope(self, seed, single):
        rng = np.random.default_rng(seed)
        f_e, f_c = rand_tensor(rng, 4, 3, 3), rand_tensor(rng, 4, 3, 3)
        mask, out = gef(f_e, f_c, make_gef_params(rng, 4, single_channel_mask=single))
        assert mask.shape[0] == (1 if single else 4)
        assert np.all(out >= np.minimum(f_e, f_c) - 1e-6)
        assert np.all(out <= np.maximum(f_e, f_c) + 1e-6)

    @pytest.mark.parametrize("single", [False, True])
    def test_matches_loop(self, feats, rng, single):
        f_e, f_cs = feats
        p = make_gef_params(rng, 8, single_channel_mask=single)
        mask, out = gef(f_e, f_cs[1], p)
        ref_mask, ref = O.gef_loop(f_e, f_cs[1], p.se, p.conv)
        np.testing.assert_allclose(mask, ref_mask, atol=1e-6)
        np.testing.assert_allclose(out, ref, atol=1e-6)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            gef(rand_tensor(rng, 2, 3, 3), rand_tensor(rng, 2, 3, 4), make_gef_params(rng, 2))


class TestWAF:
    def test_symmetric_equal_weights(self, rng):
        f = rand_tensor(rng, 8, 3, 3)
        w = waf_weights([f] * 4, block_shared_se(rng, 8))
        np.testing.assert_allclose(list(w), 0.25, atol=1e-6)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_normalised(self, seed):
        rng = np.random.default_rng(seed)
        f_cs = [10 * rand_tensor(rng, 2, 2, 3) for _ in range(4)]
        w = waf_weights(f_cs, SEParams.init(rng, 8))
        assert abs(sum(w) - 1) <= 1e-6
        assert all(0 < x < 1 for x in w)

    def test_matches_loop(self, feats, rng):
        se = SEParams.init(rng, 32)
        np.testing.assert_allclose(list(waf_weights(feats[1], se)), O.waf_loop(feats[1], se), atol=1e-6)

    def test_weights_validation(self):
        with pytest.raises(ValueError):
            FusionWeights((0.5, 0.5, 0.5, -0.5))
        with pytest.raises(ValueError):
            FusionWeights((0.3, 0.3, 0.3, 0.3))

    def test_needs_four(self, feats, rng):
        with pytest.raises(ShapeError):
            waf_weights(feats[1][:3], SEParams.init(rng, 24))


class TestDWF:
    def test_identical_inputs_double(self, feats, rng):
        f_e = feats[0]
        out = dwf_fuse(f_e, [f_e] * 4, make_dwf_params(8, seed=3))
        np.testing.assert_allclose(out, 2 * f_e, rtol=1e-5, atol=1e-6)

    def test_zero(self):
        z = np.zeros((8, 2, 2), np.float32)
        assert not dwf_fuse(z, [z] * 4, make_dwf_params(8, seed=1)).any()

    @pytest.mark.parametrize("shared", [True, False])
    @pytest.mark.parametrize("use_waf", [True, False])
    def test_matches_composition(self, feats, shared, use_waf):
        f_e, f_cs = feats
        p = make_dwf_params(8, seed=9, shared_gef=shared)
        out = dwf_fuse(f_e, f_cs, p, use_waf=use_waf)
        np.testing.assert_allclose(out, O.dwf_loop(f_e, f_cs, p, use_waf), atol=1e-6)

    def test_details(self, feats):
        out, w, masks = dwf_fuse(*feats, make_dwf_params(8, seed=2), return_details=True)
        assert len(masks) == 4 and isinstance(w, FusionWeights)
        _, w_eq, _ = dwf_fuse(*feats, make_dwf_params(8, seed=2), use_waf=False, return_details=True)
        assert w_eq == EQUAL_WEIGHTS

    @pytest.mark.parametrize("perm", list(itertools.permutations(range(4)))[::5])
    def test_joint_permutation(self, feats, perm):
        f_e, f_cs = feats
        p = make_dwf_params(8, seed=4, shared_gef=False)
        moved = dwf_fuse(f_e, [f_cs[i] for i in perm], permute_dwf_params(p, perm))
        np.testing.assert_allclose(moved, dwf_fuse(f_e, f_cs, p), atol=1e-6)

    def test_shared_mode_order_invariant(self, feats):
        f_e, f_cs = feats
        p = make_dwf_params(8, seed=4, shared_gef=True, block_shared_waf=True)
        base = dwf_fuse(f_e, f_cs, p)
        for perm in itertools.permutations(range(4)):
            np.testing.assert_allclose(dwf_fuse(f_e, [f_cs[i] for i in perm], p), base, atol=1e-6)

    def test_per_slot_mode_is_order_sensitive(self, feats):
        f_e, f_cs = feats
        p = make_dwf_params(8, seed=4, shared_gef=False)
        swapped = dwf_fuse(f_e, f_cs[::-1], p)
        assert np.max(np.abs(swapped - dwf_fuse(f_e, f_cs, p))) > 1e-6


class TestParams:
    def test_pure_function_of_seed(self):
        a, b = make_dwf_params(16, seed=7), make_dwf_params(16, seed=7)
        assert a.waf_se.w1.tobytes() == b.waf_se.w1.tobytes()
        assert a.gef[0].conv.kernel.tobytes() == b.gef[0].conv.kernel.tobytes()
        c = make_dwf_params(16, seed=8)
        assert a.waf_se.w1.tobytes() != c.waf_se.w1.tobytes()

    def test_fan_in_bounds(self):
        p = make_dwf_params(16, seed=1)
        assert np.abs(p.gef[0].conv.kernel).max() <= 1 / np.sqrt(9 * 32)
        assert np.abs(p.waf_se.w1).max() <= 1 / np.sqrt(64)

    def test_sharing_flags(self):
        assert make_dwf_params(16, seed=1).shared_gef
        assert not make_dwf_params(16, seed=1, shared_gef=False).shared_gef

    def test_bad_permutation(self):
        with pytest.raises(ValueError):
            permute_dwf_params(make_dwf_params(16, seed=1), [0, 0, 1, 2])
