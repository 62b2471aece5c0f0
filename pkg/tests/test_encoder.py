import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peohoi import numcore as nc
from peohoi.config import ModelConfig
from peohoi.encoder import (WindowBatch, build_windows, gather_windows, init_encoder, positional_encoding,
                            predict_heads, spatial_encode, temporal_encode)
from peohoi.errors import UsageError
from peohoi.model import PackedData, PeoHoiModel

D = 8


@pytest.fixture(autouse=True)
def _f64():
    with nc.precision("f64"):
        yield


def make_encoder(seed=0, d=D, d_g=3, heads=2):
    ps = nc.ParamSet(seed=seed, dtype=np.float64)
    return ps, init_encoder(ps, d, d_g, 8, 42, heads=heads)


def ln(x, eps=1e-5):
    return (x - x.mean(-1, keepdims=True)) / np.sqrt(x.var(-1, keepdims=True) + eps)


class TestPositionalEncoding:
    def test_pos_zero(self):
        np.testing.assert_array_equal(positional_encoding(0, 16), np.zeros(16))

    @pytest.mark.parametrize("pos, i, d, expect", [
        (1, 0, 4, 0.84147),
        (1, 2, 4, 0.031617),
        (3, 1, 2, math.sin(3 / 1000 ** 0.5)),
    ])
    def test_values(self, pos, i, d, expect):
        assert positional_encoding(pos, d)[i] == pytest.approx(expect, abs=1e-5)

    def test_base_configurable(self):
        assert positional_encoding(1, 4, base=10000.0)[2] == pytest.approx(math.sin(1 / 100), abs=1e-12)

    def test_array_positions(self):
        pe = positional_encoding(np.arange(5), 6)
        assert pe.shape == (5, 6)
        np.testing.assert_array_equal(pe[3], positional_encoding(3, 6))

    def test_negative(self):
        with pytest.raises(ValueError):
            positional_encoding(-1, 4)


class TestBuildWindows:
    def test_late_appearing_pair(self):
        keys = [[(1, 1)], [(1, 1)], [(1, 1)], [(1, 1), (1, 2)], [(1, 1), (1, 2)]]
        idx = build_windows(keys, 5)
        row = [n for n in range(len(idx)) if idx.anchor_frame[n] == 4 and idx.anchor_slot[n] == 1][0]
        assert idx.valid[row].sum() == 2
        np.testing.assert_array_equal(idx.frames[row], [-1, -1, -1, 3, 4])
        np.testing.assert_array_equal(idx.slots[row], [-1, -1, -1, 1, 1])

    def test_window_one(self):
        keys = [[(1, 1), (1, 2)], [(1, 2)], [(1, 1)]]
        idx = build_windows(keys, 1)
        assert idx.frames.shape == (4, 1)
        assert idx.valid.all()
        np.testing.assert_array_equal(idx.frames[:, 0], idx.anchor_frame)

    def test_always_present(self):
        keys = [[(1, 1)]] * 7
        idx = build_windows(keys, 3)
        assert idx.valid[2:].all()
        np.testing.assert_array_equal(idx.valid.sum(1), [1, 2, 3, 3, 3, 3, 3])

    def test_track_reordered_slots(self):
        keys = [[(1, 1), (1, 2)], [(1, 2), (1, 1)]]
        idx = build_windows(keys, 2)
        # anchor (1,1) at frame 1 is slot 1 there and slot 0 in frame 0
        row = [n for n in range(len(idx)) if idx.anchor_frame[n] == 1 and idx.anchor_slot[n] == 1][0]
        np.testing.assert_array_equal(idx.slots[row], [0, 1])

    def test_global_frame_ids(self):
        idx = build_windows([[(1, 1)], [(1, 1)]], 2, frame_ids=[10, 11])
        np.testing.assert_array_equal(idx.frames[1], [10, 11])

    @given(st.lists(st.sets(st.integers(0, 3), max_size=4), min_size=1, max_size=8), st.integers(1, 6))
    def test_counting_property(self, frames, W):
        keys = [[(0, k) for k in sorted(f)] for f in frames]
        idx = build_windows(keys, W)
        assert len(idx) == sum(len(k) for k in keys)
        assert idx.valid[:, -1].all()
        for n in range(len(idx)):
            t, key = idx.anchor_frame[n], keys[idx.anchor_frame[n]][idx.anchor_slot[n]]
            expect = sum(1 for u in range(max(0, t - W + 1), t + 1) if key in keys[u])
            assert idx.valid[n].sum() == expect

    def test_invalid_w(self):
        with pytest.raises(ValueError):
            build_windows([[(1, 1)]], 0)


class TestSpatialEncode:
    def test_shapes(self, rng):
        _, ep = make_encoder()
        out = spatial_encode(rng.normal(size=(3, 4, D)), ep)
        assert out.ho_s.shape == (3, 4, D) and out.c.shape == (3, D)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 2**31))
    def test_permutation(self, P, seed):
        rng = np.random.default_rng(seed)
        _, ep = make_encoder(seed=seed % 5)
        x = rng.normal(size=(2, P, D))
        perm = rng.permutation(P)
        a, b = spatial_encode(x, ep), spatial_encode(x[:, perm], ep)
        np.testing.assert_allclose(b.ho_s.data, a.ho_s.data[:, perm], atol=1e-10)
        np.testing.assert_allclose(b.c.data, a.c.data, atol=1e-10)

    def test_residual_isolation(self, rng):
        _, ep = make_encoder()
        for p in (ep.s_attn.wo, ep.s_attn.bo, *[t for fc in ep.s_ffn for t in fc]):
            p.data[...] = 0
        x = rng.normal(size=(2, 3, D))
        out = spatial_encode(x, ep)
        np.testing.assert_allclose(out.ho_s.data, ln(ln(x)), atol=1e-8)
        np.testing.assert_allclose(out.c.data, ln(ln(np.tile(ep.tau.data, (2, 1)))), atol=1e-8)

    def test_padding_invisible(self, rng):
        _, ep = make_encoder()
        x = rng.normal(size=(1, 3, D))
        mask = np.array([[True, False, True]])
        a = spatial_encode(x, ep, mask)
        x2 = x.copy()
        x2[0, 1] = 50.0
        b = spatial_encode(x2, ep, mask)
        np.testing.assert_array_equal(a.ho_s.data[0, [0, 2]], b.ho_s.data[0, [0, 2]])
        np.testing.assert_array_equal(a.c.data, b.c.data)


def window_batch(rng, B=3, W=4, d=D, d_g=3, valid=None):
    valid = np.ones((B, W), bool) if valid is None else valid
    tok = rng.normal(size=(B, W, d)) * valid[..., None]
    ctx = rng.normal(size=(B, W, d)) * valid[..., None]
    gz = rng.normal(size=(B, W, d_g)) * valid[..., None]
    return WindowBatch(nc.Tensor(tok), nc.Tensor(ctx), gz, valid)


class TestTemporalEncode:
    def test_padding_independence(self, rng):
        _, ep = make_encoder()
        valid = np.array([[False, False, True, True], [False, True, False, True]])
        b1 = window_batch(rng, B=2, valid=valid)
        noise = rng.normal(size=b1.tokens.shape) * 30 * ~valid[..., None]
        b2 = WindowBatch(nc.Tensor(b1.tokens.data + noise), nc.Tensor(b1.context.data - noise),
                         b1.gaze + 7.0 * ~valid[..., None], valid)
        a, b = temporal_encode(b1, ep).data, temporal_encode(b2, ep).data
        assert a.tobytes() == b.tobytes()

    def test_anchor_required(self, rng):
        _, ep = make_encoder()
        b = window_batch(rng, B=1, valid=np.array([[True, True, True, False]]))
        with pytest.raises(UsageError):
            temporal_encode(b, ep)

    def test_window_one_is_per_frame(self, rng):
        """W=1 with zero context and gaze projections depends only on the current token."""
        _, ep = make_encoder()
        for p in (*ep.proj_c, *ep.proj_g):
            p.data[...] = 0
        b = window_batch(rng, B=4, W=1)
        full = temporal_encode(b, ep).data
        for i in range(4):
            single = WindowBatch(nc.Tensor(b.tokens.data[i:i + 1]), nc.Tensor(rng.normal(size=(1, 1, D))),
                                 rng.normal(size=(1, 1, 3)), b.valid[i:i + 1])
            np.testing.assert_allclose(temporal_encode(single, ep).data[0], full[i], atol=1e-12)

    def test_batch_rows_independent(self, rng):
        _, ep = make_encoder()
        b = window_batch(rng, B=3)
        full = temporal_encode(b, ep).data
        one = WindowBatch(nc.Tensor(b.tokens.data[1:2]), nc.Tensor(b.context.data[1:2]), b.gaze[1:2], b.valid[1:2])
        np.testing.assert_allclose(temporal_encode(one, ep).data[0], full[1], atol=1e-12)

    def test_gather_zeroes_invalid(self, rng):
        _, ep = make_encoder()
        sp = spatial_encode(rng.normal(size=(3, 2, D)), ep)
        idx = build_windows([[(1, 1)], [(1, 1), (1, 2)], [(1, 2)]], 3)
        batch = gather_windows(sp, rng.normal(size=(3, 2, 3)), idx)
        inv = ~batch.valid
        assert np.all(batch.tokens.data[inv] == 0) and np.all(batch.gaze[inv] == 0)
        n = [i for i in range(len(idx)) if idx.anchor_frame[i] == 2][0]
        np.testing.assert_array_equal(batch.tokens.data[n, -1], sp.ho_s.data[2, 0])
        np.testing.assert_array_equal(batch.tokens.data[n, -2], sp.ho_s.data[1, 1])
        np.testing.assert_array_equal(batch.context.data[n, -2], sp.c.data[1])


class TestCausality:
    def test_future_frames_do_not_change_past(self, tiny_synth):
        train, _, _ = tiny_synth
        cfg = ModelConfig(d_model=16, heads=2, window=3)
        model = PeoHoiModel(train.label_space, train.dims, cfg, mode="pen_pwce", seed=2)
        pk = PackedData(train, cfg.window)
        before = model.predict(pk)
        video = pk.frame_video[0]
        vframes = [i for i, v in enumerate(pk.frame_video) if v == video]
        t = vframes[2]
        for arr in (pk.f_h, pk.f_o, pk.f_u, pk.gaze):
            arr[t + 1:vframes[-1] + 1] += 3.0
        after = model.predict(pk)
        rows = np.isin(pk.windows.anchor_frame, vframes[:3])
        assert before[rows].tobytes() == after[rows].tobytes()
        later = np.isin(pk.windows.anchor_frame, vframes[3:])
        assert not np.array_equal(before[later], after[later])

    def test_predictions_deterministic(self, tiny_synth):
        train, _, _ = tiny_synth
        cfg = ModelConfig(d_model=16, heads=2, window=3)
        pk = PackedData(train, cfg.window)
        runs = [PeoHoiModel(train.label_space, train.dims, cfg, seed=1).predict(pk) for _ in range(2)]
        assert runs[0].tobytes() == runs[1].tobytes()


class TestHeads:
    def test_fifty_outputs(self, rng):
        _, ep = make_encoder()
        pred = predict_heads(nc.Tensor(rng.normal(size=(5, D))), ep)
        assert pred.spatial.shape == (5, 8) and pred.action.shape == (5, 42)
        assert pred.combined.shape == (5, 50)
        np.testing.assert_array_equal(pred.combined.data[:, :8], pred.spatial.data)

    def test_zero_params(self, rng):
        _, ep = make_encoder()
        for p in (*ep.head_s, *ep.head_a):
            p.data[...] = 0
        out = predict_heads(nc.Tensor(rng.normal(size=(2, D))), ep).combined.data
        np.testing.assert_array_equal(out, 0.5)

    @given(st.floats(-50, 50))
    def test_range(self, scale):
        _, ep = make_encoder()
        out = predict_heads(nc.Tensor(np.full((1, D), scale)), ep).combined.data
        assert np.all((out >= 0) & (out <= 1))
