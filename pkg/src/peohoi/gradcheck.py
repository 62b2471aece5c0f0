"""Finite-difference verification of every differentiable stage.

Each check builds a small fragment at toy dimensions, reduces its output to a
scalar with fixed random upstream weights and compares analytic gradients
against central differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .config import ModelConfig, TrainConfig
from .data.synth import SynthConfig, generate_synthetic
from .data.stats import compute_frequencies
from .encoder import (build_windows, gather_windows, init_encoder, predict_heads, spatial_encode,
                      temporal_encode)
from .fusion import fuse_pair, fuse_pair_prototype, init_fusion
from .model import PackedData, PeoHoiModel
from .objective import cb_focal_loss, total_loss
from .proto import (init_proto, propensity, prototype_classify, prototype_embed, pwce_loss,
                    select_prototype)
from .trainer import compute_losses

MODULE_TOL = {"f64": 1e-5, "f32": 1e-2}
END_TO_END_TOL = {"f64": 1e-4, "f32": 1e-2}
DEFAULT_EPS = {"f64": 1e-6, "f32": 1e-3}


@dataclass
class CheckOutcome:
    name: str
    max_rel_error: float
    tol: float
    worst: str
    ok: bool
    message: str = ""

    @property
    def passed(self):
        return self.ok and self.max_rel_error < self.tol


def _rng(seed):
    return np.random.default_rng(seed)


def _weighted_sum(t, rng):
    R = rng.standard_normal(t.shape)
    return nc.sum_(nc.mul(t, R))


def check_affine_softmax_ce(precision="f64", eps=None, seed=0):
    """affine -> softmax -> cross-entropy on a tiny batch."""
    rng = _rng(seed)
    with nc.precision(precision):
        ps = nc.ParamSet(seed=seed, dtype=nc.get_dtype())
        W, b = ps.linear("fc", 5, 4)
        x = rng.standard_normal((3, 5))
        y = np.eye(4)[[0, 2, 3]]

        def fn():
            p = nc.softmax(nc.affine(x, W, b), axis=-1)
            return nc.scale(nc.sum_(nc.mul(nc.log(p), y)), -1.0 / 3)

        return nc.grad_check(fn, ps, eps=eps or DEFAULT_EPS[precision], samples_per_param=20, seed=seed)


def _toy_dims():
    return 8, 6, 4  # d_v, d_w, d_g


def check_fusion(precision="f64", eps=None, seed=0):
    rng = _rng(seed)
    d_v, d_w, d_g = _toy_dims()
    with nc.precision(precision):
        ps = nc.ParamSet(seed=seed, dtype=nc.get_dtype())
        plain = init_fusion(ps, d_v, d_w, d_g, 16)
        proto = init_fusion(ps, d_v, d_w, d_g, 16, d_p=d_v)
        f_h, f_o, f_u, pf = (rng.standard_normal((2, 3, d_v)) for _ in range(4))
        w, g = rng.standard_normal((2, 3, d_w)), rng.standard_normal((2, 3, d_g))

        def fn():
            a = fuse_pair(f_h, f_o, f_u, w, g, plain)
            b = fuse_pair_prototype(f_h, f_o, pf, w, g, proto)
            return nc.add(_weighted_sum(a, _rng(seed + 1)), _weighted_sum(b, _rng(seed + 2)))

        return nc.grad_check(fn, ps, eps=eps or DEFAULT_EPS[precision], seed=seed)


def check_proto(precision="f64", eps=None, seed=0):
    """Prototype selection and embedding (concat, attention with residual, FFN, LN)."""
    rng = _rng(seed)
    d_v, d_w, _ = _toy_dims()
    with nc.precision(precision):
        ps = nc.ParamSet(seed=seed, dtype=nc.get_dtype())
        params = init_proto(ps, d_v, d_w, d_v, rng.standard_normal((5, d_w)), with_classifier=False)
        f_u = rng.standard_normal((2, 3, d_v))
        mask = np.array([[True, True, True], [True, True, False]])

        def fn():
            s, _ = select_prototype(f_u, params.bank)
            out = prototype_embed(f_u, s, params, mask)
            return _weighted_sum(out, _rng(seed + 3))

        return nc.grad_check(fn, ps, eps=eps or DEFAULT_EPS[precision], seed=seed)


def check_pwce(precision="f64", eps=None, seed=0):
    """Prototype classifier followed by the propensity-weighted loss."""
    rng = _rng(seed)
    d_v, d_w, _ = _toy_dims()
    with nc.precision(precision):
        ps = nc.ParamSet(seed=seed, dtype=nc.get_dtype())
        params = init_proto(ps, d_v, d_w, d_v, rng.standard_normal((5, d_w)))
        feat = rng.standard_normal((4, d_v))
        y = (rng.random((4, 5)) < 0.4).astype(float)
        omega = 1.0 + rng.random(5) * 3

        def fn():
            return pwce_loss(prototype_classify(feat, params), y, omega)

        cls_params = [p for fc in params.classifier for p in fc]
        return nc.grad_check(fn, cls_params, eps=eps or DEFAULT_EPS[precision], seed=seed)


def check_spatial(precision="f64", eps=None, seed=0, d_model=32, heads=4):
    rng = _rng(seed)
    with nc.precision(precision):
        ps = nc.ParamSet(seed=seed, dtype=nc.get_dtype())
        enc = init_encoder(ps, d_model, 4, 3, 5, heads=heads)
        x = rng.standard_normal((2, 3, d_model))
        mask = np.array([[True, True, True], [True, False, True]])
        sp = [p for p in ps if p.name.startswith("spatial.")]

        def fn():
            out = spatial_encode(x, enc, mask)
            return nc.add(_weighted_sum(out.ho_s, _rng(seed + 4)), _weighted_sum(out.c, _rng(seed + 5)))

        return nc.grad_check(fn, sp, eps=eps or DEFAULT_EPS[precision], seed=seed)


def check_temporal(precision="f64", eps=None, seed=0, d_model=32, heads=4, W=3):
    rng = _rng(seed)
    d_g = 4
    with nc.precision(precision):
        ps = nc.ParamSet(seed=seed, dtype=nc.get_dtype())
        enc = init_encoder(ps, d_model, d_g, 3, 5, heads=heads)
        ho_s = nc.Tensor(rng.standard_normal((4, 2, d_model)))
        c = nc.Tensor(rng.standard_normal((4, d_model)))
        gaze = rng.standard_normal((4, 2, d_g))
        keys = [[(1, 1), (1, 2)], [(1, 1)], [(1, 1), (1, 2)], [(1, 2), (1, 1)]]
        idx = build_windows(keys, W)
        from .encoder import SpatialOut
        tp = [p for p in ps if p.name.startswith("temporal.")]

        def fn():
            batch = gather_windows(SpatialOut(ho_s, c), gaze, idx)
            return _weighted_sum(temporal_encode(batch, enc), _rng(seed + 6))

        return nc.grad_check(fn, tp, eps=eps or DEFAULT_EPS[precision], seed=seed)


def check_heads(precision="f64", eps=None, seed=0, d_model=32):
    rng = _rng(seed)
    with nc.precision(precision):
        ps = nc.ParamSet(seed=seed, dtype=nc.get_dtype())
        enc = init_encoder(ps, d_model, 4, 3, 5, heads=4)
        x = rng.standard_normal((3, d_model))
        hp = [p for p in ps if p.name.startswith("head.")]

        def fn():
            return _weighted_sum(predict_heads(x, enc).combined, _rng(seed + 7))

        return nc.grad_check(fn, hp, eps=eps or DEFAULT_EPS[precision], seed=seed)


def _prob_fragment(ps, rng, B=4, L=6):
    W, b = ps.linear("logit", 5, L)
    x = rng.standard_normal((B, 5))
    y = (rng.random((B, L)) < 0.4).astype(float)
    return W, b, x, y


def check_focal(precision="f64", eps=None, seed=0):
    rng = _rng(seed)
    with nc.precision(precision):
        ps = nc.ParamSet(seed=seed, dtype=nc.get_dtype())
        W, b, x, y = _prob_fragment(ps, rng)
        counts = rng.integers(1, 200, size=6)

        def fn():
            return cb_focal_loss(nc.sigmoid(nc.affine(x, W, b)), y, counts, 0.99, 2.0)

        return nc.grad_check(fn, ps, eps=eps or DEFAULT_EPS[precision], seed=seed)


def check_combined(precision="f64", eps=None, seed=0):
    rng = _rng(seed)
    with nc.precision(precision):
        ps = nc.ParamSet(seed=seed, dtype=nc.get_dtype())
        W, b, x, y = _prob_fragment(ps, rng)
        W2, b2 = ps.linear("aux", 5, 6)
        counts = rng.integers(1, 200, size=6)
        omega = 1.0 + rng.random(6)

        def fn():
            lf = cb_focal_loss(nc.sigmoid(nc.affine(x, W, b)), y, counts, 0.99, 2.0)
            lp = pwce_loss(nc.sigmoid(nc.affine(x, W2, b2)), y, omega)
            return total_loss(lf, lp, 0.8)

        return nc.grad_check(fn, ps, eps=eps or DEFAULT_EPS[precision], seed=seed)


def check_end_to_end(precision="f64", eps=None, seed=0, d_model=32, heads=4):
    """Full pen_pwce model on a tiny synthetic clip, combined loss."""
    cfg = TrainConfig(seed=seed, ablation_mode="pen_pwce", model=ModelConfig(d_model=d_model, heads=heads, window=3))
    syn = SynthConfig(seed=seed, num_videos=1, num_test_videos=0, frames_per_video=4, pairs_per_frame=3,
                      d_v=8, d_w=6, d_g=4, noise_rate=0.0)
    train_ds, _, _ = generate_synthetic(syn)
    freqs = compute_frequencies(train_ds)
    omega = propensity(freqs, C=2.0).omega
    model = PeoHoiModel(train_ds.label_space, train_ds.dims, cfg.model, "pen_pwce", seed=seed)
    pk = PackedData(train_ds, cfg.model.window)
    rows = pk.rows_for_frames(pk.anchor_frames[-2:])
    with nc.precision(precision):
        model.astype(nc.get_dtype())

        def fn():
            out = model.forward(pk, rows)
            return compute_losses(model, out, freqs, omega, cfg)[0]

        return nc.grad_check(fn, model.params, eps=eps or DEFAULT_EPS[precision], samples_per_param=3, seed=seed)


MODULE_CHECKS = (
    ("affine_softmax_ce", check_affine_softmax_ce),
    ("fusion", check_fusion),
    ("proto", check_proto),
    ("pwce", check_pwce),
    ("spatial_encoder", check_spatial),
    ("temporal_encoder", check_temporal),
    ("heads", check_heads),
    ("focal", check_focal),
    ("combined", check_combined),
)


def run_suite(precision="f64", tol=None, e2e_tol=None, eps=None, seed=0):
    """Run every check; returns a list of :class:`CheckOutcome`."""
    tol = tol or MODULE_TOL[precision]
    e2e_tol = e2e_tol or END_TO_END_TOL[precision]
    outcomes = []
    for name, fn in MODULE_CHECKS + (("end_to_end", check_end_to_end),):
        r = fn(precision=precision, eps=eps, seed=seed)
        t = e2e_tol if name == "end_to_end" else tol
        outcomes.append(CheckOutcome(name, r.max_rel_error, t, r.worst, r.ok, r.message))
    return outcomes
