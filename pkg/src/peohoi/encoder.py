"""Spatial and sliding-window temporal encoders plus the two prediction heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import UsageError


@dataclass
class EncoderParams:
    tau: nc.Parameter
    s_attn: nc.MHAParams
    s_ln1: tuple
    s_ffn: tuple  # ((W1, b1), (W2, b2))
    s_ln2: tuple
    t_attn: nc.MHAParams
    t_ln: tuple
    proj_c: tuple
    proj_g: tuple
    x_attn: nc.MHAParams
    t_ln_a: tuple
    t_ffn: tuple
    t_ln_b: tuple
    head_s: tuple
    head_a: tuple
    heads: int
    pe_base: float = 1000.0
    eps: float = 1e-5

    @property
    def d_model(self):
        return self.tau.shape[0]


def init_encoder(ps, d_model, d_g, num_spatial, num_action, heads=8, ffn_mult=2, pe_base=1000.0, eps=1e-5):
    h = d_model * ffn_mult

    def ln(name):
        return ps.ones(f"{name}.gain", (d_model,)), ps.zeros(f"{name}.bias", (d_model,))

    def ffn(name):
        return ps.linear(f"{name}.fc1", d_model, h), ps.linear(f"{name}.fc2", h, d_model)

    return EncoderParams(
        tau=ps.uniform("spatial.tau", (d_model,)),
        s_attn=ps.mha("spatial.attn", d_model),
        s_ln1=ln("spatial.ln1"),
        s_ffn=ffn("spatial.ffn"),
        s_ln2=ln("spatial.ln2"),
        t_attn=ps.mha("temporal.attn", d_model),
        t_ln=ln("temporal.ln"),
        proj_c=ps.linear("temporal.proj_c", d_model, d_model),
        proj_g=ps.linear("temporal.proj_g", d_g, d_model),
        x_attn=ps.mha("temporal.cross", d_model),
        t_ln_a=ln("temporal.ln_a"),
        t_ffn=ffn("temporal.ffn"),
        t_ln_b=ln("temporal.ln_b"),
        head_s=ps.linear("head.spatial", d_model, num_spatial),
        head_a=ps.linear("head.action", d_model, num_action),
        heads=heads,
        pe_base=pe_base,
        eps=eps,
    )


def _ffn(x, ffn):
    (w1, b1), (w2, b2) = ffn
    return nc.affine(nc.relu(nc.affine(x, w1, b1)), w2, b2)


@dataclass
class SpatialOut:
    ho_s: nc.Tensor  # [F, P, d]
    c: nc.Tensor  # [F, d]


def spatial_encode(x, params, mask=None):
    """Self-attention over a frame's pairs plus a learnable global token.

    ``x`` is ``[F, P, d]``; ``mask`` ``[F, P]`` marks real pairs.  The
    global token is appended after the pairs; its output position is the
    frame context ``c``.  Refinement: ``h = x + MHSA(x)``,
    ``out = LN(LN(h) + FFN(LN(h)))``.
    """
    x = nc.as_tensor(x)
    F, P, d = x.shape
    tau = nc.add(np.zeros((F, 1, d), dtype=x.dtype), params.tau)
    tokens = nc.concat([x, tau], axis=1)
    if mask is None:
        mask = np.ones((F, P), dtype=bool)
    key_mask = np.concatenate([np.asarray(mask, dtype=bool), np.ones((F, 1), dtype=bool)], axis=1)[:, None, :]
    h = nc.add(tokens, nc.multi_head_attention(tokens, tokens, params.s_attn, params.heads, key_mask))
    n1 = nc.layer_norm(h, *params.s_ln1, eps=params.eps)
    out = nc.layer_norm(nc.add(n1, _ffn(n1, params.s_ffn)), *params.s_ln2, eps=params.eps)
    return SpatialOut(nc.index(out, (slice(None), slice(0, P))), nc.index(out, (slice(None), P)))


def positional_encoding(pos, d_model, base=1000.0):
    """All-sine encoding ``sin(pos / base ** (i / d_model))`` for ``i = 0 .. d_model-1``.

    ``pos`` may be a scalar or an array; the feature axis is appended.
    """
    pos = np.asarray(pos, dtype=np.float64)
    if np.any(pos < 0):
        raise ValueError("positions must be >= 0")
    i = np.arange(d_model, dtype=np.float64)
    return np.sin(pos[..., None] / np.power(float(base), i / d_model))


@dataclass
class WindowIndex:
    """Gather indices for causal windows, one row per (pair, frame) anchor.

    ``frames[n, k]`` / ``slots[n, k]`` locate the anchor pair's track at the
    k-th window position (oldest first, anchor last); -1 where the track is
    absent or the window starts before the video.
    """

    anchor_frame: np.ndarray
    anchor_slot: np.ndarray
    frames: np.ndarray
    slots: np.ndarray

    @property
    def valid(self):
        return self.slots >= 0

    def __len__(self):
        return len(self.anchor_frame)


def build_windows(frame_keys, W, frame_ids=None):
    """Causal sliding windows over one video.

    ``frame_keys[t]`` lists the ``(h_id, o_id)`` keys of frame ``t`` in slot
    order.  ``frame_ids`` maps video-local positions to global frame indices
    (defaults to ``range(len(frame_keys))``).  Tracks are matched across
    frames by key.
    """
    if W < 1:
        raise ValueError("window length must be >= 1")
    if frame_ids is None:
        frame_ids = list(range(len(frame_keys)))
    lookup = [{k: s for s, k in enumerate(keys)} for keys in frame_keys]
    af, asl, fr, sl = [], [], [], []
    for t, keys in enumerate(frame_keys):
        for s, key in enumerate(keys):
            row_f, row_s = [], []
            for k in range(W - 1, -1, -1):
                u = t - k
                slot = lookup[u].get(key, -1) if u >= 0 else -1
                row_f.append(frame_ids[u] if slot >= 0 else -1)
                row_s.append(slot)
            af.append(frame_ids[t])
            asl.append(s)
            fr.append(row_f)
            sl.append(row_s)
    shape = (len(af), W)
    return WindowIndex(np.asarray(af, dtype=np.int64), np.asarray(asl, dtype=np.int64),
                       np.asarray(fr, dtype=np.int64).reshape(shape), np.asarray(sl, dtype=np.int64).reshape(shape))


@dataclass
class WindowBatch:
    tokens: nc.Tensor  # [B, W, d] HO^S of the track, zero where invalid
    context: nc.Tensor  # [B, W, d] frame context vectors
    gaze: np.ndarray  # [B, W, d_g]
    valid: np.ndarray  # [B, W]


def gather_windows(spatial, gaze, idx, frame_rows=None):
    """Assemble a :class:`WindowBatch` from per-frame encoder outputs.

    ``frame_rows`` maps the global frame ids in ``idx`` to rows of
    ``spatial`` (identity if omitted); ``gaze`` is ``[F, P, d_g]`` aligned
    with ``spatial``.
    """
    F, P, d = spatial.ho_s.shape
    frames = idx.frames if frame_rows is None else np.where(idx.frames >= 0, frame_rows[np.maximum(idx.frames, 0)], -1)
    valid = idx.slots >= 0
    flat = np.where(valid, frames * P + idx.slots, -1)
    tokens = nc.gather_rows(nc.reshape(spatial.ho_s, (F * P, d)), flat)
    context = nc.gather_rows(spatial.c, np.where(valid, frames, -1))
    g = np.asarray(gaze)
    gz = g.reshape(F * P, -1)[np.maximum(flat, 0)] * valid[..., None]
    return WindowBatch(tokens, context, gz.astype(spatial.ho_s.dtype), valid)


def temporal_encode(batch, params):
    """Spatio-temporal representation of each window's anchor (last) position.

    Window tokens get positional encodings and masked self-attention
    (``r = LN(t + MHSA(t))``); the anchor token then cross-attends to the
    window tokens, projected context vectors and projected gaze; with ``x``
    the cross-attention output, ``out = LN(LN(x) + FFN(x))``.
    """
    valid = np.asarray(batch.valid, dtype=bool)
    if not valid[:, -1].all():
        raise UsageError("every window must contain its anchor frame")
    B, W, d = batch.tokens.shape
    dtype = batch.tokens.dtype
    vm = valid[..., None].astype(dtype)
    pe = positional_encoding(np.arange(W), d, params.pe_base).astype(dtype)
    t = nc.mul(nc.add(batch.tokens, pe), vm)
    key_mask = valid[:, None, :]
    h = nc.add(t, nc.multi_head_attention(t, t, params.t_attn, params.heads, key_mask))
    r = nc.layer_norm(h, *params.t_ln, eps=params.eps)
    c = nc.mul(nc.affine(batch.context, *params.proj_c), vm)
    g = nc.mul(nc.affine(nc.Tensor(batch.gaze, dtype=dtype), *params.proj_g), vm)
    memory = nc.concat([r, c, g], axis=1)
    mem_mask = np.concatenate([valid, valid, valid], axis=1)[:, None, :]
    q = nc.index(r, (slice(None), slice(W - 1, W)))
    x = nc.multi_head_attention(q, memory, params.x_attn, params.heads, mem_mask)
    x = nc.reshape(x, (B, d))
    a = nc.layer_norm(x, *params.t_ln_a, eps=params.eps)
    return nc.layer_norm(nc.add(a, _ffn(x, params.t_ffn)), *params.t_ln_b, eps=params.eps)


@dataclass
class PredictionSet:
    spatial: nc.Tensor  # [B, |spatial|]
    action: nc.Tensor  # [B, |action|]

    @property
    def combined(self):
        """Spatial scores followed by action scores."""
        return nc.concat([self.spatial, self.action], axis=-1)


def predict_heads(ho_st, params):
    return PredictionSet(nc.sigmoid(nc.affine(ho_st, *params.head_s)),
                         nc.sigmoid(nc.affine(ho_st, *params.head_a)))
