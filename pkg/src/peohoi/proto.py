"""Prototype embedding of union features and the propensity-weighted loss.

Per frame, each pair's union feature is concatenated with a predicate
prototype, refined by single-head self-attention across the frame's pairs
(with a residual), and passed through ``LN(FC(ReLU(FC(.))))``.  An auxiliary
classifier on the result is trained with a binary cross-entropy whose labels
are weighted by inverse propensity scores.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import ConfigError, DimensionError, UsageError

PROB_CLAMP = 1e-7


@dataclass
class PrototypeBank:
    prototypes: nc.Parameter  # [num_predicates, d_w]
    select_w: nc.Parameter  # [d_v, d_w]
    select_b: nc.Parameter

    @property
    def num_predicates(self):
        return self.prototypes.shape[0]


@dataclass
class ProtoParams:
    bank: PrototypeBank
    wq: nc.Parameter
    wk: nc.Parameter
    wv: nc.Parameter
    ffn1: tuple
    ffn2: tuple
    ln_gain: nc.Parameter
    ln_bias: nc.Parameter
    classifier: list  # [(W, b), ...]; one layer when literal-form
    literal_form: bool = False

    @property
    def d_f(self):
        return self.wq.shape[0]

    @property
    def d_p(self):
        return self.ln_gain.shape[0]


def init_proto(ps, d_v, d_w, d_p, predicate_vectors, literal_form=False, with_classifier=True):
    """Register prototype-module parameters.

    ``predicate_vectors`` ([num_predicates, d_w]) seeds the prototype bank.
    """
    predicate_vectors = np.asarray(predicate_vectors)
    if predicate_vectors.ndim != 2 or predicate_vectors.shape[1] != d_w:
        raise DimensionError(f"predicate vectors {predicate_vectors.shape} do not have width d_w={d_w}")
    L = predicate_vectors.shape[0]
    bank = PrototypeBank(ps.add("proto.bank", predicate_vectors),
                         *ps.linear("proto.select", d_v, d_w))
    d_f = d_v + d_w
    # Q/K/V are bare weight matrices
    wq = ps.uniform("proto.q.weight", (d_f, d_f))
    wk = ps.uniform("proto.k.weight", (d_f, d_f))
    wv = ps.uniform("proto.v.weight", (d_f, d_f))
    ffn1 = ps.linear("proto.ffn1", d_f, d_f)
    ffn2 = ps.linear("proto.ffn2", d_f, d_p)
    g, b = ps.ones("proto.ln.gain", (d_p,)), ps.zeros("proto.ln.bias", (d_p,))
    cls = []
    if with_classifier:
        if literal_form:
            cls = [ps.linear("proto.cls", d_p, L)]
        else:
            cls = [ps.linear("proto.cls1", d_p, d_p), ps.linear("proto.cls2", d_p, L)]
    return ProtoParams(bank, wq, wk, wv, ffn1, ffn2, g, b, cls, literal_form)


def select_prototype(feat_u, bank, mode="mixture", targets=None, training=False):
    """Predicate prototype ``s`` for each union feature.

    ``mixture`` returns a softmax-weighted convex combination of prototype
    rows keyed on a projection of ``feat_u`` and never reads labels.
    ``teacher_forced`` (training only) averages the rows of each pair's
    ground-truth predicates given as a multi-hot ``targets`` array; pairs
    without any positive fall back to the mixture.

    Returns ``(s, weights)`` with ``weights`` a plain array.
    """
    feat_u = nc.as_tensor(feat_u)
    P = bank.prototypes
    query = nc.affine(feat_u, bank.select_w, bank.select_b)
    sims = nc.scale(nc.matmul(query, nc.swapaxes(P, 0, 1)), 1.0 / math.sqrt(P.shape[1]))
    w = nc.softmax(sims, axis=-1)
    if mode == "mixture":
        return nc.matmul(w, P), w.data
    if mode != "teacher_forced":
        raise ConfigError(f"unknown prototype selection mode {mode!r}")
    if not training:
        raise UsageError("teacher_forced prototype selection is only available during training")
    if targets is None:
        raise UsageError("teacher_forced prototype selection needs ground-truth targets")
    t = np.asarray(targets, dtype=w.dtype)
    n = t.sum(axis=-1, keepdims=True)
    has = n > 0
    tf = np.where(has, t / np.where(has, n, 1), 0).astype(w.dtype)
    weights = nc.add(tf, nc.mul(w, (~has).astype(w.dtype)))
    return nc.matmul(weights, P), weights.data


def prototype_embed(feat_u, s, params, mask=None, eps=1e-5):
    """Prototype-embedded union features for each frame.

    ``feat_u`` is ``[F, P, d_v]`` and ``s`` ``[F, P, d_w]``; ``mask``
    (``[F, P]``, True = real pair) keeps padded slots out of the attention.
    Returns ``[F, P, d_p]``.
    """
    feat_u, s = nc.as_tensor(feat_u), nc.as_tensor(s)
    if feat_u.shape[-1] + s.shape[-1] != params.d_f:
        raise DimensionError(f"concat width {feat_u.shape[-1]}+{s.shape[-1]} != {params.d_f}")
    F = nc.concat([feat_u, s], axis=-1)
    q, k, v = nc.affine(F, params.wq), nc.affine(F, params.wk), nc.affine(F, params.wv)
    key_mask = None if mask is None else np.asarray(mask, dtype=bool)[..., None, :]
    att, _ = nc.attention(q, k, v, key_mask)
    F2 = nc.add(F, att)
    h = nc.relu(nc.affine(F2, *params.ffn1))
    return nc.layer_norm(nc.affine(h, *params.ffn2), params.ln_gain, params.ln_bias, eps)


def prototype_logits(proto_feature, params):
    x = nc.as_tensor(proto_feature)
    if params.literal_form:
        return nc.relu(nc.affine(x, *params.classifier[0]))
    h = nc.relu(nc.affine(x, *params.classifier[0]))
    return nc.affine(h, *params.classifier[1])


def prototype_classify(proto_feature, params, mode=None):
    """Per-predicate probabilities; sigmoid by default, softmax when literal-form."""
    mode = mode or ("softmax" if params.literal_form else "sigmoid")
    logits = prototype_logits(proto_feature, params)
    if mode == "softmax":
        return nc.softmax(logits, axis=-1)
    if mode == "sigmoid":
        return nc.sigmoid(logits)
    raise ConfigError(f"unknown classifier mode {mode!r}")


@dataclass
class PropensityTable:
    C: float
    alpha: np.ndarray
    omega: np.ndarray

    def to_dict(self):
        return {"C": self.C, "alpha": self.alpha.tolist(), "omega": self.omega.tolist()}


def propensity(freqs, C=None):
    """Inverse-propensity label weights from training label counts.

    ``alpha_l = 1 / (1 + C * exp(-ln N_l)) = 1 / (1 + C / N_l)`` with
    ``C = ln(N) - 1`` where ``N`` is the number of training pairs, unless
    ``C`` is given.  Labels never seen count as ``N_l = 1``.
    """
    counts = np.maximum(np.asarray(freqs.label_counts, dtype=np.float64), 1.0)
    if C is None:
        N = float(freqs.total)
        if N <= math.e:
            raise ConfigError(f"propensity coefficient C = ln({N:g}) - 1 <= 0; "
                              "too few training pairs, set loss.propensity_c explicitly")
        C = math.log(N) - 1.0
    C = float(C)
    if C < 0:
        raise ConfigError("propensity coefficient C must be >= 0")
    omega = 1.0 + C / counts
    alpha = 1.0 / omega
    return PropensityTable(C, alpha, omega)


def pwce_loss(probs, targets, omega):
    """Label-weighted binary cross-entropy, averaged over the batch.

    ``L = -(1/B) sum_i sum_l w_l [y log p + (1 - y) log(1 - p)]``.
    """
    probs = nc.as_tensor(probs)
    y = np.asarray(targets, dtype=probs.dtype)
    if y.shape != probs.shape:
        raise DimensionError(f"targets {y.shape} vs probabilities {probs.shape}")
    w = np.asarray(omega, dtype=probs.dtype)
    if w.shape != probs.shape[-1:]:
        raise DimensionError(f"weights {w.shape} vs {probs.shape[-1]} labels")
    B = probs.shape[0] if probs.ndim > 1 else 1
    p = nc.clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    ll = nc.add(nc.mul(nc.log(p), y), nc.mul(nc.log(nc.sub(1.0, p)), 1.0 - y))
    return nc.scale(nc.sum_(nc.mul(ll, w)), -1.0 / B)
