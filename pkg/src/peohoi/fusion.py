"""Fused human-object pair embeddings.

Two variants share the shape ``FC(concat(...))``:

* plain:      ``[f_h, f_o, f_u, word, gaze]``
* prototype:  ``[f_h, f_o, proto_feature, word, gaze]``

The concatenation order is fixed so checkpoints stay portable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import DimensionError


@dataclass
class FusionParams:
    fc1: tuple | None = None  # (W, b) of the plain variant
    fc2: tuple | None = None  # (W, b) of the prototype variant

    def parameters(self):
        return [p for fc in (self.fc1, self.fc2) if fc for p in fc]


def init_fusion(ps, d_v, d_w, d_g, d_model, d_p=None):
    """Register fusion weights in ``ps``; pass ``d_p`` for the prototype variant."""
    if d_p is None:
        return FusionParams(fc1=ps.linear("fusion.fc1", 3 * d_v + d_w + d_g, d_model))
    return FusionParams(fc2=ps.linear("fusion.fc2", 2 * d_v + d_p + d_w + d_g, d_model))


def _fuse(parts, fc, names):
    W, b = fc
    total = sum(p.shape[-1] for p in parts)
    if total != W.shape[0]:
        dims = ", ".join(f"{n}={p.shape[-1]}" for n, p in zip(names, parts))
        raise DimensionError(f"fusion input width {total} ({dims}) != weight rows {W.shape[0]}")
    return nc.affine(nc.concat(parts, axis=-1), W, b)


def fuse_pair(f_h, f_o, f_u, word, gaze, params):
    """Plain fusion of appearance, union, word and gaze features (any leading batch dims)."""
    parts = [nc.as_tensor(x) for x in (f_h, f_o, f_u, word, gaze)]
    return _fuse(parts, params.fc1, ("f_h", "f_o", "f_u", "word", "gaze"))


def fuse_pair_prototype(f_h, f_o, proto_feature, word, gaze, params):
    """Fusion that replaces the raw union feature with the prototype-embedded one."""
    parts = [nc.as_tensor(x) for x in (f_h, f_o, proto_feature, word, gaze)]
    return _fuse(parts, params.fc2, ("f_h", "f_o", "proto", "word", "gaze"))


def fuse_record(rec, word, params, proto_feature=None):
    """Fuse a single :class:`~peohoi.data.PairRecord`; returns a 1-D embedding."""
    word = np.asarray(word)
    if proto_feature is None:
        out = fuse_pair(rec.f_h[None], rec.f_o[None], rec.f_u[None], word[None], rec.gaze[None], params)
    else:
        pf = nc.reshape(nc.as_tensor(proto_feature), (1, -1))
        out = fuse_pair_prototype(rec.f_h[None], rec.f_o[None], pf, word[None], rec.gaze[None], params)
    return nc.reshape(out, (out.shape[-1],))
