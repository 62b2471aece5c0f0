"""End-to-end relation head: fusion, prototype embedding, encoders and heads.

Datasets are packed once into padded ``[frames, max_pairs, ...]`` arrays so a
training step only fancy-indexes the frames its windows need.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .config import ModelConfig
from .data.embeddings import EmbeddingTable
from .encoder import (build_windows, gather_windows, init_encoder, predict_heads, spatial_encode,
                      temporal_encode, WindowIndex)
from .errors import ConfigError, SchemaError
from .fusion import fuse_pair, fuse_pair_prototype, init_fusion
from .proto import init_proto, prototype_classify, prototype_embed, select_prototype


class PackedData:
    """Padded array view of a :class:`~peohoi.data.Dataset` plus its window index."""

    def __init__(self, dataset, window):
        ls = dataset.label_space
        frames = list(dataset.frames())
        self.label_space = ls
        self.dims = dataset.dims
        self.num_frames = len(frames)
        P = max([len(fr.pairs) for fr in frames] + [1])
        self.max_pairs = P
        d_v, _, d_g = dataset.dims
        F, L = len(frames), ls.num_predicates
        self.f_h = np.zeros((F, P, d_v), np.float32)
        self.f_o = np.zeros((F, P, d_v), np.float32)
        self.f_u = np.zeros((F, P, d_v), np.float32)
        self.gaze = np.zeros((F, P, d_g), np.float32)
        self.obj = np.full((F, P), -1, np.int64)
        self.mask = np.zeros((F, P), bool)
        self.targets = np.zeros((F, P, L), np.float32)
        self.frame_keys = []
        self.frame_video = []
        for i, fr in enumerate(frames):
            self.frame_keys.append((fr.video, fr.frame))
            self.frame_video.append(fr.video)
            for s, p in enumerate(fr.pairs):
                self.f_h[i, s], self.f_o[i, s], self.f_u[i, s], self.gaze[i, s] = p.f_h, p.f_o, p.f_u, p.gaze
                self.obj[i, s] = p.obj
                self.mask[i, s] = True
                self.targets[i, s, list(p.predicate_indices(ls))] = 1.0
        parts, start = [], 0
        self.pair_keys = [[p.key for p in fr.pairs] for fr in frames]
        for vid, vframes in dataset.videos.items():
            n = len(vframes)
            ids = list(range(start, start + n))
            parts.append(build_windows(self.pair_keys[start:start + n], window, ids))
            start += n
        self.windows = _concat_windows(parts, window)
        self.window = window
        rows = {}
        for r, f in enumerate(self.windows.anchor_frame):
            rows.setdefault(int(f), []).append(r)
        self.anchor_frames = np.array(sorted(rows), dtype=np.int64)
        self.rows_by_frame = {f: np.array(r, dtype=np.int64) for f, r in rows.items()}

    @property
    def num_rows(self):
        return len(self.windows)

    def row_keys(self):
        """``(video, frame, h_id, o_id)`` of each window row."""
        out = []
        for f, s in zip(self.windows.anchor_frame, self.windows.anchor_slot):
            vid, frame = self.frame_keys[f]
            h, o = self.pair_keys[f][s]
            out.append((vid, frame, h, o))
        return out

    def row_targets(self, rows=None):
        w = self.windows
        rows = slice(None) if rows is None else rows
        return self.targets[w.anchor_frame[rows], w.anchor_slot[rows]]

    def row_objects(self, rows=None):
        w = self.windows
        rows = slice(None) if rows is None else rows
        return self.obj[w.anchor_frame[rows], w.anchor_slot[rows]]

    def rows_for_frames(self, frames):
        parts = [self.rows_by_frame[int(f)] for f in frames if int(f) in self.rows_by_frame]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)


def _concat_windows(parts, W):
    if not parts:
        z = np.zeros(0, dtype=np.int64)
        return WindowIndex(z, z, z.reshape(0, W), z.reshape(0, W))
    return WindowIndex(*(np.concatenate([getattr(p, n) for p in parts]) for n in
                         ("anchor_frame", "anchor_slot", "frames", "slots")))


@dataclass
class ForwardOut:
    pred: nc.Tensor  # [B, L] spatial then action scores
    targets: np.ndarray
    proto_probs: nc.Tensor | None
    proto_features: nc.Tensor | None
    ho_st: nc.Tensor


class PeoHoiModel:
    """Relation head in one of three wirings.

    ``baseline`` fuses raw union features; ``pen`` inserts the prototype
    module; ``pen_pwce`` additionally carries the prototype classifier whose
    output feeds the propensity-weighted loss.
    """

    def __init__(self, label_space, dims, cfg: ModelConfig, mode="pen_pwce", seed=0,
                 embeddings: EmbeddingTable | None = None, object_words=None):
        cfg.validate()
        if mode not in ("baseline", "pen", "pen_pwce"):
            raise ConfigError(f"unknown ablation mode {mode!r}")
        self.label_space = label_space
        self.dims = tuple(dims)
        self.cfg = cfg
        self.mode = mode
        self.seed = seed
        d_v, d_w, d_g = self.dims
        table = embeddings or EmbeddingTable(d_w)
        if table.dim != d_w:
            raise SchemaError(f"embedding dim {table.dim} != dataset d_w {d_w}")
        if object_words is None:
            object_words = table.matrix(list(label_space.objects))
        self.object_words = np.asarray(object_words, dtype=np.float32)
        self.d_p = cfg.d_p or d_v
        self.params = nc.ParamSet(seed=seed)
        self.proto_passthrough = False
        if mode == "baseline":
            self.fusion = init_fusion(self.params, d_v, d_w, d_g, cfg.d_model)
            self.proto = None
        else:
            self.fusion = init_fusion(self.params, d_v, d_w, d_g, cfg.d_model, d_p=self.d_p)
            self.proto = init_proto(self.params, d_v, d_w, self.d_p,
                                    table.matrix(list(label_space.predicates)),
                                    literal_form=cfg.literal_form,
                                    with_classifier=(mode == "pen_pwce"))
        self.encoder = init_encoder(self.params, cfg.d_model, d_g, label_space.num_spatial,
                                    label_space.num_action, heads=cfg.heads, ffn_mult=cfg.ffn_mult,
                                    pe_base=cfg.pe_base, eps=cfg.ln_eps)

    @property
    def dtype(self):
        return self.params.dtype

    def astype(self, dtype):
        self.params.astype(dtype)
        return self

    def check_compatible(self, pk):
        if pk.label_space != self.label_space:
            raise SchemaError("dataset label space does not match the model's label space")
        if tuple(pk.dims) != self.dims:
            raise SchemaError(f"dataset dims {pk.dims} do not match model dims {self.dims}")

    # -- per-frame stage ---------------------------------------------------

    def _words(self, obj):
        words = self.object_words[np.maximum(obj, 0)] * (obj >= 0)[..., None]
        return words.astype(self.dtype)

    def frame_forward(self, pk, frames, training=False):
        """Fusion, prototype embedding and spatial encoding of ``frames``.

        Returns ``(spatial_out, proto_features, proto_probs)``; the last two
        are None when the wiring does not use them.
        """
        dt = self.dtype
        f_h, f_o, f_u = (nc.Tensor(a[frames], dtype=dt) for a in (pk.f_h, pk.f_o, pk.f_u))
        gaze = nc.Tensor(pk.gaze[frames], dtype=dt)
        mask = pk.mask[frames]
        words = self._words(pk.obj[frames])
        proto_feat = proto_probs = None
        if self.proto is None:
            x = fuse_pair(f_h, f_o, f_u, words, gaze, self.fusion)
        else:
            if self.proto_passthrough:
                proto_feat = f_u
            else:
                # label-driven selection exists only at training time
                mode = self.cfg.select_mode if training else "mixture"
                s, _ = select_prototype(f_u, self.proto.bank, mode,
                                        targets=pk.targets[frames], training=training)
                proto_feat = prototype_embed(f_u, s, self.proto, mask, eps=self.cfg.ln_eps)
            if self.proto.classifier:
                proto_probs = prototype_classify(proto_feat, self.proto)
            x = fuse_pair_prototype(f_h, f_o, proto_feat, words, gaze, self.fusion)
        x = nc.mul(x, mask[..., None].astype(dt))
        return spatial_encode(x, self.encoder, mask), proto_feat, proto_probs

    # -- windowed stage ----------------------------------------------------

    def forward(self, pk, rows, training=False):
        """Predictions for window rows ``rows`` of ``pk``."""
        w = pk.windows
        rows = np.asarray(rows, dtype=np.int64)
        idx = WindowIndex(w.anchor_frame[rows], w.anchor_slot[rows], w.frames[rows], w.slots[rows])
        needed = np.unique(np.concatenate([idx.frames[idx.valid], idx.anchor_frame]))
        frame_rows = np.full(pk.num_frames, -1, dtype=np.int64)
        frame_rows[needed] = np.arange(len(needed))
        spatial, proto_feat, proto_probs = self.frame_forward(pk, needed, training=training)
        batch = gather_windows(spatial, pk.gaze[needed], idx, frame_rows)
        ho_st = temporal_encode(batch, self.encoder)
        pred = predict_heads(ho_st, self.encoder).combined
        anchor_flat = frame_rows[idx.anchor_frame] * pk.max_pairs + idx.anchor_slot
        pp = pf = None
        if proto_feat is not None:
            pf = nc.gather_rows(nc.reshape(proto_feat, (-1, proto_feat.shape[-1])), anchor_flat)
        if proto_probs is not None:
            pp = nc.gather_rows(nc.reshape(proto_probs, (-1, proto_probs.shape[-1])), anchor_flat)
        return ForwardOut(pred, pk.row_targets(rows), pp, pf, ho_st)

    def predict(self, pk, chunk_frames=64, with_features=False):
        """Scores ``[num_rows, L]`` for every window row, in row order."""
        self.check_compatible(pk)
        scores = np.zeros((pk.num_rows, self.label_space.num_predicates), dtype=np.float64)
        feats = np.zeros((pk.num_rows, self.d_p), dtype=np.float64) if with_features and self.proto else None
        frames = pk.anchor_frames
        for i in range(0, len(frames), chunk_frames):
            rows = pk.rows_for_frames(frames[i:i + chunk_frames])
            out = self.forward(pk, rows, training=False)
            scores[rows] = out.pred.data
            if feats is not None:
                feats[rows] = out.proto_features.data
        return (scores, feats) if with_features else scores
