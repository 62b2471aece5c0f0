"""Deterministic mini-batch training and checkpoint files.

Checkpoint layout: one JSON manifest line
``{"schema":"peohoi-ckpt/v1","params":[{"name","shape","offset"}],...}``
followed by a contiguous blob of little-endian float32 values in manifest
order.  ``offset`` counts float32 elements from the start of the blob.
"""

from __future__ import annotations

import json
import logging
import math
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numcore as nc
from .config import TrainConfig, from_flat, to_flat
from .data.schema import LabelSpace
from .data.stats import FrequencyTable, compute_frequencies
from .errors import CheckpointError, NonFiniteError, SchemaError, TrainingDiverged
from .model import PackedData, PeoHoiModel
from .objective import cb_focal_loss, total_loss
from .proto import propensity, pwce_loss

log = logging.getLogger(__name__)

CKPT_SCHEMA = "peohoi-ckpt/v1"
_BUFFERS = ("object_words",)


@dataclass
class Checkpoint:
    config: TrainConfig
    label_space: LabelSpace
    dims: tuple
    freqs: FrequencyTable
    state: OrderedDict
    buffers: OrderedDict = field(default_factory=OrderedDict)

    def manifest(self):
        return [(name, list(arr.shape)) for name, arr in self.state.items()]

    def build_model(self):
        model = PeoHoiModel(self.label_space, self.dims, self.config.model, self.config.ablation_mode,
                            seed=self.config.seed, object_words=self.buffers.get("object_words"))
        want, have = set(model.params.names()), set(self.state)
        if want != have:
            missing, extra = sorted(want - have), sorted(have - want)
            raise CheckpointError(f"checkpoint parameters do not match the {self.config.ablation_mode} "
                                  f"wiring (missing {missing[:3]}, unexpected {extra[:3]})")
        model.params.load_state(self.state)
        return model

    @classmethod
    def from_model(cls, model, config, freqs):
        return cls(config, model.label_space, model.dims, freqs, model.params.state(),
                   OrderedDict(object_words=model.object_words.copy()))


def save_checkpoint(ckpt, path):
    entries, blobs, offset = [], [], 0
    for kind, items in (("param", ckpt.state.items()), ("buffer", ckpt.buffers.items())):
        for name, arr in items:
            arr = np.ascontiguousarray(arr, dtype="<f4")
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "kind": kind})
            blobs.append(arr.tobytes())
            offset += arr.size
    header = {
        "schema": CKPT_SCHEMA,
        "params": entries,
        "config": to_flat(ckpt.config),
        "label_space": ckpt.label_space.to_dict(),
        "dims": list(ckpt.dims),
        "freqs": ckpt.freqs.to_dict(),
    }
    data = json.dumps(header, separators=(",", ":")).encode() + b"\n" + b"".join(blobs)
    Path(path).write_bytes(data)


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise CheckpointError(f"{path}: missing manifest line")
    try:
        header = json.loads(raw[:nl])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt manifest: {exc}") from None
    if header.get("schema") != CKPT_SCHEMA:
        raise CheckpointError(f"{path}: checkpoint version {header.get('schema')!r} is not supported "
                              f"(expected {CKPT_SCHEMA!r})")
    blob = np.frombuffer(raw[nl + 1:], dtype="<f4") if (len(raw) - nl - 1) % 4 == 0 else None
    entries = header["params"]
    need = sum(int(np.prod(e["shape"], dtype=np.int64)) for e in entries)
    if blob is None or blob.size != need:
        have = (len(raw) - nl - 1) / 4
        raise CheckpointError(f"{path}: blob holds {have:g} floats but the manifest describes {need}")
    state, buffers = OrderedDict(), OrderedDict()
    for e in entries:
        n = int(np.prod(e["shape"], dtype=np.int64))
        if e["offset"] + n > blob.size:
            raise CheckpointError(f"{path}: entry {e['name']} runs past the end of the blob")
        arr = blob[e["offset"]:e["offset"] + n].astype(np.float32).reshape(e["shape"])
        (buffers if e.get("kind") == "buffer" else state)[e["name"]] = arr
    return Checkpoint(from_flat(header["config"]), LabelSpace.from_dict(header["label_space"]),
                      tuple(header["dims"]), FrequencyTable.from_dict(header["freqs"]), state, buffers)


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m, self.v = {}, {}

    def step(self, params):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p in params:
            m = self.m.get(p.name, 0.0) * self.b1 + (1 - self.b1) * p.grad
            v = self.v.get(p.name, 0.0) * self.b2 + (1 - self.b2) * p.grad * p.grad
            self.m[p.name], self.v[p.name] = m, v
            p.data = (p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


class SGD:
    def __init__(self, lr, momentum=0.0):
        self.lr, self.momentum = lr, momentum
        self.buf = {}

    def step(self, params):
        for p in params:
            g = p.grad
            if self.momentum:
                g = self.buf.get(p.name, 0.0) * self.momentum + g
                self.buf[p.name] = g
            p.data = (p.data - self.lr * g).astype(p.dtype)


@dataclass
class TrainLog:
    steps: list = field(default_factory=list)  # dicts: step, epoch, focal, pwce, total, grad_norm
    epochs: list = field(default_factory=list)  # dicts: epoch, val_map_full, ...
    wall_clock: float = 0.0

    def losses(self, key="total"):
        return [s[key] for s in self.steps]

    def to_dict(self, with_time=False):
        d = {"steps": self.steps, "epochs": self.epochs}
        if with_time:
            d["wall_clock"] = self.wall_clock
        return d


def compute_losses(model, out, freqs, omega, cfg):
    """Returns ``(total, focal, pwce)``; ``pwce`` is None outside ``pen_pwce``."""
    focal = cb_focal_loss(out.pred, out.targets, freqs.class_counts, cfg.loss.beta_cb, cfg.loss.focusing)
    if model.mode != "pen_pwce":
        return focal, focal, None
    pwce = pwce_loss(out.proto_probs, out.targets, omega)
    return total_loss(focal, pwce, cfg.loss.lam), focal, pwce


def clip_gradients(params, max_norm):
    norm = params.grad_norm()
    if max_norm and norm > max_norm:
        s = max_norm / (norm + 1e-12)
        for p in params:
            p.grad = (p.grad * s).astype(p.dtype)
    return norm


def train(train_data, val_data, config: TrainConfig, embeddings=None, evaluate=None, progress=None):
    """Train a relation head; returns ``(Checkpoint, TrainLog)``.

    ``evaluate(model, val_packed)`` -> EvalReport is called every
    ``config.eval_every`` epochs when ``val_data`` is given.
    """
    config.validate()
    if val_data is not None and (val_data.label_space != train_data.label_space
                                 or val_data.dims != train_data.dims):
        raise SchemaError("training and validation sets differ in label space or dims")
    freqs = compute_frequencies(train_data)
    omega = None
    if config.ablation_mode == "pen_pwce":
        omega = propensity(freqs, config.loss.propensity_c).omega
    model = PeoHoiModel(train_data.label_space, train_data.dims, config.model, config.ablation_mode,
                        seed=nc.derive_seed(config.seed, "init"), embeddings=embeddings)
    pk = PackedData(train_data, config.model.window)
    pk_val = PackedData(val_data, config.model.window) if val_data is not None else None
    if config.optimizer == "adam":
        opt = Adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    else:
        opt = SGD(config.learning_rate, config.momentum)
    rng = np.random.default_rng(nc.derive_seed(config.seed, "batches"))
    anchors = pk.anchor_frames
    if len(anchors) == 0:
        raise SchemaError("training set has no pairs")
    per_epoch = math.ceil(len(anchors) / config.batch_size)
    total_steps = config.steps or config.epochs * per_epoch
    n_epochs = math.ceil(total_steps / per_epoch)
    tlog = TrainLog()
    t0 = time.perf_counter()
    step = 0
    for epoch in range(n_epochs):
        order = rng.permutation(anchors)
        for i in range(0, len(order), config.batch_size):
            if step >= total_steps:
                break
            rows = pk.rows_for_frames(order[i:i + config.batch_size])
            try:
                with nc.Tape() as tape:
                    out = model.forward(pk, rows, training=True)
                    loss, focal, pwce = compute_losses(model, out, freqs, omega, config)
                if not np.isfinite(loss.data):
                    raise NonFiniteError("loss")
                tape.backward(loss, model.params)
                gnorm = clip_gradients(model.params, config.clip_norm)
                if not math.isfinite(gnorm):
                    raise NonFiniteError("gradient norm")
            except NonFiniteError as exc:
                raise TrainingDiverged(f"non-finite value at step {step} ({exc}); "
                                       "checkpoint holds the last finite parameters",
                                       Checkpoint.from_model(model, config, freqs), step) from exc
            opt.step(model.params)
            tlog.steps.append({"step": step, "epoch": epoch, "focal": float(focal.data),
                               "pwce": float(pwce.data) if pwce is not None else 0.0,
                               "total": float(loss.data), "grad_norm": gnorm})
            step += 1
            if progress:
                progress(step, total_steps, tlog.steps[-1])
        last = epoch == n_epochs - 1
        if pk_val is not None and evaluate is not None and config.eval_every and \
                ((epoch + 1) % config.eval_every == 0 or last):
            rep = evaluate(model, pk_val, val_data, freqs)
            tlog.epochs.append({"epoch": epoch, "val_map_full": rep.map_full,
                                "val_map_non_rare": rep.map_non_rare, "val_map_rare": rep.map_rare})
            log.info("epoch %d: val mAP full=%.4f", epoch, rep.map_full)
    tlog.wall_clock = time.perf_counter() - t0
    return Checkpoint.from_model(model, config, freqs), tlog
