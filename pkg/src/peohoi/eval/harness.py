"""Experiment harnesses: evaluation, lambda sweep, ablation and separability."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from ..config import ModelConfig, TrainConfig
from ..data.stats import compute_frequencies
from ..data.synth import SynthConfig, generate_synthetic
from ..errors import PeoHoiError
from ..model import PackedData
from ..trainer import train
from .metrics import Predictions, map_report, sample_variance, separability

log = logging.getLogger(__name__)

DEFAULT_LAMBDAS = (0.5, 0.8, 1.0, 1.5)
ABLATION_ROWS = (
    # group, mode, baseline, pen, pwce
    (0, "baseline", True, False, False),
    (1, "pen", True, True, False),
    (2, "pen_pwce", True, True, True),
)


def predict_dataset(model, dataset, pk=None):
    pk = pk or PackedData(dataset, model.cfg.window)
    return Predictions(pk.row_keys(), model.predict(pk))


def evaluate(model, dataset, freqs, rare_threshold=25, average="triplet", threads=1, pk=None, config=None):
    preds = predict_dataset(model, dataset, pk)
    return map_report(preds, dataset, freqs, rare_threshold, average, threads, config)


def val_callback(rare_threshold=25):
    def cb(model, pk, dataset, freqs):
        return evaluate(model, dataset, freqs, rare_threshold, pk=pk)
    return cb


@dataclass
class SweepReport:
    lambdas: list
    rows: list  # (full, non_rare, rare) or None on failure
    variances: tuple | None
    errors: dict = field(default_factory=dict)

    def to_dict(self):
        return {"rows": [{"lambda": l, "mAP_full": r[0], "mAP_non_rare": r[1], "mAP_rare": r[2]}
                         if r else {"lambda": l, "error": self.errors.get(l)}
                         for l, r in zip(self.lambdas, self.rows)],
                "variance": None if self.variances is None else
                dict(zip(("full", "non_rare", "rare"), self.variances))}


def lambda_sweep(train_data, val_data, base_config, lambdas=DEFAULT_LAMBDAS, embeddings=None,
                 rare_threshold=None, threads=1):
    """Train one full model per lambda (shared seed) and tabulate mAP.

    Variances are unbiased sample variances of mAP in percent, one per
    column, present when at least two runs succeeded.
    """
    if not lambdas:
        raise ValueError("lambda list is empty")
    thr = rare_threshold or base_config.loss.rare_threshold
    freqs = compute_frequencies(train_data)
    rows, errors = [], {}
    for lam in lambdas:
        cfg = replace(base_config, ablation_mode="pen_pwce", model=replace(base_config.model),
                      loss=replace(base_config.loss, lam=float(lam)))
        try:
            ckpt, _ = train(train_data, None, cfg, embeddings=embeddings)
            rep = evaluate(ckpt.build_model(), val_data, freqs, thr, threads=threads)
            rows.append(rep.row())
        except PeoHoiError as exc:
            log.error("lambda=%s failed: %s", lam, exc)
            errors[lam] = str(exc)
            rows.append(None)
    ok = [r for r in rows if r]
    variances = None
    if len(ok) >= 2:
        variances = tuple(sample_variance([100.0 * r[i] for r in ok]) for i in range(3))
    return SweepReport([float(l) for l in lambdas], rows, variances, errors)


@dataclass
class AblationReport:
    rows: list  # dicts with group, mode, flags and mAP triple

    def deltas(self):
        base = self.rows[0]
        return [{k: r[k] - base[k] for k in ("mAP_full", "mAP_non_rare", "mAP_rare")} for r in self.rows]

    def to_dict(self):
        return {"rows": self.rows, "deltas_vs_baseline": self.deltas()}


def ablation(train_data, val_data, base_config, embeddings=None, rare_threshold=None, threads=1,
             return_models=False):
    """Run the three wirings with a shared seed and tabulate mAP."""
    thr = rare_threshold or base_config.loss.rare_threshold
    freqs = compute_frequencies(train_data)
    rows, models = [], {}
    for group, mode, b, pen, pwce in ABLATION_ROWS:
        cfg = replace(base_config, ablation_mode=mode, model=replace(base_config.model),
                      loss=replace(base_config.loss))
        ckpt, _ = train(train_data, None, cfg, embeddings=embeddings)
        model = ckpt.build_model()
        rep = evaluate(model, val_data, freqs, thr, threads=threads)
        rows.append({"group": group, "mode": mode, "baseline": b, "pen": pen, "pwce": pwce,
                     "mAP_full": rep.map_full, "mAP_non_rare": rep.map_non_rare, "mAP_rare": rep.map_rare})
        models[mode] = model
    report = AblationReport(rows)
    return (report, models) if return_models else report


def primary_action_labels(pk):
    """Class label per window row for separability: the single action label, or -1."""
    S = pk.label_space.num_spatial
    act = pk.row_targets()[:, S:]
    single = act.sum(axis=1) == 1
    return np.where(single, act.argmax(axis=1), -1)


def separability_study(model, dataset, min_count=200, per_class=None, seed=0):
    """Silhouette of raw union features vs. prototype-embedded features on ``dataset``."""
    if model.proto is None:
        raise PeoHoiError("separability needs a model with the prototype module")
    pk = PackedData(dataset, model.cfg.window)
    _, feats = model.predict(pk, with_features=True)
    w = pk.windows
    raw = pk.f_u[w.anchor_frame, w.anchor_slot].astype(np.float64)
    labels = primary_action_labels(pk)
    keep = labels >= 0
    return separability(raw[keep], feats[keep], labels[keep], min_count, per_class, seed)


# Standard debiasing benchmark: biased, noisy, long-tailed synthetic data with
# a test split large enough for the default separability threshold.
BENCHMARK_SYNTH = {"bias_strength": 0.8, "noise_rate": 0.2, "tail_exponent": 1.0, "num_test_videos": 60}
BENCHMARK_MODEL = {"d_model": 64, "heads": 4}


def benchmark_data(seed):
    return generate_synthetic(SynthConfig(seed=seed, **BENCHMARK_SYNTH))


def benchmark_config(seed, mode="pen_pwce"):
    return TrainConfig(seed=seed, ablation_mode=mode, model=ModelConfig(**BENCHMARK_MODEL))


def benchmark_seed(seed, min_count=200, modes=("baseline", "pen_pwce")):
    """Train each wiring on one benchmark seed; returns mAP rows and separability."""
    train_data, test_data, _ = benchmark_data(seed)
    freqs = compute_frequencies(train_data)
    out = {"seed": seed}
    for mode in modes:
        ckpt, _ = train(train_data, None, benchmark_config(seed, mode))
        model = ckpt.build_model()
        out[mode] = evaluate(model, test_data, freqs).row()
        if mode == "pen_pwce":
            out["separability"] = separability_study(model, test_data, min_count=min_count, seed=seed)
    return out
