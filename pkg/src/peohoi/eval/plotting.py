"""Matplotlib figures for the report commands.

Figures use the Agg backend and strip the software/date metadata so that
rerunning a command rewrites byte-identical PNG files.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def _finite(values):
    return [v if v is not None and math.isfinite(v) else 0.0 for v in values]


def loss_curves(tlog, path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    steps = [s["step"] for s in tlog.steps]
    for key in ("total", "focal", "pwce"):
        vals = [s[key] for s in tlog.steps]
        if any(vals):
            ax.plot(steps, vals, label=key, lw=1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    return _save(fig, path)


def per_class_ap(report, path, top=40):
    items = sorted(report.ap.items(), key=lambda kv: (-kv[1], str(kv[0])))[:top]
    fig, ax = plt.subplots(figsize=(max(6, 0.18 * len(items)), 3.5))
    colors = ["tab:blue" if k in report.non_rare_keys else "tab:orange" for k, _ in items]
    ax.bar(np.arange(len(items)), [v for _, v in items], color=colors)
    ax.set_xticks([])
    ax.set_ylim(0, 1)
    ax.set_ylabel("AP")
    ax.set_title(f"per-class AP (top {len(items)}; blue non-rare, orange rare)")
    return _save(fig, path)


def sweep(sweep_report, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    lams = sweep_report.lambdas
    for i, name in enumerate(("Full", "Non-rare", "Rare")):
        ys = [100.0 * r[i] if r else float("nan") for r in sweep_report.rows]
        ax.plot(lams, ys, marker="o", label=name)
    ax.set_xlabel("lambda")
    ax.set_ylabel("mAP (%)")
    ax.legend()
    return _save(fig, path)


def ablation(ablation_report, path):
    rows = ablation_report.rows
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    x = np.arange(3)
    width = 0.8 / len(rows)
    for j, r in enumerate(rows):
        vals = _finite([r["mAP_full"], r["mAP_non_rare"], r["mAP_rare"]])
        ax.bar(x + j * width, [100.0 * v for v in vals], width, label=r["mode"])
    ax.set_xticks(x + width * (len(rows) - 1) / 2)
    ax.set_xticklabels(["Full", "Non-rare", "Rare"])
    ax.set_ylabel("mAP (%)")
    ax.legend()
    return _save(fig, path)


def separability(rep, path):
    fig, ax = plt.subplots(figsize=(4, 3.5))
    vals = _finite([rep.before, rep.after])
    ax.bar(["raw union", "prototype-embedded"], vals, color=["tab:gray", "tab:green"])
    ax.axhline(0, color="black", lw=0.5)
    ax.set_ylabel("silhouette")
    return _save(fig, path)
