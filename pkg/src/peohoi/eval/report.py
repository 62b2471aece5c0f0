"""Report writers: JSON, aligned-text tables and per-triplet CSV.

All writers are deterministic: keys are sorted, floats are printed with
fixed precision in text and ``repr`` precision in JSON, and NaN becomes
``null`` so the JSON stays strict.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj):
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps(obj))


def _pct(v):
    return "   n/a" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{100.0 * v:6.2f}"


def _table(header, rows):
    cols = [header] + rows
    widths = [max(len(str(r[i])) for r in cols) for i in range(len(header))]
    line = lambda r: "  ".join(str(c).rjust(w) for c, w in zip(r, widths)).rstrip()
    rule = "-" * len(line(header))
    return "\n".join([line(header), rule] + [line(r) for r in rows]) + "\n"


def map_table(named_reports):
    """mAP (%) table with Full / Non-rare / Rare columns, one row per method."""
    rows = [[name, _pct(r.map_full), _pct(r.map_non_rare), _pct(r.map_rare)] for name, r in named_reports]
    out = _table(["Method", "Full", "Non-rare", "Rare"], rows)
    counts = "  ".join(f"{name}: {r.n_full} triplets ({r.n_non_rare} non-rare, {r.n_rare} rare)"
                       for name, r in named_reports)
    return out + counts + "\n"


def sweep_table(sweep):
    rows = []
    for lam, r in zip(sweep.lambdas, sweep.rows):
        if r is None:
            rows.append([f"{lam:g}", "failed", "", ""])
        else:
            rows.append([f"{lam:g}"] + [_pct(v) for v in r])
    if sweep.variances is not None:
        rows.append(["VAR"] + [f"{v:6.3f}" for v in sweep.variances])
    return _table(["lambda", "Full", "Non-rare", "Rare"], rows)


def ablation_table(ablation):
    mark = lambda b: "Y" if b else "-"
    rows = [[str(r["group"]), mark(r["baseline"]), mark(r["pen"]), mark(r["pwce"]),
             _pct(r["mAP_full"]), _pct(r["mAP_non_rare"]), _pct(r["mAP_rare"])] for r in ablation.rows]
    out = _table(["Group", "Baseline", "PEN", "L_PWCE", "Full", "Non-rare", "Rare"], rows)
    deltas = ablation.deltas()
    lines = [f"group {r['group']} vs baseline: " + ", ".join(
        f"{k[4:]} {100.0 * d[k]:+.2f}" for k in ("mAP_full", "mAP_non_rare", "mAP_rare"))
        for r, d in zip(ablation.rows[1:], deltas[1:])]
    return out + "\n".join(lines) + "\n"


def separability_text(rep):
    if not rep.computable:
        return f"separability not computable: {rep.note}\n"
    classes = ", ".join(f"{k}:{v}" for k, v in sorted(rep.class_counts.items()))
    return (f"silhouette before prototype embedding: {rep.before:.4f}\n"
            f"silhouette after prototype embedding:  {rep.after:.4f}\n"
            f"classes (label:samples) with >= {rep.min_count} samples: {classes}\n")


def write_ap_csv(path, report, label_space=None):
    """One line per evaluated class: object, predicate, AP, split."""
    non_rare = report.non_rare_keys
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if report.average == "triplet":
            w.writerow(["object", "predicate", "ap", "split"])
            for (o, p), ap in sorted(report.ap.items()):
                oname = label_space.objects[o] if label_space else o
                pname = label_space.predicates[p] if label_space else p
                w.writerow([oname, pname, f"{ap:.6f}", "non_rare" if (o, p) in non_rare else "rare"])
        else:
            w.writerow(["predicate", "ap", "split"])
            for p, ap in sorted(report.ap.items()):
                pname = label_space.predicates[p] if label_space else p
                w.writerow([pname, f"{ap:.6f}", "non_rare" if p in non_rare else "rare"])


def write_rows_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(["" if v is None else (f"{v:.6f}" if isinstance(v, float) else v) for v in r])


def sweep_rows(sweep):
    return [[lam] + (list(r) if r else [None] * 3) for lam, r in zip(sweep.lambdas, sweep.rows)]


def ablation_rows(ablation):
    return [[r["group"], r["mode"], int(r["baseline"]), int(r["pen"]), int(r["pwce"]),
             r["mAP_full"], r["mAP_non_rare"], r["mAP_rare"]] for r in ablation.rows]


def train_log_rows(tlog):
    return [[s["step"], s["epoch"], s["focal"], s["pwce"], s["total"], s["grad_norm"]] for s in tlog.steps]
