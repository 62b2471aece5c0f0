"""Command-line entry point: ``peohoi <subcommand> [flags]``.

Exit codes: 0 success, 1 validation error (bad flags, config, schema or a
failed check), 2 runtime failure.  Every subcommand echoes its resolved
configuration, writes a JSON result plus a text summary into ``--out`` and
reproduces both byte-identically on rerun.  Wall-clock times go to stderr only.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

from . import __version__
from .config import TrainConfig, apply_overrides, load_config_file, to_flat
from .data.embeddings import load_embeddings
from .data.io import load_dataset, write_dataset
from .data.synth import SynthConfig, generate_synthetic
from .errors import ConfigError, NonFiniteError, PeoHoiError, TrainingDiverged
from .eval import plotting
from .eval.harness import DEFAULT_LAMBDAS, ablation, evaluate, lambda_sweep, separability_study, val_callback
from .eval.report import (ablation_rows, ablation_table, dumps, map_table, separability_text, sweep_rows,
                          sweep_table, train_log_rows, write_ap_csv, write_json, write_rows_csv)
from .trainer import load_checkpoint, save_checkpoint, train

log = logging.getLogger("peohoi")


class _ArgError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgError(f"{self.prog}: {message}")


def _lambdas(text):
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid lambda list {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("lambda list is empty")
    return vals


def build_parser():
    p = _Parser(prog="peohoi", description="Debiased HOI relation head: data, training and evaluation.")
    p.add_argument("--version", action="version", version=f"peohoi {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--out", required=True, type=Path, help="output directory")
        sp.add_argument("--config", type=Path, help="flat JSON of dotted keys, overridden by flags")
        if seed:
            sp.add_argument("--seed", type=int, help="root seed")

    def training(sp):
        sp.add_argument("--train", required=True, type=Path, help="training dataset (JSONL)")
        sp.add_argument("--val", type=Path, help="validation dataset (JSONL)")
        sp.add_argument("--embeddings", type=Path, help="word vectors, one 'token v1 ... vD' per line")
        sp.add_argument("--mode", choices=("baseline", "pen", "pen_pwce"))
        sp.add_argument("--window", type=int, help="temporal window length (default 5)")
        sp.add_argument("--steps", type=int, help="fixed number of optimiser steps")
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--rare-threshold", type=int, help="rare split threshold (default 25)")
        sp.add_argument("--threads", type=int, default=1, help="parallel evaluation threads")

    sp = sub.add_parser("synth", help="generate synthetic train/test sets and the generator ledger")
    common(sp)
    sp.add_argument("--num-videos", type=int)
    sp.add_argument("--num-test-videos", type=int)
    sp.add_argument("--bias-strength", type=float)
    sp.add_argument("--noise-rate", type=float)
    sp.add_argument("--tail-exponent", type=float)

    sp = sub.add_parser("train", help="train one model and write a checkpoint")
    common(sp)
    training(sp)
    sp.add_argument("--lambda", dest="lam", type=float, help="weight of the propensity-weighted loss")

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    sp.add_argument("--out", required=True, type=Path)
    sp.add_argument("--checkpoint", required=True, type=Path)
    sp.add_argument("--data", required=True, type=Path)
    sp.add_argument("--rare-threshold", type=int)
    sp.add_argument("--average", choices=("triplet", "predicate"), default="triplet")
    sp.add_argument("--threads", type=int, default=1)

    sp = sub.add_parser("sweep", help="lambda sensitivity sweep")
    common(sp)
    training(sp)
    sp.add_argument("--lambda", dest="lams", type=_lambdas, default=list(DEFAULT_LAMBDAS),
                    help="comma-separated lambda values (default 0.5,0.8,1.0,1.5)")

    sp = sub.add_parser("ablate", help="baseline / prototype / full-objective ablation")
    common(sp)
    training(sp)
    sp.add_argument("--lambda", dest="lam", type=float)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    sp.add_argument("--out", type=Path, help="optional output directory")
    sp.add_argument("--precision", choices=("f32", "f64"), default="f64")
    sp.add_argument("--tol", type=float, help="per-module tolerance (default 1e-5 in f64)")
    sp.add_argument("--e2e-tol", type=float, help="end-to-end tolerance (default 1e-4 in f64)")
    sp.add_argument("--eps", type=float, help="finite-difference step")
    sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("embed-stats", help="silhouette of union features before/after prototype embedding")
    sp.add_argument("--out", required=True, type=Path)
    sp.add_argument("--checkpoint", required=True, type=Path)
    sp.add_argument("--data", required=True, type=Path)
    sp.add_argument("--min-count", type=int, default=200,
                    help="classes need this many samples (200; 400 for larger corpora)")
    sp.add_argument("--per-class", type=int, help="samples per class (default: min-count)")
    sp.add_argument("--seed", type=int, default=0)
    return p


# -- helpers -------------------------------------------------------------------

def _outdir(path):
    path.mkdir(parents=True, exist_ok=True)
    return path


def _emit(out, name, result, summary):
    """Write ``name.json`` and ``name.txt``; print the summary."""
    write_json(out / f"{name}.json", result)
    (out / f"{name}.txt").write_text(summary)
    sys.stdout.write(summary)


def _ref(path):
    """Location-independent reference to an input file."""
    return {"file": path.name, "sha256": hashlib.sha256(path.read_bytes()).hexdigest()}


def _echo(config):
    sys.stdout.write("resolved config:\n" + dumps(config))


def _train_config(args, extra=None):
    cfg = TrainConfig()
    if args.config:
        cfg = apply_overrides(cfg, load_config_file(args.config))
    flags = {}
    for flag, key in (("seed", "train.seed"), ("mode", "train.ablation_mode"), ("window", "model.window"),
                      ("steps", "train.steps"), ("epochs", "train.epochs"),
                      ("rare_threshold", "loss.rare_threshold"), ("lam", "loss.lambda")):
        v = getattr(args, flag, None)
        if v is not None:
            flags[key] = v
    flags.update(extra or {})
    return apply_overrides(cfg, flags)


def _inputs(args):
    return {k: _ref(getattr(args, k)) for k in ("train", "val", "embeddings") if getattr(args, k, None)}


def _datasets(args):
    train_data = load_dataset(args.train)
    val_data = load_dataset(args.val) if args.val else None
    emb = load_embeddings(args.embeddings, train_data.d_w) if args.embeddings else None
    return train_data, val_data, emb


def _progress(total_every=100):
    def cb(step, total, rec):
        if step % total_every == 0 or step == total:
            log.info("step %d/%d loss %.4f", step, total, rec["total"])
    return cb


# -- subcommands ---------------------------------------------------------------

def cmd_synth(args):
    base = {}
    if args.config:
        raw = load_config_file(args.config)
        names = {f.name for f in fields(SynthConfig)}
        for k, v in raw.items():
            key = k[6:] if k.startswith("synth.") else k
            if key not in names:
                raise ConfigError(f"unknown synth config key {k!r}")
            base[key] = v
    for flag in ("seed", "num_videos", "num_test_videos", "bias_strength", "noise_rate", "tail_exponent"):
        v = getattr(args, flag)
        if v is not None:
            base[flag] = v
    if "seed" not in base:
        raise ConfigError("synth needs an explicit --seed (or 'seed' in --config)")
    cfg = SynthConfig(**base)
    _echo(asdict(cfg))
    train_data, test_data, ledger = generate_synthetic(cfg)
    out = _outdir(args.out)
    write_dataset(train_data, out / "train.jsonl")
    write_dataset(test_data, out / "test.jsonl")
    write_json(out / "ledger.json", ledger)
    result = {"config": asdict(cfg), "train_pairs": train_data.num_pairs, "test_pairs": test_data.num_pairs,
              "files": ["train.jsonl", "test.jsonl", "ledger.json"]}
    summary = (f"synthetic data seed={cfg.seed}: {train_data.num_pairs} train pairs, "
               f"{test_data.num_pairs} test pairs\n")
    _emit(out, "synth", result, summary)
    return 0


def cmd_train(args):
    cfg = _train_config(args)
    _echo(to_flat(cfg))
    train_data, val_data, emb = _datasets(args)
    out = _outdir(args.out)
    evaluate_cb = val_callback(cfg.loss.rare_threshold) if val_data is not None else None
    try:
        ckpt, tlog = train(train_data, val_data, cfg, embeddings=emb, evaluate=evaluate_cb,
                           progress=_progress())
    except TrainingDiverged as exc:
        save_checkpoint(exc.checkpoint, out / "last_good.ckpt")
        raise
    save_checkpoint(ckpt, out / "model.ckpt")
    print(f"wall clock: {tlog.wall_clock:.2f}s", file=sys.stderr)
    write_rows_csv(out / "train_log.csv", ["step", "epoch", "focal", "pwce", "total", "grad_norm"],
                   train_log_rows(tlog))
    plotting.loss_curves(tlog, out / "loss.png")
    result = {"config": to_flat(cfg), "inputs": _inputs(args), "log": tlog.to_dict(), "checkpoint": "model.ckpt"}
    last = tlog.steps[-1]
    lines = [f"trained {cfg.ablation_mode} for {len(tlog.steps)} steps; "
             f"loss {tlog.steps[0]['total']:.4f} -> {last['total']:.4f}"]
    for e in tlog.epochs:
        lines.append(f"epoch {e['epoch']}: val mAP full {100 * e['val_map_full']:.2f}")
    _emit(out, "train", result, "\n".join(lines) + "\n")
    return 0


def cmd_eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data)
    thr = args.rare_threshold if args.rare_threshold is not None else ckpt.config.loss.rare_threshold
    config = {"checkpoint": _ref(args.checkpoint), "data": _ref(args.data), "rare_threshold": thr,
              "average": args.average, "train": to_flat(ckpt.config)}
    _echo(config)
    if data.label_space != ckpt.label_space:
        raise ConfigError("label space of the dataset does not match the checkpoint "
                          f"({data.label_space.num_predicates} vs {ckpt.label_space.num_predicates} predicates, "
                          f"{len(data.label_space.objects)} vs {len(ckpt.label_space.objects)} objects)")
    model = ckpt.build_model()
    rep = evaluate(model, data, ckpt.freqs, thr, args.average, args.threads, config=config)
    out = _outdir(args.out)
    write_ap_csv(out / "eval_ap.csv", rep, data.label_space)
    plotting.per_class_ap(rep, out / "per_class_ap.png")
    _emit(out, "eval", rep.to_dict(), map_table([(ckpt.config.ablation_mode, rep)]))
    return 0


def cmd_sweep(args):
    cfg = _train_config(args, {"train.ablation_mode": "pen_pwce"})
    _echo({**to_flat(cfg), "lambdas": args.lams})
    train_data, val_data, emb = _datasets(args)
    if val_data is None:
        raise ConfigError("sweep needs --val")
    rep = lambda_sweep(train_data, val_data, cfg, args.lams, embeddings=emb, threads=args.threads)
    out = _outdir(args.out)
    write_rows_csv(out / "sweep.csv", ["lambda", "map_full", "map_non_rare", "map_rare"], sweep_rows(rep))
    plotting.sweep(rep, out / "sweep.png")
    _emit(out, "sweep", {"config": to_flat(cfg), "inputs": _inputs(args), **rep.to_dict()}, sweep_table(rep))
    return 0 if all(rep.rows) else 2


def cmd_ablate(args):
    cfg = _train_config(args)
    _echo(to_flat(cfg))
    train_data, val_data, emb = _datasets(args)
    if val_data is None:
        raise ConfigError("ablate needs --val")
    rep = ablation(train_data, val_data, cfg, embeddings=emb, threads=args.threads)
    out = _outdir(args.out)
    write_rows_csv(out / "ablation.csv", ["group", "mode", "baseline", "pen", "pwce", "map_full",
                                          "map_non_rare", "map_rare"], ablation_rows(rep))
    plotting.ablation(rep, out / "ablation.png")
    _emit(out, "ablation", {"config": to_flat(cfg), "inputs": _inputs(args), **rep.to_dict()}, ablation_table(rep))
    return 0


def cmd_gradcheck(args):
    from .gradcheck import run_suite
    config = {"precision": args.precision, "tol": args.tol, "e2e_tol": args.e2e_tol, "eps": args.eps,
              "seed": args.seed}
    _echo(config)
    outcomes = run_suite(args.precision, args.tol, args.e2e_tol, args.eps, args.seed)
    lines = [f"{'PASS' if o.passed else 'FAIL'}  {o.name:<18} max rel err {o.max_rel_error:.3e} "
             f"(tol {o.tol:.0e}, worst {o.worst}){'  ' + o.message if o.message else ''}" for o in outcomes]
    ok = all(o.passed for o in outcomes)
    summary = "\n".join(lines) + f"\n{'all checks passed' if ok else 'gradient check FAILED'}\n"
    result = {"config": config, "passed": ok,
              "checks": [{"name": o.name, "max_rel_error": o.max_rel_error, "tol": o.tol, "worst": o.worst,
                          "passed": o.passed, "message": o.message} for o in outcomes]}
    if args.out:
        _emit(_outdir(args.out), "gradcheck", result, summary)
    else:
        sys.stdout.write(summary)
    return 0 if ok else 1


def cmd_embed_stats(args):
    ckpt = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data)
    config = {"checkpoint": _ref(args.checkpoint), "data": _ref(args.data), "min_count": args.min_count,
              "per_class": args.per_class, "seed": args.seed}
    _echo(config)
    if data.label_space != ckpt.label_space:
        raise ConfigError("label space of the dataset does not match the checkpoint")
    model = ckpt.build_model()
    if model.proto is None:
        raise ConfigError(f"checkpoint mode {ckpt.config.ablation_mode!r} has no prototype module")
    rep = separability_study(model, data, args.min_count, args.per_class, args.seed)
    out = _outdir(args.out)
    if rep.computable:
        plotting.separability(rep, out / "separability.png")
    _emit(out, "embed_stats", {"config": config, **rep.to_dict()}, separability_text(rep))
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep,
            "ablate": cmd_ablate, "gradcheck": cmd_gradcheck, "embed-stats": cmd_embed_stats}


def run(argv=None):
    """Parse ``argv`` and run one subcommand; returns the exit code."""
    try:
        args = build_parser().parse_args(argv)
    except _ArgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        code = COMMANDS[args.command](args)
    except (TrainingDiverged, NonFiniteError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    except (PeoHoiError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, RuntimeError, FloatingPointError, MemoryError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    print(f"{args.command} finished in {time.perf_counter() - t0:.2f}s", file=sys.stderr)
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
