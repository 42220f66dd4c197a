"""Command-line driver: train, eval, topics, subsets.

Config is one flat JSON document; unknown keys are rejected so a typo in a
hyperparameter name fails loudly instead of training with a default. Every
artifact of a run lands inside the chosen output directory: config copy,
split manifest, JSONL training log, checkpoints, report.json, curve CSVs,
and the rendered PNG figures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import evaluation as ev
from . import plots
from .corpus import (
    CorpusError, load_bow, load_vocabulary, save_manifest, split_corpus,
    subset_by_labels,
)
from .engine import EngineError
from .evaluation import EvaluationError
from .models import ModelConfig, ModelError, TopicModel, config_hash, validate_config
from .stochastic import gamma_expectations
from .training import TrainingError, TrainSchedule, fit

__all__ = ["main"]


class CliError(ValueError):
    pass


MODEL_KEYS = set(ModelConfig.__dataclass_fields__) - {"vocab_size"}
SCHED_KEYS = set(TrainSchedule.__dataclass_fields__) - {"seed"}
RUN_KEYS = {"vocab_path", "train_path", "valid_path", "test_path",
            "out_dir", "seed", "valid_fraction", "test_fraction"}


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as err:
        raise CliError(f"config {path} is not valid JSON: {err}") from None


def _check_keys(raw):
    known = MODEL_KEYS | SCHED_KEYS | RUN_KEYS
    for key in raw:
        if key not in known:
            raise CliError(f"unknown config key '{key}'")
    for key in ("variant", "K", "epochs", "vocab_path", "train_path"):
        if key not in raw:
            raise CliError(f"missing required config key '{key}'")


def _build_configs(raw, vocab_size):
    model_kwargs = {k: raw[k] for k in raw if k in MODEL_KEYS}
    model_kwargs["vocab_size"] = vocab_size
    sched_kwargs = {k: raw[k] for k in raw if k in SCHED_KEYS}
    sched_kwargs["seed"] = int(raw.get("seed", 0))
    cfg = validate_config(ModelConfig(**model_kwargs))
    schedule = TrainSchedule(**sched_kwargs)
    return cfg, schedule


def _write_report_files(rep, out_dir, curves):
    ev.save_report(rep, os.path.join(out_dir, "report.json"))
    if curves:
        ev.save_curve_csv(rep["coverage"], os.path.join(out_dir, "coverage.csv"))
        ev.save_curve_csv(rep["sparsity_log"], os.path.join(out_dir, "sparsity.csv"))
        plots.coverage_figure({"run": rep["coverage"]},
                              os.path.join(out_dir, "coverage.png"))
        plots.sparsity_figure({"run": rep["sparsity_log"]},
                              os.path.join(out_dir, "sparsity.png"))


def cmd_train(args):
    raw = _load_json(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.corpus is not None:
        raw["train_path"] = args.corpus
    if args.out is not None:
        raw["out_dir"] = args.out
    _check_keys(raw)
    if "out_dir" not in raw:
        raise CliError("missing required config key 'out_dir' (or pass --out)")

    vocab = load_vocabulary(raw["vocab_path"])
    train = load_bow(raw["train_path"], vocab, split="train")
    valid = load_bow(raw["valid_path"], vocab, split="valid") if raw.get("valid_path") else None
    test = load_bow(raw["test_path"], vocab, split="test") if raw.get("test_path") else None
    cfg, schedule = _build_configs(raw, vocab.size)

    run_dir = raw["out_dir"]
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump({**raw, "vocab_size": vocab.size, "config_hash": config_hash(cfg)},
                  fh, indent=2)
        fh.write("\n")

    if valid is None:
        vf = float(raw.get("valid_fraction", 0.1))
        tf = float(raw.get("test_fraction", 0.0))
        if vf > 0 or tf > 0:
            train, valid, split_test, manifest = split_corpus(
                train, (1.0 - vf - tf, vf), schedule.seed)
            save_manifest(manifest, os.path.join(run_dir, "split_manifest.json"))
            if valid.num_docs == 0:
                valid = None
            if test is None and split_test.num_docs > 0:
                test = split_test

    model, log = fit(train, valid, cfg, schedule, run_dir=run_dir)

    score = test or valid or train
    rng = np.random.default_rng(schedule.seed)
    rep = ev.report(model, score, train, vocab, rng=rng,
                    samples=schedule.eval_samples)
    rep["config_hash"] = config_hash(cfg)
    rep["score_split"] = score.split
    _write_report_files(rep, run_dir, curves=True)
    print(f"run dir: {run_dir}")
    print(f"epochs run: {log[-1]['epoch']}  perplexity({score.split}): "
          f"{rep['perplexity']:.2f}  coherence: {rep['coherence_mean']:.4f}  "
          f"effective topics: {rep['effective_topics']}")
    return 0


def cmd_eval(args):
    for name in ("checkpoint", "corpus", "vocab", "out"):
        if getattr(args, name) is None:
            raise CliError(f"--{name} is required for eval")
    model, meta = TopicModel.load(args.checkpoint)
    vocab = load_vocabulary(args.vocab)
    if vocab.size != model.config.vocab_size:
        raise CliError(f"vocabulary size {vocab.size} does not match "
                       f"checkpoint vocabulary size {model.config.vocab_size}")
    corpus = load_bow(args.corpus, vocab)
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    rep = ev.report(model, corpus, corpus, vocab, rng=rng, samples=args.samples)
    rep["config_hash"] = meta.get("config_hash")
    _write_report_files(rep, args.out, curves=args.curves)
    print(f"perplexity: {rep['perplexity']:.2f}  coherence: "
          f"{rep['coherence_mean']:.4f}  effective topics: {rep['effective_topics']}")
    return 0


def cmd_topics(args):
    for name in ("checkpoint", "vocab"):
        if getattr(args, name) is None:
            raise CliError(f"--{name} is required for topics")
    model, _ = TopicModel.load(args.checkpoint)
    vocab = load_vocabulary(args.vocab)
    if vocab.size != model.config.vocab_size:
        raise CliError(f"vocabulary size {vocab.size} does not match "
                       f"checkpoint vocabulary size {model.config.vocab_size}")
    lists = ev.top_words(model.bank, min(args.top_n, vocab.size))
    lines = []
    for k, lst in enumerate(lists):
        lines.append(f"topic {k}: " + " ".join(vocab.tokens[i] for i in lst))
    text = "\n".join(lines) + "\n"
    if args.out is not None:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "topics.txt"), "w", encoding="utf-8") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return 0


def cmd_subsets(args):
    if args.labels_file is None or args.classes is None:
        raise CliError("--labels-file and --classes are required for subsets")
    raw = _load_json(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out_dir"] = args.out
    _check_keys(raw)
    if raw.get("variant") != "hp":
        raise CliError("subsets drives the hyper-prior variant; set variant to 'hp'")
    if "out_dir" not in raw:
        raise CliError("missing required config key 'out_dir' (or pass --out)")

    with open(args.labels_file, encoding="utf-8") as fh:
        all_labels = [ln.strip() for ln in fh if ln.strip()]
    counts = [int(c) for c in args.classes.split(",")]
    for c in counts:
        if c < 1 or c > len(all_labels):
            raise CliError(f"requested class count {c} exceeds available labels "
                           f"({len(all_labels)})")

    vocab = load_vocabulary(raw["vocab_path"])
    full = load_bow(raw["train_path"], vocab, split="train")
    out_root = raw["out_dir"]
    os.makedirs(out_root, exist_ok=True)

    rows, curves = [], {}
    for c in counts:
        chosen = all_labels[:c]
        sub = subset_by_labels(full, chosen)
        run_dir = os.path.join(out_root, f"{c}classes")
        sub_raw = dict(raw)
        sub_raw["out_dir"] = run_dir
        cfg, schedule = _build_configs(sub_raw, vocab.size)
        schedule.seed = schedule.seed + c
        vf = float(sub_raw.get("valid_fraction", 0.1))
        train, valid, _, manifest = split_corpus(sub, (1.0 - vf, vf), schedule.seed)
        os.makedirs(run_dir, exist_ok=True)
        save_manifest(manifest, os.path.join(run_dir, "split_manifest.json"))
        model, _ = fit(train, valid if valid.num_docs else None, cfg, schedule,
                       run_dir=run_dir)
        e_alpha, _ = gamma_expectations(model.gamma_shape.data, model.gamma_rate.data)
        summary = ev.posterior_summary(model, train)
        curve = ev.coverage_curve(summary)
        at90 = ev.topics_to_coverage(curve, 0.9)
        ev.save_curve_csv(curve, os.path.join(run_dir, "coverage.csv"))
        curves[f"{c} classes"] = curve
        rows.append({"classes": c,
                     "gamma1": float(model.gamma_shape.data),
                     "gamma2": float(model.gamma_rate.data),
                     "e_alpha": float(e_alpha),
                     "topics_at_90": at90})
        print(f"classes={c}: gamma1={rows[-1]['gamma1']:.3f} "
              f"gamma2={rows[-1]['gamma2']:.3f} e_alpha={rows[-1]['e_alpha']:.3f} "
              f"topics_at_90={at90}")

    with open(os.path.join(out_root, "summary.csv"), "w", encoding="utf-8") as fh:
        fh.write("classes,gamma1,gamma2,e_alpha,topics_at_90\n")
        for r in rows:
            fh.write(f"{r['classes']},{r['gamma1']:.6g},{r['gamma2']:.6g},"
                     f"{r['e_alpha']:.6g},{r['topics_at_90']}\n")
    e_alphas = [r["e_alpha"] for r in rows]
    at90s = [r["topics_at_90"] for r in rows]
    summary = {
        "rows": rows,
        "monotonic_e_alpha": all(b > a for a, b in zip(e_alphas, e_alphas[1:])),
        "monotonic_topics_at_90": all(b > a for a, b in zip(at90s, at90s[1:])),
    }
    with open(os.path.join(out_root, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    plots.coverage_figure(curves, os.path.join(out_root, "coverage.png"))
    print(f"monotonic E[alpha]: {'PASS' if summary['monotonic_e_alpha'] else 'FAIL'}")
    print(f"monotonic topics@90%: {'PASS' if summary['monotonic_topics_at_90'] else 'FAIL'}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="itmvae",
        description="Nonparametric neural topic models with stick-breaking priors.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a JSON config")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--corpus", help="override train_path from the config")
    p_train.add_argument("--out", help="override out_dir from the config")
    p_train.add_argument("--seed", type=int)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="score a checkpoint on a corpus")
    p_eval.add_argument("--checkpoint")
    p_eval.add_argument("--corpus")
    p_eval.add_argument("--vocab")
    p_eval.add_argument("--out")
    p_eval.add_argument("--curves", action="store_true",
                        help="also write coverage/sparsity CSVs and figures")
    p_eval.add_argument("--seed", type=int)
    p_eval.add_argument("--samples", type=int, default=1)
    p_eval.set_defaults(func=cmd_eval)

    p_topics = sub.add_parser("topics", help="dump top words per topic")
    p_topics.add_argument("--checkpoint")
    p_topics.add_argument("--vocab")
    p_topics.add_argument("--out")
    p_topics.add_argument("--top-n", type=int, default=10, dest="top_n")
    p_topics.set_defaults(func=cmd_topics)

    p_sub = sub.add_parser("subsets",
                           help="hyper-prior adaptation runs over class subsets")
    p_sub.add_argument("--config", required=True)
    p_sub.add_argument("--labels-file", dest="labels_file",
                       help="ordered class names, one per line")
    p_sub.add_argument("--classes", help="comma-separated class counts, e.g. 1,2,5")
    p_sub.add_argument("--out")
    p_sub.add_argument("--seed", type=int)
    p_sub.set_defaults(func=cmd_subsets)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ModelError, CorpusError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (TrainingError, EvaluationError, EngineError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
