"""Command-line entry point: ``pnfrec {generate,prepare,train,evaluate,tune}``.

Every command writes its artifacts into a fresh run directory under
``--out-dir`` (default ``$PNFREC_OUT_DIR`` or ``runs``) named after the UTC
start time and the seed, together with ``manifest.json``.  The manifest holds
the fully resolved configuration, SHA-256 digests of the inputs and the
relative artifact paths, and nothing time-dependent, so rerunning a command
with the same inputs reproduces every artifact byte for byte.  Wall-clock
measurements go to ``timing.tsv``, which is the one file excluded from that
guarantee.

Settings resolve as command-line flag, then ``--config`` file (``key=value``
lines, keys spelled like the flags), then built-in default.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict

import numpy as np

from . import __version__
from .data import assign_feedback, kcore_filter, load_interactions, load_split, read_kv, save_split, temporal_split
from .errors import CheckpointError, ConfigError, DataError, EvaluationError, InferenceError
from .losses import LossWeights
from .metrics import evaluate_model
from .model import EncoderConfig, SeqRecModel, Variant
from .synth import SynthConfig, generate, write_synthetic
from .training import TrainConfig, TuneGrid, train, tune_incremental

logger = logging.getLogger("pnfrec")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

# CLI variant names; the two ablations pin one coefficient to zero
VARIANTS = ("pnfrec", "pnfrec_pn", "pnfrec_pc", "sasrec_p", "sasrec", "sasrec_c")

DEFAULTS = {
    "threshold": 4.0,
    "kcore": 5,
    "max_len": 50,
    "train_fraction": 0.9,
    "seed": 0,
    "variant": "pnfrec",
    "alpha": 0.0,
    "beta": 0.0,
    "d": 64,
    "blocks": 2,
    "heads": 1,
    "dropout": 0.2,
    "lr": 1e-3,
    "batch_size": 128,
    "max_epochs": 200,
    "patience": 10,
    "k": "10",
    "filter_seen": True,
    "jobs": 1,
    "split": "test",
    "alpha_grid": None,
    "beta_grid": None,
    "n_users": 2000,
    "n_items": 500,
    "n_clusters": 10,
    "interactions_per_user": 40,
    "like_prob_in_cluster": 0.9,
    "like_prob_off_cluster": 0.1,
    "markov_stickiness": 0.8,
}

CASTS = {
    "threshold": float, "kcore": int, "max_len": int, "train_fraction": float, "seed": int,
    "alpha": float, "beta": float, "d": int, "blocks": int, "heads": int, "dropout": float,
    "lr": float, "batch_size": int, "max_epochs": int, "patience": int, "jobs": int,
    "n_users": int, "n_items": int, "n_clusters": int, "interactions_per_user": int,
    "like_prob_in_cluster": float, "like_prob_off_cluster": float, "markov_stickiness": float,
}


class UsageError(Exception):
    pass


# -- argument parsing --------------------------------------------------------


def _add(p, *names, **kw):
    kw.setdefault("default", argparse.SUPPRESS)
    p.add_argument(*names, **kw)


def _common(p, needs_input=True):
    if needs_input:
        _add(p, "--input", required=True, help="input file or directory")
    _add(p, "--seed", type=int)
    _add(p, "--out-dir", default=None, help="parent of the run directory (default $PNFREC_OUT_DIR or ./runs)")
    _add(p, "--run-name", default=None, help="run directory name (default <UTC time>-seed<seed>)")
    _add(p, "--config", default=None, help="key=value file with defaults for any flag")


def _model_flags(p):
    _add(p, "--variant", choices=VARIANTS)
    _add(p, "--alpha", type=float)
    _add(p, "--beta", type=float)
    _add(p, "--max-len", type=int)
    _add(p, "--d", type=int)
    _add(p, "--blocks", type=int)
    _add(p, "--heads", type=int)
    _add(p, "--dropout", type=float)
    _add(p, "--lr", type=float)
    _add(p, "--batch-size", type=int)
    _add(p, "--max-epochs", type=int)
    _add(p, "--patience", type=int)
    _filter_flag(p)


def _filter_flag(p):
    _add(p, "--filter-seen", dest="filter_seen", action="store_true")
    _add(p, "--no-filter-seen", dest="filter_seen", action="store_false")


def build_parser():
    parser = argparse.ArgumentParser(prog="pnfrec", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"pnfrec {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic interaction log")
    _common(p, needs_input=False)
    for name in ("n_users", "n_items", "n_clusters", "interactions_per_user"):
        _add(p, "--" + name.replace("_", "-"), type=int)
    for name in ("like_prob_in_cluster", "like_prob_off_cluster", "markov_stickiness"):
        _add(p, "--" + name.replace("_", "-"), type=float)

    p = sub.add_parser("prepare", help="filter, label and split an interaction log")
    _common(p)
    _add(p, "--threshold", type=float)
    _add(p, "--kcore", type=int)
    _add(p, "--max-len", type=int)
    _add(p, "--train-fraction", type=float)

    p = sub.add_parser("train", help="train one model on a prepared split")
    _common(p)
    _model_flags(p)

    p = sub.add_parser("evaluate", help="score a checkpoint on a prepared split")
    _common(p)
    _add(p, "--checkpoint", required=True)
    _add(p, "--k", help="comma-separated cutoffs")
    _add(p, "--split", choices=("val", "test"))
    _filter_flag(p)

    p = sub.add_parser("tune", help="incremental (alpha, beta) grid search")
    _common(p)
    _model_flags(p)
    _add(p, "--jobs", type=int)
    _add(p, "--alpha-grid", help="comma-separated alpha values (default 0..1 step 0.05)")
    _add(p, "--beta-grid", help="comma-separated beta values (default 0..1 step 0.05)")
    return parser


def resolve(args):
    """Merge flags over the config file over the defaults.

    The ``_explicit`` entry lists the keys that did not come from the defaults.
    """
    settings = dict(DEFAULTS)
    explicit = set()
    if getattr(args, "config", None):
        try:
            file_values = read_kv(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
        for key, raw in file_values.items():
            key = key.replace("-", "_")
            if key not in DEFAULTS:
                raise UsageError(f"unknown config key {key!r} in {args.config}")
            settings[key] = _cast(key, raw)
            explicit.add(key)
    for key, value in vars(args).items():
        if key in DEFAULTS:
            settings[key] = value
            explicit.add(key)
    settings["_explicit"] = explicit
    return settings


def _cast(key, raw):
    if key == "filter_seen":
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise UsageError(f"filter_seen must be true or false, got {raw!r}")
    try:
        return CASTS[key](raw) if key in CASTS else raw
    except ValueError:
        raise UsageError(f"bad value for {key}: {raw!r}") from None


def _floats(text, name):
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise UsageError(f"{name} must be a comma-separated list of numbers") from None


# -- run directories and manifests -------------------------------------------


def sha256(path):
    h = hashlib.sha256()
    paths = [path]
    if os.path.isdir(path):
        paths = [os.path.join(path, f) for f in sorted(os.listdir(path)) if f not in ("manifest.json", "timing.tsv")]
    for p in paths:
        if os.path.isdir(p):
            continue
        h.update(os.path.basename(p).encode())
        with open(p, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    return h.hexdigest()


def make_run_dir(args, seed):
    parent = args.out_dir or os.environ.get("PNFREC_OUT_DIR") or "runs"
    name = args.run_name or f"{time.strftime('%Y%m%dT%H%M%SZ', time.gmtime())}-seed{seed}"
    path = os.path.join(parent, name)
    os.makedirs(path, exist_ok=True)
    return path


def write_manifest(run_dir, command, settings, inputs, artifacts):
    manifest = {
        "command": command,
        "config": settings,
        "inputs": {role: {"path": str(p), "sha256": sha256(p)} for role, p in inputs.items()},
        "seed": settings.get("seed"),
        "artifacts": sorted(artifacts),
        "versions": {"pnfrec": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }
    with open(os.path.join(run_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write(run_dir, name, text):
    with open(os.path.join(run_dir, name), "w", encoding="utf-8") as fh:
        fh.write(text)
    return name


# -- commands ----------------------------------------------------------------


def _variant_and_weights(s):
    name, alpha, beta = s["variant"], s["alpha"], s["beta"]
    if name == "pnfrec_pn":
        if beta:
            raise UsageError("--beta must be 0 for pnfrec_pn (no contrastive term)")
        name = "pnfrec"
    elif name == "pnfrec_pc":
        if alpha:
            raise UsageError("--alpha must be 0 for pnfrec_pc (no negative cross-entropy)")
        name = "pnfrec"
    variant = Variant(name)
    if alpha and not variant.dual:
        raise UsageError(f"--alpha has no meaning for variant {s['variant']}")
    if beta and variant not in (Variant.PNFREC, Variant.SASREC_C):
        raise UsageError(f"--beta has no meaning for variant {s['variant']}")
    try:
        return variant, LossWeights(alpha, beta)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _train_config(s, split_meta):
    variant, weights = _variant_and_weights(s)
    l = s["max_len"] if "max_len" in s["_explicit"] else int(split_meta.get("l", s["max_len"]))
    s["max_len"] = l
    enc = EncoderConfig(d=s["d"], num_blocks=s["blocks"], num_heads=s["heads"], l=l, dropout_rate=s["dropout"])
    return TrainConfig(
        variant=variant, weights=weights, encoder=enc, batch_size=s["batch_size"], lr=s["lr"],
        max_epochs=s["max_epochs"], patience=s["patience"], seed=s["seed"], filter_seen=s["filter_seen"],
    )


def cmd_generate(args, s):
    cfg = SynthConfig(
        n_users=s["n_users"], n_items=s["n_items"], n_clusters=s["n_clusters"],
        interactions_per_user=s["interactions_per_user"], like_prob_in_cluster=s["like_prob_in_cluster"],
        like_prob_off_cluster=s["like_prob_off_cluster"], markov_stickiness=s["markov_stickiness"], seed=s["seed"],
    )
    run_dir = make_run_dir(args, s["seed"])
    res = generate(cfg)
    write_synthetic(res, os.path.join(run_dir, "interactions.tsv"), os.path.join(run_dir, "clusters.tsv"))
    share = float((res.log.values < 3).mean())
    print(f"users={res.log.num_users} items={res.log.num_items} interactions={len(res.log)} negative={100 * share:.1f}%")
    write_manifest(run_dir, "generate", asdict(cfg), {}, ["interactions.tsv", "clusters.tsv"])
    print(run_dir)
    return run_dir


def cmd_prepare(args, s):
    log = load_interactions(args.input)
    n_raw = len(log)
    log = kcore_filter(log, s["kcore"])
    labeled = assign_feedback(log, s["threshold"])
    split = temporal_split(labeled, s["train_fraction"], seed=s["seed"])
    split.meta["kcore"] = s["kcore"]
    run_dir = make_run_dir(args, s["seed"])
    save_split(split, run_dir, max_len=s["max_len"])
    stats = [
        ("raw_interactions", n_raw),
        ("users", log.num_users),
        ("items", log.num_items),
        ("interactions", len(log)),
        ("negative_pct", round(100 * labeled.negative_share, 2)),
        ("boundary_timestamp", split.boundary_timestamp),
        ("train_interactions", len(split.train)),
        ("val_users", len(split.val)),
        ("test_users", len(split.test)),
        ("test_negative_gt_pct", round(100 * float(np.mean(~split.test.gt_positive)), 2) if len(split.test) else 0.0),
    ]
    _write(run_dir, "stats.tsv", "stat\tvalue\n" + "".join(f"{k}\t{v}\n" for k, v in stats))
    for k, v in stats:
        print(f"{k:<22} {v}")
    artifacts = ["train.tsv", "val.tsv", "test.tsv", "users.txt", "items.txt", "metadata.txt", "stats.tsv"]
    write_manifest(run_dir, "prepare", _public(s), {"input": args.input}, artifacts)
    print(run_dir)
    return run_dir


def cmd_train(args, s):
    _variant_and_weights(s)  # flag errors before touching the data
    split = load_split(args.input)
    cfg = _train_config(s, split.meta)
    run_dir = make_run_dir(args, s["seed"])

    def progress(row):
        logger.info("epoch %d  L=%.4f  val NDCG_p@10=%.4f", row["epoch"], row["L"], row["val_NDCG_p@10"])

    res = train(split, cfg, on_epoch=progress)
    res.model.save(os.path.join(run_dir, "model.ckpt"))
    _write(run_dir, "train_log.tsv", "\n".join(res.log_lines()) + "\n")
    _write(run_dir, "timing.tsv", "epoch\twall_clock_s\n" + "".join(
        f"{r['epoch']}\t{t:.3f}\n" for r, t in zip(res.log, res.seconds)))
    _write(run_dir, "best.txt", f"best_epoch={res.best_epoch}\nbest_val_NDCG_p@10={res.best_metric!r}\n")
    print(f"best epoch {res.best_epoch}, validation NDCG_p@10 {res.best_metric:.4f}")
    write_manifest(run_dir, "train", _public(s), {"split": args.input},
                   ["model.ckpt", "train_log.tsv", "best.txt"])
    print(run_dir)
    return run_dir


def cmd_evaluate(args, s):
    ks = [int(x) for x in str(s["k"]).split(",") if x.strip()]
    if not ks or min(ks) <= 0:
        raise UsageError(f"--k must be positive integers, got {s['k']!r}")
    split = load_split(args.input)
    model = SeqRecModel.load(args.checkpoint)
    if model.n_items != split.num_items:
        raise CheckpointError(f"checkpoint has {model.n_items} items but the split has {split.num_items}")
    eval_set = split.test if s["split"] == "test" else split.val
    run_dir = make_run_dir(args, s["seed"])
    artifacts = []
    for k in ks:
        rep = evaluate_model(model, eval_set, k=k, filter_seen=s["filter_seen"])
        artifacts.append(_write(run_dir, f"report_k{k}.tsv", rep.to_tsv()))
        print(rep.to_table())
    write_manifest(run_dir, "evaluate", _public(s), {"split": args.input, "checkpoint": args.checkpoint}, artifacts)
    print(run_dir)
    return run_dir


def cmd_tune(args, s):
    if s["variant"] not in ("pnfrec",):
        raise UsageError("tune searches (alpha, beta) for the pnfrec variant only")
    if s["jobs"] < 1:
        raise UsageError("--jobs must be >= 1")
    default = TuneGrid()
    grid = TuneGrid(
        _floats(s["alpha_grid"], "--alpha-grid") if s["alpha_grid"] else default.alpha_values,
        _floats(s["beta_grid"], "--beta-grid") if s["beta_grid"] else default.beta_values,
    )
    _variant_and_weights(s)
    split = load_split(args.input)
    cfg = _train_config(s, split.meta)
    run_dir = make_run_dir(args, s["seed"])
    res = tune_incremental(split, cfg, grid, jobs=s["jobs"])
    table = res.table_lines()
    # the sweep table without wall-clock is the reproducible artifact
    _write(run_dir, "tune.tsv", "\n".join(line.rsplit("\t", 1)[0] for line in table) + "\n")
    _write(run_dir, "timing.tsv", "\n".join(table) + "\n")
    _write(run_dir, "best.txt", f"alpha={res.alpha}\nbeta={res.beta}\n")
    for line in table:
        print(line)
    print(f"best alpha={res.alpha} beta={res.beta}")
    write_manifest(run_dir, "tune", _public(s), {"split": args.input}, ["tune.tsv", "best.txt"])
    print(run_dir)
    return run_dir


def _public(s):
    """The settings that belong to the running command, for the manifest."""
    return {k: v for k, v in s.items() if k in s["_keys"]}


def _command_keys(parser, command):
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return {a.dest for a in sub.choices[command]._actions if a.dest in DEFAULTS}


COMMANDS = {
    "generate": cmd_generate,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "tune": cmd_tune,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        settings = resolve(args)
        settings["_keys"] = _command_keys(parser, args.command)
        COMMANDS[args.command](args, settings)
    except (UsageError, ConfigError, ValueError) as exc:
        print(f"pnfrec {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, EvaluationError, InferenceError, OSError, KeyError) as exc:
        print(f"pnfrec {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"pnfrec {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
