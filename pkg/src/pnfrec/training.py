"""Mini-batch training with early stopping, and the incremental (alpha, beta) tuner."""

from __future__ import annotations

import copy
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DivergenceError
from .losses import LossWeights, model_loss
from .metrics import evaluate_model
from .model import EncoderConfig, SeqRecModel, TrainBatch, Variant
from .optim import Adam

logger = logging.getLogger(__name__)

GRID_STEP = 0.05
LOG_COLUMNS = ("epoch", "L", "L_CE_p", "L_CE_n", "L_c", "val_NDCG_p@10")


@dataclass(frozen=True)
class TrainConfig:
    variant: Variant = Variant.PNFREC
    weights: LossWeights = field(default_factory=LossWeights)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    batch_size: int = 128
    lr: float = 1e-3
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    eval_k: int = 10
    filter_seen: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.eval_k < 1:
            raise ConfigError("eval_k must be >= 1")
        if self.weights.alpha > 0 and not self.variant.dual:
            raise ConfigError(f"alpha has no effect for variant {self.variant.value}")
        if self.weights.beta > 0 and self.variant not in (Variant.PNFREC, Variant.SASREC_C):
            raise ConfigError(f"beta has no effect for variant {self.variant.value}")


# -- batch construction ------------------------------------------------------


def _left_pad(rows, width):
    out = np.zeros((len(rows), width), dtype=np.int64)
    for r, row in enumerate(rows):
        if len(row):
            out[r, width - len(row):] = row
    return out


def _next_positive_targets(window, flags):
    """For each input position holding a positive item, the next positive item after it."""
    tgt = np.zeros(len(window) - 1, dtype=np.int64)
    nxt = 0
    for t in range(len(window) - 1, 0, -1):
        if flags[t]:
            nxt = window[t]
        if flags[t - 1]:
            tgt[t - 1] = nxt
    return tgt


@dataclass
class TrainingArrays:
    """Padded model-index arrays for every training user, sliced into batches."""

    main_in: np.ndarray
    main_tgt: np.ndarray
    neg_in: np.ndarray | None
    neg_tgt: np.ndarray | None
    contrast_tgt: np.ndarray | None
    neg_set: np.ndarray | None

    def __len__(self):
        return len(self.main_in)

    def batch(self, idx):
        pick = lambda a: None if a is None else a[idx]
        return TrainBatch(pick(self.main_in), pick(self.main_tgt), pick(self.neg_in),
                          pick(self.neg_tgt), pick(self.contrast_tgt), pick(self.neg_set))


def build_training_arrays(variant, train, l):
    """Shifted input/target windows of length ``l`` for each eligible user.

    Positive-sequence variants need at least two positive items per user and
    full-sequence variants at least two items of any polarity.
    """
    variant = Variant(variant)
    log = train.log
    counts = np.bincount(log.users, minlength=log.num_users)
    stops = np.cumsum(counts)
    main_in, main_tgt, neg_in, neg_tgt, ctgt, nset = [], [], [], [], [], []
    for a, b in zip(stops - counts, stops):
        items = log.items[a:b] + 1
        flags = train.positive[a:b]
        negs = items[~flags]
        if variant.full_sequence:
            window, wflags = items[-(l + 1):], flags[-(l + 1):]
        else:
            window = items[flags][-(l + 1):]
        if len(window) < 2:
            continue
        main_in.append(window[:-1])
        main_tgt.append(window[1:])
        if variant.dual:
            nw = negs[-(l + 1):]
            neg_in.append(nw[:-1] if len(nw) >= 2 else nw[:0])
            neg_tgt.append(nw[1:] if len(nw) >= 2 else nw[:0])
        if variant is Variant.PNFREC:
            ctgt.append(window[1:])
        elif variant is Variant.SASREC_C:
            ctgt.append(_next_positive_targets(window, wflags))
        nset.append(negs[-l:])
    with_contrast = variant in (Variant.PNFREC, Variant.SASREC_C)
    return TrainingArrays(
        main_in=_left_pad(main_in, l),
        main_tgt=_left_pad(main_tgt, l),
        neg_in=_left_pad(neg_in, l) if variant.dual else None,
        neg_tgt=_left_pad(neg_tgt, l) if variant.dual else None,
        contrast_tgt=_left_pad(ctgt, l) if with_contrast else None,
        neg_set=_left_pad(nset, l) if with_contrast else None,
    )


# -- training ----------------------------------------------------------------


@dataclass
class TrainResult:
    model: SeqRecModel
    log: list
    best_epoch: int
    best_metric: float
    seconds: list

    def log_lines(self):
        lines = ["\t".join(LOG_COLUMNS)]
        for row in self.log:
            lines.append("\t".join([str(row["epoch"])] + [repr(float(row[c])) for c in LOG_COLUMNS[1:]]))
        return lines


def train(data, config, validate=None, on_epoch=None):
    """Train one model; returns the parameters of the best validation epoch.

    ``validate`` maps a model to the early-stopping metric and defaults to
    NDCG_p@k on validation users whose ground truth is positive.
    """
    cfg = config
    model = SeqRecModel(cfg.variant, data.num_items, cfg.encoder, seed=cfg.seed)
    arrays = build_training_arrays(cfg.variant, data.train, cfg.encoder.l)
    if len(arrays) == 0:
        raise ConfigError("no training users with at least two usable items")
    if validate is None:
        val = data.val.positive_only()
        validate = lambda m: evaluate_model(m, val, cfg.eval_k, cfg.filter_seen).ndcg_p
    opt = Adam(model.params, lr=cfg.lr)
    shuffle_rng = np.random.default_rng([cfg.seed, 100])
    emb = model.params["item_emb"]

    rows, seconds = [], []
    best_metric, best_epoch, best_params, stale = -np.inf, 0, None, 0
    start = time.perf_counter()
    for epoch in range(1, cfg.max_epochs + 1):
        perm = shuffle_rng.permutation(len(arrays))
        sums = np.zeros(4)
        for bi, lo in enumerate(range(0, len(perm), cfg.batch_size)):
            batch = arrays.batch(perm[lo:lo + cfg.batch_size])
            opt.zero_grad()
            try:
                parts = model_loss(model, batch, cfg.weights, training=True)
            except DivergenceError as exc:
                raise DivergenceError(f"{exc} (epoch {epoch}, batch {bi})") from None
            parts.total.backward()
            if emb.grad is not None:
                emb.grad = emb.grad.copy()
                emb.grad[0] = 0
            opt.step()
            sums += np.array(parts.values()) * len(batch.main_in)
        metric = float(validate(model))
        means = sums / len(arrays)
        rows.append(dict(zip(LOG_COLUMNS, (epoch, *means, metric))))
        seconds.append(time.perf_counter() - start)
        if on_epoch is not None:
            on_epoch(rows[-1])
        logger.info("epoch %d loss %.4f val %.4f", epoch, means[0], metric)
        if metric > best_metric:
            best_metric, best_epoch, stale = metric, epoch, 0
            best_params = {k: p.data.copy() for k, p in model.params.items()}
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    for k, p in model.params.items():
        p.data = best_params[k]
    return TrainResult(model, rows, best_epoch, best_metric, seconds)


# -- incremental tuning ------------------------------------------------------


@dataclass(frozen=True)
class TuneGrid:
    alpha_values: tuple = tuple(round(GRID_STEP * i, 2) for i in range(21))
    beta_values: tuple = tuple(round(GRID_STEP * i, 2) for i in range(21))

    def __post_init__(self):
        for name in ("alpha_values", "beta_values"):
            vals = tuple(sorted(set(float(v) for v in getattr(self, name))))
            if not vals:
                raise ConfigError(f"{name} is empty")
            if vals[0] < 0 or vals[-1] > 1:
                raise ConfigError(f"{name} must lie in [0, 1]")
            object.__setattr__(self, name, vals)


@dataclass
class TuneResult:
    alpha: float
    beta: float
    rows: list

    def table_lines(self):
        lines = ["phase\talpha\tbeta\tval_NDCG_p@10\tbest_epoch\twall_clock_s"]
        for r in self.rows:
            lines.append(f"{r['phase']}\t{r['alpha']}\t{r['beta']}\t{r['metric']!r}\t{r['best_epoch']}\t{r['seconds']:.3f}")
        return lines


def _run_point(args):
    data, cfg = args
    res = train(data, cfg)
    return res.best_metric, res.best_epoch


def _sweep(data, configs, jobs, start):
    """Run every config; each result carries the seconds since ``start`` at which it arrived."""
    out = []
    if jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for res in pool.map(_run_point, [(data, c) for c in configs]):
                out.append((*res, time.perf_counter() - start))
        return out
    for c in configs:
        out.append((*_run_point((data, c)), time.perf_counter() - start))
    return out


def _argmax_smallest(values, metrics):
    best = 0
    for j in range(1, len(values)):
        if metrics[j] > metrics[best]:
            best = j
    return best


def tune_incremental(data, base_config, grid=None, jobs=1):
    """Sweep alpha with beta = 0, then beta at the chosen alpha.

    Every grid point trains with the base seed.  Ties go to the smaller
    coefficient, so the result does not depend on the order of the grid.
    """
    grid = grid or TuneGrid()
    base = replace(base_config, variant=Variant.PNFREC)
    start = time.perf_counter()
    rows = []

    alphas = grid.alpha_values
    cfgs = [replace(base, weights=LossWeights(a, 0.0)) for a in alphas]
    results = _sweep(data, cfgs, jobs, start)
    for a, (metric, ep, sec) in zip(alphas, results):
        rows.append(dict(phase=1, alpha=a, beta=0.0, metric=metric, best_epoch=ep, seconds=sec))
    ia = _argmax_smallest(alphas, [r[0] for r in results])
    alpha = alphas[ia]

    betas = [b for b in grid.beta_values if b != 0.0]
    metrics = {0.0: results[ia][0]} if 0.0 in grid.beta_values else {}
    cfgs = [replace(base, weights=LossWeights(alpha, b)) for b in betas]
    for b, (metric, ep, sec) in zip(betas, _sweep(data, cfgs, jobs, start)):
        metrics[b] = metric
        rows.append(dict(phase=2, alpha=alpha, beta=b, metric=metric, best_epoch=ep, seconds=sec))
    bvals = sorted(metrics)
    beta = bvals[_argmax_smallest(bvals, [metrics[b] for b in bvals])]
    return TuneResult(alpha, beta, rows)
