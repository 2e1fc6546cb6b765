"""Hit rate and NDCG at k, reported separately for positive and negative ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EvaluationError


def _check_k(k):
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")


def _rank_of(ranked, item):
    hits = np.flatnonzero(np.asarray(ranked) == item)
    return int(hits[0]) + 1 if hits.size else None


def hr_at_k(ranked, item, k):
    _check_k(k)
    rank = _rank_of(ranked, item)
    return int(rank is not None and rank <= k)


def ndcg_at_k(ranked, item, k):
    _check_k(k)
    rank = _rank_of(ranked, item)
    if rank is None or rank > k:
        return 0.0
    return 1.0 / math.log2(rank + 1)


@dataclass
class EvalReport:
    k: int
    hr_p: float
    hr_n: float
    ndcg_p: float
    ndcg_n: float
    n_users_p: int
    n_users_n: int

    @property
    def delta_hr(self):
        return self.hr_p - self.hr_n

    @property
    def delta_ndcg(self):
        return self.ndcg_p - self.ndcg_n

    @property
    def negative_group_empty(self):
        return self.n_users_n == 0

    def rows(self):
        k = self.k
        return [
            (f"HR_p@{k}", self.hr_p, self.n_users_p),
            (f"HR_n@{k}", self.hr_n, self.n_users_n),
            (f"NDCG_p@{k}", self.ndcg_p, self.n_users_p),
            (f"NDCG_n@{k}", self.ndcg_n, self.n_users_n),
            (f"dHR@{k}", self.delta_hr, self.n_users_p + self.n_users_n),
            (f"dNDCG@{k}", self.delta_ndcg, self.n_users_p + self.n_users_n),
        ]

    def to_tsv(self):
        lines = ["metric\tvalue\tgroup_size"]
        lines += [f"{name}\t{value:.6f}\t{n}" for name, value, n in self.rows()]
        return "\n".join(lines) + "\n"

    def to_table(self):
        lines = [f"{'metric':<10} {'value':>9} {'users':>7}"]
        lines += [f"{name:<10} {value:>9.4f} {n:>7d}" for name, value, n in self.rows()]
        if self.negative_group_empty:
            lines.append("warning: no users with negative ground truth")
        return "\n".join(lines)


def ranks_from_scores(scores, gt_items, seen=None):
    """1-based rank of each ground-truth item under descending score.

    Ties go to the smaller item index.  Items flagged in ``seen`` (a boolean
    ``(U, N)`` array) are removed from the candidate list; a removed ground
    truth gets rank ``inf``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    gt = np.asarray(gt_items)
    U, N = scores.shape
    rows = np.arange(U)
    if seen is not None:
        scores = np.where(seen, -np.inf, scores)
    s = scores[rows, gt][:, None]
    before = (scores > s) | ((scores == s) & (np.arange(N)[None, :] < gt[:, None]))
    ranks = before.sum(axis=1).astype(np.float64) + 1.0
    if seen is not None:
        ranks[seen[rows, gt]] = np.inf
    return ranks


def split_eval_from_ranks(ranks, gt_positive, k):
    _check_k(k)
    ranks = np.asarray(ranks, dtype=np.float64)
    pos = np.asarray(gt_positive, dtype=bool)
    if ranks.size == 0:
        raise EvaluationError("no users to evaluate")
    hit = ranks <= k
    gain = np.where(hit, 1.0 / np.log2(np.where(hit, ranks, 1.0) + 1.0), 0.0)

    def group_mean(x, m):
        return float(x[m].mean()) if m.any() else 0.0

    return EvalReport(
        k=k,
        hr_p=group_mean(hit.astype(np.float64), pos),
        hr_n=group_mean(hit.astype(np.float64), ~pos),
        ndcg_p=group_mean(gain, pos),
        ndcg_n=group_mean(gain, ~pos),
        n_users_p=int(pos.sum()),
        n_users_n=int((~pos).sum()),
    )


def split_eval(ranked_lists, gt_items, gt_positive, k):
    """Group metrics from per-user ranked recommendation lists.

    ``ranked_lists`` may be a 2-D array or a list of 1-D arrays of differing
    lengths; only the first ``k`` entries of each matter.
    """
    _check_k(k)
    gt = np.asarray(gt_items)
    if len(gt) == 0:
        raise EvaluationError("no users to evaluate")
    top = np.full((len(gt), k), -1, dtype=np.int64)
    for r, lst in enumerate(ranked_lists):
        lst = np.asarray(lst, dtype=np.int64)[:k]
        top[r, : len(lst)] = lst
    match = top == gt[:, None]
    found = match.any(axis=1)
    ranks = np.where(found, match.argmax(axis=1) + 1.0, np.inf)
    return split_eval_from_ranks(ranks, gt_positive, k)


def evaluate_model(model, eval_set, k=10, filter_seen=True, batch_size=256):
    """Rank the full catalog for every user in ``eval_set`` and report split metrics."""
    if len(eval_set) == 0:
        raise EvaluationError("no users to evaluate")
    histories = [model.inference_sequence(i, p) for i, p in zip(eval_set.inputs, eval_set.input_positive)]
    scores = model.score_histories(histories, batch_size)
    seen = None
    if filter_seen:
        seen = np.zeros(scores.shape, dtype=bool)
        for r, items in enumerate(eval_set.inputs):
            seen[r, items] = True
    ranks = ranks_from_scores(scores, eval_set.gt_item, seen)
    return split_eval_from_ranks(ranks, eval_set.gt_positive, k)
