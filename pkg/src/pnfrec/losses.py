"""Training objectives: positive and negative cross-entropy plus the contrastive term.

The composite objective is ``L = ce_pos + alpha * ce_neg + beta * contrastive``.
Every term is a mean over the (user, position) pairs that contribute to it, so
the coefficient grids keep the same meaning across batch sizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DivergenceError, PNFRecError
from .tensor import Tensor


class UndefinedLossError(PNFRecError, ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {v}")


@dataclass
class LossParts:
    total: Tensor
    ce_pos: Tensor
    ce_neg: Tensor
    contrastive: Tensor

    def values(self):
        return tuple(float(t.data) for t in (self.total, self.ce_pos, self.ce_neg, self.contrastive))


def _zero(dtype):
    return Tensor(np.zeros((), dtype=dtype))


def loss_ce_positive(logits, targets):
    """Mean full-catalog cross-entropy over the rows of ``logits``."""
    if logits is None or len(targets) == 0:
        raise UndefinedLossError("positive cross-entropy has no unmasked positions")
    return T.cross_entropy_from_logits(logits, targets)


def loss_ce_negative(logits, targets, dtype=np.float32):
    """Same kernel as the positive term; an empty batch contributes exactly 0."""
    if logits is None or len(targets) == 0:
        return _zero(logits.dtype if logits is not None else dtype)
    return T.cross_entropy_from_logits(logits, targets)


def contrastive_terms(anchors, positives, negatives, neg_mask, eps=1e-8):
    """Per-anchor contrastive values ``-log(e^{f+} / (e^{f+} + sum_j e^{f_j}))``.

    anchors, positives: ``(B, T, d)``; negatives: ``(B, K, d)``; ``neg_mask``
    ``(B, K)`` marks real negatives.  ``f`` is cosine similarity, computed on
    L2-normalised vectors.  Returns a ``(B, T)`` tensor.
    """
    an = T.l2_normalize(anchors, eps)
    po = T.l2_normalize(positives, eps)
    ne = T.l2_normalize(negatives, eps)
    f_pos = T.sum(T.mul(an, po), axis=-1)
    sims = T.matmul(an, T.transpose(ne))
    neg_mask = np.asarray(neg_mask, dtype=bool)
    B, Tn, K = sims.shape
    # log(1 + sum_j e^{f_j - f+}) is the same value, and exactly 0 with no negatives
    f_rep = T.matmul(T.reshape(f_pos, (B, Tn, 1)), Tensor(np.ones((1, K), dtype=sims.dtype)))
    ratio = T.sum(T.multiply_mask(T.exp(T.sub(sims, f_rep)), neg_mask[:, None, :]), axis=-1)
    return T.log(T.add(ratio, Tensor(np.ones((), dtype=sims.dtype))))


def loss_contrastive(anchors, positives, negatives, anchor_mask, neg_mask, eps=1e-8):
    """Mean of :func:`contrastive_terms` over anchors whose user has negatives.

    Returns exactly 0 when no anchor qualifies.
    """
    anchor_mask = np.asarray(anchor_mask, dtype=bool)
    neg_mask = np.asarray(neg_mask, dtype=bool)
    valid = anchor_mask & neg_mask.any(axis=1)[:, None]
    count = int(valid.sum())
    if count == 0:
        return _zero(anchors.dtype)
    terms = contrastive_terms(anchors, positives, negatives, neg_mask, eps)
    return T.scale(T.sum(T.multiply_mask(terms, valid)), 1.0 / count)


def loss_composite(ce_pos, ce_neg, contrastive, weights):
    """``ce_pos + alpha * ce_neg + beta * contrastive`` with a finiteness check."""
    for name, part in (("ce_pos", ce_pos), ("ce_neg", ce_neg), ("contrastive", contrastive)):
        if not np.all(np.isfinite(part.data)):
            raise DivergenceError(f"loss term {name} is non-finite ({float(part.data)})")
    total = T.add(ce_pos, T.scale(ce_neg, weights.alpha))
    total = T.add(total, T.scale(contrastive, weights.beta))
    return LossParts(total, ce_pos, ce_neg, contrastive)


def model_loss(model, batch, weights, training=True):
    """Forward ``batch`` through ``model`` and assemble every loss term."""
    out = model.forward(batch, training=training)
    ce_pos = loss_ce_positive(out.pos_logits, out.pos_targets)
    ce_neg = loss_ce_negative(out.neg_logits, out.neg_targets, model.dtype)
    if batch.contrast_tgt is not None and batch.neg_set is not None:
        emb = model.params["item_emb"]
        positives = T.embedding_gather(emb, batch.contrast_tgt)
        negatives = T.embedding_gather(emb, batch.neg_set)
        contrastive = loss_contrastive(out.hidden, positives, negatives, batch.contrast_tgt > 0, batch.neg_set > 0)
    else:
        contrastive = _zero(model.dtype)
    return loss_composite(ce_pos, ce_neg, contrastive, weights)
