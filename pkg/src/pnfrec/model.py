"""Causal transformer encoders and the dual positive/negative recommender.

Item indices inside the model are shifted by one: row 0 of the item table is
the padding row and dataset item ``i`` lives in row ``i + 1``.  Sequences are
left-padded so the most recent item always sits in the last position.

Parameter naming (also the checkpoint order)::

    item_emb                                  (N+1, d)
    <enc>.pos_emb                             (l, d)
    <enc>.block<b>.{wq,bq,wk,bk,wv,bv,wo,bo}  attention projections
    <enc>.block<b>.{ln1_g,ln1_b}              post-attention layer norm
    <enc>.block<b>.{w1,b1,w2,b2}              position-wise feed-forward
    <enc>.block<b>.{ln2_g,ln2_b}              post-feed-forward layer norm

``<enc>`` is ``pos`` for the inference encoder and ``neg`` for the negative
encoder (dual variant only).  Each block holds ``6 d^2 + 10 d`` numbers, so a
model has ``(N+1) d + n_enc (l d + num_blocks (6 d^2 + 10 d))`` parameters.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import CheckpointError, ConfigError, InferenceError, ShapeError
from .tensor import Tensor

MASK_VALUE = -1e9
CHECKPOINT_MAGIC = b"PNFR"
CHECKPOINT_VERSION = 1
BLOCK_PARAMS = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_g", "ln1_b", "w1", "b1", "w2", "b2", "ln2_g", "ln2_b")


class Variant(str, enum.Enum):
    PNFREC = "pnfrec"
    SASREC_P = "sasrec_p"
    SASREC = "sasrec"
    SASREC_C = "sasrec_c"

    @property
    def dual(self):
        return self is Variant.PNFREC

    @property
    def full_sequence(self):
        """Whether the encoder reads the interleaved history instead of positives only."""
        return self in (Variant.SASREC, Variant.SASREC_C)

    @property
    def tag(self):
        return list(Variant).index(self)


@dataclass(frozen=True)
class EncoderConfig:
    d: int = 64
    num_blocks: int = 2
    num_heads: int = 1
    l: int = 50
    dropout_rate: float = 0.2

    def __post_init__(self):
        if self.d < 1 or self.num_heads < 1 or self.d % self.num_heads:
            raise ConfigError(f"d={self.d} must be a positive multiple of num_heads={self.num_heads}")
        if self.l < 1:
            raise ConfigError("l must be >= 1")
        if self.num_blocks < 0:
            raise ConfigError("num_blocks must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")


def parameter_count(variant, n_items, config):
    d = config.d
    n_enc = 2 if Variant(variant).dual else 1
    return (n_items + 1) * d + n_enc * (config.l * d + config.num_blocks * (6 * d * d + 10 * d))


def _xavier(rng, shape, dtype):
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _encoder_params(prefix, config, rng, dtype):
    d = config.d
    out = {f"{prefix}.pos_emb": _xavier(rng, (config.l, d), dtype)}
    for b in range(config.num_blocks):
        p = f"{prefix}.block{b}."
        for name in BLOCK_PARAMS:
            if name.startswith("w"):
                out[p + name] = _xavier(rng, (d, d), dtype)
            elif name.endswith("_g"):
                out[p + name] = np.ones(d, dtype=dtype)
            else:
                out[p + name] = np.zeros(d, dtype=dtype)
    return out


@dataclass
class TrainBatch:
    """Model-index arrays for one mini-batch (0 marks padding / no target)."""

    main_in: np.ndarray
    main_tgt: np.ndarray
    neg_in: np.ndarray | None = None
    neg_tgt: np.ndarray | None = None
    contrast_tgt: np.ndarray | None = None
    neg_set: np.ndarray | None = None


@dataclass
class ForwardOutput:
    hidden: Tensor
    pos_logits: Tensor | None
    pos_targets: np.ndarray
    neg_logits: Tensor | None
    neg_targets: np.ndarray


class SeqRecModel:
    """One or two causal transformer encoders over a shared item table."""

    def __init__(self, variant, n_items, config=None, seed=0, dtype=np.float32):
        self.variant = Variant(variant)
        self.n_items = int(n_items)
        self.config = config or EncoderConfig()
        self.seed = seed
        self.dtype = np.dtype(dtype)
        arrays = {}
        emb = _xavier(np.random.default_rng([seed, 0]), (self.n_items + 1, self.config.d), self.dtype)
        emb[0] = 0
        arrays["item_emb"] = emb
        arrays.update(_encoder_params("pos", self.config, np.random.default_rng([seed, 1]), self.dtype))
        if self.variant.dual:
            arrays.update(_encoder_params("neg", self.config, np.random.default_rng([seed, 2]), self.dtype))
        self.params = {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}
        self.dropout_rng = {
            "pos": np.random.default_rng([seed, 11]),
            "neg": np.random.default_rng([seed, 12]),
        }

    @property
    def encoders(self):
        return ("pos", "neg") if self.variant.dual else ("pos",)

    def num_parameters(self):
        return int(sum(p.data.size for p in self.params.values()))

    # -- encoder -------------------------------------------------------------

    def _pad(self, seq):
        seq = np.asarray(seq, dtype=np.int64)
        if seq.ndim == 1:
            seq = seq[None, :]
        l = self.config.l
        if seq.shape[1] > l:
            raise ShapeError(f"sequence length {seq.shape[1]} exceeds max length {l}")
        if seq.shape[1] < l:
            seq = np.concatenate([np.zeros((seq.shape[0], l - seq.shape[1]), dtype=np.int64), seq], axis=1)
        if seq.size and (seq.min() < 0 or seq.max() > self.n_items):
            raise IndexError(f"item index outside [0, {self.n_items}]")
        return seq

    def encode(self, seq, which="pos", training=False):
        """Hidden states ``(B, l, d)`` for left-padded model-index sequences."""
        cfg = self.config
        seq = self._pad(seq)
        B, l = seq.shape
        p = self.params
        rng = self.dropout_rng[which]
        rate = cfg.dropout_rate if training else 0.0
        keep = seq > 0
        keep3 = keep[:, :, None]

        x = T.add(T.embedding_gather(p["item_emb"], seq), p[f"{which}.pos_emb"])
        x = T.dropout(x, rate, rng, training)
        x = T.multiply_mask(x, keep3)
        attn_keep = np.tril(np.ones((l, l), dtype=bool))[None] & keep[:, None, :]
        for b in range(cfg.num_blocks):
            x = self._block(x, f"{which}.block{b}.", attn_keep, rng, rate, training)
            x = T.multiply_mask(x, keep3)
        return x

    def _block(self, x, pre, attn_keep, rng, rate, training):
        p = self.params
        B, l, d = x.shape
        h = self.config.num_heads
        dh = d // h

        def proj(w, b):
            return T.add(T.matmul(x, p[pre + w]), p[pre + b])

        q, k, v = proj("wq", "bq"), proj("wk", "bk"), proj("wv", "bv")
        if h > 1:
            q, k, v = (T.transpose(T.reshape(t, (B, l, h, dh)), (0, 2, 1, 3)) for t in (q, k, v))
            mask = attn_keep[:, None]
        else:
            mask = attn_keep
        scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / np.sqrt(dh))
        scores = T.masked_fill(scores, np.broadcast_to(mask, scores.shape), MASK_VALUE)
        ctx = T.matmul(T.softmax_rows(scores), v)
        if h > 1:
            ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (B, l, d))
        attn_out = T.dropout(T.add(T.matmul(ctx, p[pre + "wo"]), p[pre + "bo"]), rate, rng, training)
        x = T.layer_norm(T.add(x, attn_out), p[pre + "ln1_g"], p[pre + "ln1_b"])
        hidden = T.relu(T.add(T.matmul(x, p[pre + "w1"]), p[pre + "b1"]))
        ff = T.dropout(T.add(T.matmul(hidden, p[pre + "w2"]), p[pre + "b2"]), rate, rng, training)
        return T.layer_norm(T.add(x, ff), p[pre + "ln2_g"], p[pre + "ln2_b"])

    # -- heads ---------------------------------------------------------------

    def score_items(self, hidden):
        """Logits over the N real items: ``hidden @ E[1:].T``."""
        items = T.slice_rows(self.params["item_emb"], 1)
        return T.matmul(hidden, T.transpose(items))

    def _branch(self, which, seq_in, seq_tgt, training):
        H = self.encode(seq_in, which, training)
        B, l, d = H.shape
        flat_tgt = self._pad(seq_tgt).ravel()
        sel = np.flatnonzero(flat_tgt)
        if sel.size == 0:
            return H, None, np.zeros(0, dtype=np.int64)
        rows = T.embedding_gather(T.reshape(H, (B * l, d)), sel)
        return H, self.score_items(rows), flat_tgt[sel] - 1

    def forward(self, batch, training=True):
        """Run every encoder of the variant on a :class:`TrainBatch`."""
        H, pos_logits, pos_t = self._branch("pos", batch.main_in, batch.main_tgt, training)
        neg_logits, neg_t = None, np.zeros(0, dtype=np.int64)
        if self.variant.dual and batch.neg_in is not None:
            _, neg_logits, neg_t = self._branch("neg", batch.neg_in, batch.neg_tgt, training)
        return ForwardOutput(H, pos_logits, pos_t, neg_logits, neg_t)

    # -- inference -----------------------------------------------------------

    def inference_sequence(self, items, positive):
        """Model-index input for one user history (dataset item IDs)."""
        items = np.asarray(items, dtype=np.int64)
        if not self.variant.full_sequence:
            items = items[np.asarray(positive, dtype=bool)]
        return items[-self.config.l:] + 1

    def score_histories(self, histories, batch_size=256):
        """Final-position logits ``(U, N)`` for a list of model-index sequences."""
        l = self.config.l
        out = np.empty((len(histories), self.n_items), dtype=self.dtype)
        for start in range(0, len(histories), batch_size):
            chunk = histories[start:start + batch_size]
            seq = np.zeros((len(chunk), l), dtype=np.int64)
            for r, h in enumerate(chunk):
                if len(h):
                    seq[r, l - len(h):] = h
            H = self.encode(seq, "pos", training=False)
            out[start:start + len(chunk)] = self.score_items(Tensor(H.data[:, -1, :])).data
        return out

    def predict_topk(self, items, positive, k, filter_seen=True):
        """Top-``k`` dataset item IDs for one user's full history."""
        items = np.asarray(items, dtype=np.int64)
        seq = self.inference_sequence(items, positive)
        if seq.size == 0:
            raise InferenceError("cannot rank items for an empty input sequence")
        scores = self.score_histories([seq])[0].astype(np.float64)
        if filter_seen:
            scores[items] = -np.inf
        n_left = int(np.isfinite(scores).sum())
        if n_left == 0:
            raise InferenceError("every item was filtered out: empty candidate set")
        order = np.argsort(-scores, kind="stable")
        return order[: min(k, n_left)]

    # -- checkpoints ---------------------------------------------------------

    def save(self, path):
        cfg = self.config
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", CHECKPOINT_VERSION))
            fh.write(struct.pack("<6I", cfg.d, cfg.num_blocks, cfg.num_heads, cfg.l, self.n_items, self.variant.tag))
            fh.write(struct.pack("<I", len(self.params)))
            for t in self.params.values():
                fh.write(struct.pack("<I", t.ndim))
                fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
                fh.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path, dropout_rate=0.2, seed=0):
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        (version,) = struct.unpack_from("<I", blob, 4)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        try:
            d, blocks, heads, l, n_items, tag = struct.unpack_from("<6I", blob, 8)
            variant = list(Variant)[tag]
            model = cls(variant, n_items, EncoderConfig(d, blocks, heads, l, dropout_rate), seed=seed)
            (count,) = struct.unpack_from("<I", blob, 32)
            if count != len(model.params):
                raise CheckpointError(f"{path}: expected {len(model.params)} tensors, found {count}")
            off = 36
            for t in model.params.values():
                (ndim,) = struct.unpack_from("<I", blob, off)
                shape = struct.unpack_from(f"<{ndim}I", blob, off + 4)
                off += 4 + 4 * ndim
                if tuple(shape) != t.shape:
                    raise CheckpointError(f"{path}: tensor {t.name} has shape {shape}, expected {t.shape}")
                n = int(np.prod(shape))
                t.data = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape).astype(np.float32)
                off += 4 * n
        except (struct.error, ValueError, IndexError) as exc:
            raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None
        if off != len(blob):
            raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes after the last tensor")
        return model
