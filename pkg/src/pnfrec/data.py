"""Interaction logs: loading, k-core filtering, polarity labels, sequences and splits.

Records are held column-wise in numpy arrays.  Internal user/item IDs are
dense integers; the external string IDs are kept alongside so logs can be
written back out unchanged.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptyInputError, ParseError, SplitError, DataError

REQUIRED_COLUMNS = ("user_id", "item_id", "value", "timestamp")


@dataclass
class InteractionLog:
    users: np.ndarray
    items: np.ndarray
    values: np.ndarray
    timestamps: np.ndarray
    user_ids: list
    item_ids: list

    @property
    def num_users(self):
        return len(self.user_ids)

    @property
    def num_items(self):
        return len(self.item_ids)

    def __len__(self):
        return len(self.users)

    def subset(self, mask):
        return replace(
            self,
            users=self.users[mask],
            items=self.items[mask],
            values=self.values[mask],
            timestamps=self.timestamps[mask],
        )


@dataclass
class LabeledLog:
    log: InteractionLog
    positive: np.ndarray
    threshold: float

    def __len__(self):
        return len(self.log)

    def subset(self, mask):
        return LabeledLog(self.log.subset(mask), self.positive[mask], self.threshold)

    @property
    def negative_share(self):
        return 1.0 - float(self.positive.mean()) if len(self) else 0.0


@dataclass
class UserSequences:
    """Per-user chronological sequences (dataset item IDs, 0-based)."""

    full: list
    full_positive: list
    pos: list
    neg: list
    max_len: int


@dataclass
class EvalSet:
    """Held-out users: each has an input history and one ground-truth item."""

    users: np.ndarray
    inputs: list
    input_positive: list
    input_timestamps: list
    gt_item: np.ndarray
    gt_positive: np.ndarray
    gt_timestamp: np.ndarray
    input_values: list = None
    gt_value: np.ndarray = None

    def __len__(self):
        return len(self.users)

    def positive_only(self):
        keep = np.flatnonzero(self.gt_positive)
        return self.take(keep)

    def take(self, idx):
        idx = np.asarray(idx, dtype=int)
        return EvalSet(
            users=self.users[idx],
            inputs=[self.inputs[i] for i in idx],
            input_positive=[self.input_positive[i] for i in idx],
            input_timestamps=[self.input_timestamps[i] for i in idx],
            gt_item=self.gt_item[idx],
            gt_positive=self.gt_positive[idx],
            gt_timestamp=self.gt_timestamp[idx],
            input_values=None if self.input_values is None else [self.input_values[i] for i in idx],
            gt_value=None if self.gt_value is None else self.gt_value[idx],
        )


@dataclass
class SplitBundle:
    train: LabeledLog
    val: EvalSet
    test: EvalSet
    boundary_timestamp: int
    meta: dict = field(default_factory=dict)

    @property
    def num_items(self):
        return self.train.log.num_items


# -- loading -----------------------------------------------------------------


def _sniff_delimiter(header):
    return "\t" if "\t" in header else ","


def load_interactions(path, delimiter=None):
    """Read a delimited interaction file with a mandatory header row.

    Internal IDs are assigned in order of first appearance; records are then
    stably sorted by (user, timestamp).
    """
    with open(path, encoding="utf-8", newline="") as fh:
        header = fh.readline()
        if not header.strip():
            raise EmptyInputError(f"{path}: empty input")
        delim = delimiter or _sniff_delimiter(header)
        cols = [c.strip() for c in header.rstrip("\r\n").split(delim)]
        missing = [c for c in REQUIRED_COLUMNS if c not in cols]
        if missing:
            raise ParseError(f"header is missing columns {missing}", line=1)
        pos = [cols.index(c) for c in REQUIRED_COLUMNS]
        user_index, item_index = {}, {}
        users, items, values, stamps = [], [], [], []
        for lineno, row in enumerate(csv.reader(fh, delimiter=delim), start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(cols):
                raise ParseError(f"expected {len(cols)} fields, got {len(row)}", line=lineno)
            u, i, v, ts = (row[p].strip() for p in pos)
            try:
                value = float(v)
            except ValueError:
                raise ParseError(f"non-numeric value {v!r}", line=lineno) from None
            try:
                stamp = int(ts)
            except ValueError:
                raise ParseError(f"non-integer timestamp {ts!r}", line=lineno) from None
            if not math.isfinite(value):
                raise ParseError(f"non-finite value {v!r}", line=lineno)
            users.append(user_index.setdefault(u, len(user_index)))
            items.append(item_index.setdefault(i, len(item_index)))
            values.append(value)
            stamps.append(stamp)
    if not users:
        raise EmptyInputError(f"{path}: no interaction rows")
    log = InteractionLog(
        users=np.asarray(users, dtype=np.int64),
        items=np.asarray(items, dtype=np.int64),
        values=np.asarray(values, dtype=np.float64),
        timestamps=np.asarray(stamps, dtype=np.int64),
        user_ids=list(user_index),
        item_ids=list(item_index),
    )
    return sort_log(log)


def sort_log(log):
    order = np.lexsort((log.timestamps, log.users))
    return log.subset(order)


def write_interactions(log, path, delimiter="\t"):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(REQUIRED_COLUMNS)
        for u, i, v, ts in zip(log.users, log.items, log.values, log.timestamps):
            w.writerow((log.user_ids[u], log.item_ids[i], _fmt_value(v), int(ts)))


def _fmt_value(v):
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


# -- filtering and labelling -------------------------------------------------


def kcore_filter(log, k=5):
    """Drop users and items with fewer than ``k`` interactions until nothing changes."""
    if k < 1:
        raise ValueError("k must be >= 1")
    keep = np.ones(len(log), dtype=bool)
    while True:
        u, i = log.users[keep], log.items[keep]
        ucount = np.bincount(u, minlength=log.num_users)
        icount = np.bincount(i, minlength=log.num_items)
        ok = (ucount[log.users] >= k) & (icount[log.items] >= k) & keep
        if ok.sum() == keep.sum():
            break
        keep = ok
    if not keep.any():
        raise EmptyInputError(f"{k}-core filtering removed every interaction")
    return _redensify(log.subset(keep))


def _redensify(log):
    ukeep = np.unique(log.users)
    ikeep = np.unique(log.items)
    umap = np.full(log.num_users, -1, dtype=np.int64)
    imap = np.full(log.num_items, -1, dtype=np.int64)
    umap[ukeep] = np.arange(len(ukeep))
    imap[ikeep] = np.arange(len(ikeep))
    return replace(
        log,
        users=umap[log.users],
        items=imap[log.items],
        user_ids=[log.user_ids[j] for j in ukeep],
        item_ids=[log.item_ids[j] for j in ikeep],
    )


def assign_feedback(log, threshold):
    """Label each record positive iff its value is at least ``threshold``."""
    if not math.isfinite(threshold):
        raise ValueError("threshold must be finite")
    return LabeledLog(log, log.values >= threshold, float(threshold))


def _user_slices(users, num_users):
    """Start/stop offsets of each user's block in a user-sorted array."""
    counts = np.bincount(users, minlength=num_users)
    stops = np.cumsum(counts)
    return stops - counts, stops


def build_sequences(labeled, l):
    """Chronological positive/negative subsequences, each cut to its last ``l`` items."""
    if l < 1:
        raise ValueError("max length must be >= 1")
    log = labeled.log
    starts, stops = _user_slices(log.users, log.num_users)
    full, full_pos, pos, neg = [], [], [], []
    for a, b in zip(starts, stops):
        items = log.items[a:b]
        flags = labeled.positive[a:b]
        full.append(items)
        full_pos.append(flags)
        pos.append(items[flags][-l:])
        neg.append(items[~flags][-l:])
    return UserSequences(full, full_pos, pos, neg, l)


# -- splitting ---------------------------------------------------------------


def temporal_boundary(timestamps, train_fraction=0.9):
    """Smallest timestamp ``b`` such that at least ``train_fraction`` of records have ts < b."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    ts = np.sort(np.asarray(timestamps))
    need = math.ceil(round(train_fraction * len(ts), 9))
    if need <= 0:
        return int(ts[0])
    return int(ts[need - 1]) + 1


def temporal_split(labeled, train_fraction=0.9, seed=0):
    """Global temporal boundary for training plus leave-last-out val/test users."""
    log = labeled.log
    boundary = temporal_boundary(log.timestamps, train_fraction)
    train_mask = log.timestamps < boundary
    if train_mask.all():
        raise SplitError("no interactions at or after the temporal boundary")
    train = labeled.subset(train_mask)

    starts, stops = _user_slices(log.users, log.num_users)
    late_users = np.unique(log.users[~train_mask])
    kept = []
    for u in late_users:
        a, b = starts[u], stops[u]
        # last record is the ground truth; need a positive item before it
        if b - a >= 2 and labeled.positive[a:b - 1].any():
            kept.append(u)
    kept = np.asarray(kept, dtype=np.int64)
    order = np.random.default_rng(seed).permutation(len(kept))
    shuffled = kept[order]
    val_users = np.sort(shuffled[0::2])
    test_users = np.sort(shuffled[1::2])
    meta = {
        "boundary_timestamp": boundary,
        "threshold": labeled.threshold,
        "train_fraction": train_fraction,
        "seed": seed,
        "U": log.num_users,
        "N": log.num_items,
    }
    return SplitBundle(
        train=train,
        val=_eval_set(labeled, val_users, starts, stops),
        test=_eval_set(labeled, test_users, starts, stops),
        boundary_timestamp=boundary,
        meta=meta,
    )


def _eval_set(labeled, users, starts, stops):
    log = labeled.log
    inputs, flags, stamps, vals, gt, gtp, gtt, gtv = [], [], [], [], [], [], [], []
    for u in users:
        a, b = starts[u], stops[u]
        vals.append(log.values[a:b - 1])
        gtv.append(log.values[b - 1])
        inputs.append(log.items[a:b - 1])
        flags.append(labeled.positive[a:b - 1])
        stamps.append(log.timestamps[a:b - 1])
        gt.append(log.items[b - 1])
        gtp.append(labeled.positive[b - 1])
        gtt.append(log.timestamps[b - 1])
    return EvalSet(
        users=np.asarray(users, dtype=np.int64),
        inputs=inputs,
        input_positive=flags,
        input_timestamps=stamps,
        gt_item=np.asarray(gt, dtype=np.int64),
        gt_positive=np.asarray(gtp, dtype=bool),
        gt_timestamp=np.asarray(gtt, dtype=np.int64),
        input_values=vals,
        gt_value=np.asarray(gtv, dtype=np.float64),
    )


# -- persistence -------------------------------------------------------------


def save_split(bundle, directory, max_len=None):
    """Write train/val/test TSVs, ID maps and a key=value metadata file."""
    os.makedirs(directory, exist_ok=True)
    log = bundle.train.log
    write_interactions(log, os.path.join(directory, "train.tsv"))
    for name, es in (("val", bundle.val), ("test", bundle.test)):
        _write_eval(es, log, os.path.join(directory, f"{name}.tsv"))
    for name, ids in (("users.txt", log.user_ids), ("items.txt", log.item_ids)):
        with open(os.path.join(directory, name), "w", encoding="utf-8") as fh:
            fh.writelines(f"{x}\n" for x in ids)
    meta = dict(bundle.meta)
    meta["boundary_timestamp"] = bundle.boundary_timestamp
    if max_len is not None:
        meta["l"] = max_len
    write_kv(os.path.join(directory, "metadata.txt"), meta)


def _write_eval(es, log, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(REQUIRED_COLUMNS + ("role",))
        for j, u in enumerate(es.users):
            uid = log.user_ids[u]
            for item, v, ts in zip(es.inputs[j], es.input_values[j], es.input_timestamps[j]):
                w.writerow((uid, log.item_ids[item], _fmt_value(v), int(ts), "input"))
            w.writerow((uid, log.item_ids[es.gt_item[j]], _fmt_value(es.gt_value[j]), int(es.gt_timestamp[j]), "target"))


def write_kv(path, mapping):
    with open(path, "w", encoding="utf-8") as fh:
        for key in mapping:
            fh.write(f"{key}={mapping[key]}\n")


def read_kv(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"expected key=value, got {line!r}", line=lineno)
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def load_split(directory):
    meta = read_kv(os.path.join(directory, "metadata.txt"))
    threshold = float(meta["threshold"])
    with open(os.path.join(directory, "users.txt"), encoding="utf-8") as fh:
        user_ids = [x.rstrip("\n") for x in fh]
    with open(os.path.join(directory, "items.txt"), encoding="utf-8") as fh:
        item_ids = [x.rstrip("\n") for x in fh]
    umap = {x: j for j, x in enumerate(user_ids)}
    imap = {x: j for j, x in enumerate(item_ids)}

    rows = _read_rows(os.path.join(directory, "train.tsv"), umap, imap)
    train_log = InteractionLog(
        users=np.asarray([r[0] for r in rows], dtype=np.int64),
        items=np.asarray([r[1] for r in rows], dtype=np.int64),
        values=np.asarray([r[2] for r in rows], dtype=np.float64),
        timestamps=np.asarray([r[3] for r in rows], dtype=np.int64),
        user_ids=user_ids,
        item_ids=item_ids,
    )
    train = assign_feedback(train_log, threshold)
    sets = {}
    for name in ("val", "test"):
        rows = _read_rows(os.path.join(directory, f"{name}.tsv"), umap, imap, with_role=True)
        sets[name] = _eval_from_rows(rows, threshold)
    meta_typed = {k: _parse_scalar(v) for k, v in meta.items()}
    return SplitBundle(train, sets["val"], sets["test"], int(meta["boundary_timestamp"]), meta_typed)


def _parse_scalar(s):
    for cast in (int, float):
        try:
            return cast(s)
        except ValueError:
            pass
    return s


def _read_rows(path, umap, imap, with_role=False):
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        next(reader)
        for lineno, row in enumerate(reader, start=2):
            try:
                rec = [umap[row[0]], imap[row[1]], float(row[2]), int(row[3])]
            except (KeyError, ValueError, IndexError) as exc:
                raise ParseError(f"bad split row {row!r} ({exc})", line=lineno) from None
            if with_role:
                rec.append(row[4])
            rows.append(rec)
    return rows


def _eval_from_rows(rows, threshold):
    by_user = {}
    for u, i, v, ts, role in rows:
        by_user.setdefault(u, []).append((i, v >= threshold, ts, role, v))
    users = sorted(by_user)
    es = EvalSet(np.asarray(users, dtype=np.int64), [], [], [], [], [], [], [], [])
    gt, gtp, gtt, gtv = [], [], [], []
    for u in users:
        recs = by_user[u]
        if recs[-1][3] != "target":
            raise DataError(f"user {u} has no target row")
        body = recs[:-1]
        es.inputs.append(np.asarray([r[0] for r in body], dtype=np.int64))
        es.input_positive.append(np.asarray([r[1] for r in body], dtype=bool))
        es.input_timestamps.append(np.asarray([r[2] for r in body], dtype=np.int64))
        es.input_values.append(np.asarray([r[4] for r in body], dtype=np.float64))
        gtv.append(recs[-1][4])
        gt.append(recs[-1][0])
        gtp.append(recs[-1][1])
        gtt.append(recs[-1][2])
    es.gt_item = np.asarray(gt, dtype=np.int64)
    es.gt_positive = np.asarray(gtp, dtype=bool)
    es.gt_timestamp = np.asarray(gtt, dtype=np.int64)
    es.gt_value = np.asarray(gtv, dtype=np.float64)
    return es
