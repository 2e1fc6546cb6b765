import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pnfrec import data
from pnfrec.data import InteractionLog
from pnfrec.errors import EmptyInputError, ParseError, SplitError


def make_log(rows):
    """rows: (user, item, value, timestamp) with string/any external IDs."""
    uidx, iidx = {}, {}
    u = [uidx.setdefault(r[0], len(uidx)) for r in rows]
    i = [iidx.setdefault(r[1], len(iidx)) for r in rows]
    log = InteractionLog(
        users=np.asarray(u, dtype=np.int64),
        items=np.asarray(i, dtype=np.int64),
        values=np.asarray([r[2] for r in rows], dtype=float),
        timestamps=np.asarray([r[3] for r in rows], dtype=np.int64),
        user_ids=list(uidx),
        item_ids=list(iidx),
    )
    return data.sort_log(log)


def records(log):
    return sorted(
        (log.user_ids[u], log.item_ids[i], float(v), int(t))
        for u, i, v, t in zip(log.users, log.items, log.values, log.timestamps)
    )


# -- loading -----------------------------------------------------------------


def test_load_three_rows_remaps_ids(tmp_path):
    p = tmp_path / "log.csv"
    p.write_text("user_id,item_id,value,timestamp\nalice,x9,4,100\nbob,x2,1,50\nalice,x2,5,90\n")
    log = data.load_interactions(p)
    assert len(log) == 3
    assert log.user_ids == ["alice", "bob"]
    assert log.item_ids == ["x9", "x2"]
    # alice's records sorted by time: x2@90 then x9@100
    assert list(log.users) == [0, 0, 1]
    assert list(log.items) == [1, 0, 1]
    assert list(log.timestamps) == [90, 100, 50]


def test_load_detects_tabs_and_extra_columns(tmp_path):
    p = tmp_path / "log.tsv"
    p.write_text("timestamp\titem_id\textra\tuser_id\tvalue\n5\ti\tz\tu\t3.5\n")
    log = data.load_interactions(p)
    assert log.values[0] == 3.5 and log.timestamps[0] == 5


def test_load_bad_timestamp_reports_line(tmp_path):
    p = tmp_path / "log.csv"
    p.write_text("user_id,item_id,value,timestamp\na,b,1,1\na,c,1,yesterday\n")
    with pytest.raises(ParseError, match="line 3"):
        data.load_interactions(p)


def test_load_empty_file(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(EmptyInputError):
        data.load_interactions(p)
    p.write_text("user_id,item_id,value,timestamp\n")
    with pytest.raises(EmptyInputError):
        data.load_interactions(p)


def test_load_missing_column(tmp_path):
    p = tmp_path / "log.csv"
    p.write_text("user_id,item_id,timestamp\na,b,1\n")
    with pytest.raises(ParseError, match="value"):
        data.load_interactions(p)


def test_load_keeps_duplicates_and_ties_in_file_order(tmp_path):
    p = tmp_path / "log.csv"
    p.write_text("user_id,item_id,value,timestamp\nu,a,5,7\nu,b,5,7\nu,a,5,7\n")
    log = data.load_interactions(p)
    assert len(log) == 3
    assert [log.item_ids[i] for i in log.items] == ["a", "b", "a"]


def test_write_then_load_round_trip(tmp_path):
    log = make_log([("u1", "i1", 4.0, 3), ("u2", "i2", 2.5, 1), ("u1", "i2", 1.0, 2)])
    data.write_interactions(log, tmp_path / "out.tsv")
    again = data.load_interactions(tmp_path / "out.tsv")
    assert records(again) == records(log)


# -- k-core ------------------------------------------------------------------


def kcore_oracle(rows, k):
    """Plain-Python fixed point over a list of (user, item) pairs."""
    rows = list(rows)
    while True:
        uc, ic = {}, {}
        for u, i in rows:
            uc[u] = uc.get(u, 0) + 1
            ic[i] = ic.get(i, 0) + 1
        kept = [(u, i) for u, i in rows if uc[u] >= k and ic[i] >= k]
        if len(kept) == len(rows):
            return kept
        rows = kept


def toy_kcore_rows():
    rows = []
    t = itertools.count()
    for u in range(7):
        for item in "ABCDE":
            rows.append((f"u{u}", item, 5.0, next(t)))
    for u in range(4):
        rows.append((f"u{u}", "F", 5.0, next(t)))
    for item in "ABCF":
        rows.append(("u7", item, 5.0, next(t)))
    return rows


def test_kcore_cascade_hand_traced():
    rows = toy_kcore_rows()
    out = data.kcore_filter(make_log(rows), 5)
    # u7 has 4 interactions -> removed; F then has 4 -> removed; u0..u3 keep 5 each
    assert sorted(out.user_ids) == [f"u{u}" for u in range(7)]
    assert sorted(out.item_ids) == list("ABCDE")
    assert len(out) == 35
    expected = kcore_oracle([(r[0], r[1]) for r in rows], 5)
    assert sorted((out.user_ids[u], out.item_ids[i]) for u, i in zip(out.users, out.items)) == sorted(expected)


def test_kcore_identity_cases():
    rows = [r for r in toy_kcore_rows() if r[1] != "F" and r[0] != "u7"]
    log = make_log(rows)
    assert records(data.kcore_filter(log, 5)) == records(log)
    full = make_log(toy_kcore_rows())
    assert records(data.kcore_filter(full, 1)) == records(full)


def test_kcore_everything_removed():
    with pytest.raises(EmptyInputError):
        data.kcore_filter(make_log([("u", "i", 1.0, 0)]), 2)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 12), st.integers(0, 9)), min_size=1, max_size=150), st.integers(1, 4))
def test_kcore_matches_oracle_and_is_fixed_point(pairs, k):
    rows = [(f"u{u}", f"i{i}", 1.0, t) for t, (u, i) in enumerate(pairs)]
    expected = kcore_oracle([(r[0], r[1]) for r in rows], k)
    if not expected:
        with pytest.raises(EmptyInputError):
            data.kcore_filter(make_log(rows), k)
        return
    out = data.kcore_filter(make_log(rows), k)
    got = sorted((out.user_ids[u], out.item_ids[i]) for u, i in zip(out.users, out.items))
    assert got == sorted(expected)
    assert records(data.kcore_filter(out, k)) == records(out)
    assert set(out.users) == set(range(out.num_users))
    assert set(out.items) == set(range(out.num_items))


# -- feedback ----------------------------------------------------------------

ML1M_RATING_COUNTS = {1: 56174, 2: 107557, 3: 261197, 4: 348971, 5: 226310}


def _histogram_log(counts):
    values = np.concatenate([np.full(c, float(v)) for v, c in counts.items()])
    n = len(values)
    return InteractionLog(np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64), values,
                          np.arange(n), ["u"], ["i"])


def test_threshold_four_on_ml1m_histogram():
    labeled = data.assign_feedback(_histogram_log(ML1M_RATING_COUNTS), 4)
    assert round(100 * labeled.negative_share) == 42


def test_threshold_rules():
    log = _histogram_log({v: 1 for v in range(1, 6)})
    assert list(data.assign_feedback(log, 4).positive) == [False, False, False, True, True]
    assert list(data.assign_feedback(log, 5).positive) == [False] * 4 + [True]
    assert data.assign_feedback(log, 0.5).positive.all()


# -- sequences ---------------------------------------------------------------


def test_build_sequences_hand_trace():
    rows = [("u", it, v, t) for t, (it, v) in enumerate(zip("ABCDE", [5, 1, 5, 1, 5]))]
    seqs = data.build_sequences(data.assign_feedback(make_log(rows), 3), 2)
    log_items = make_log(rows).item_ids
    name = lambda arr: "".join(log_items[i] for i in arr)
    assert name(seqs.pos[0]) == "CE"
    assert name(seqs.neg[0]) == "BD"
    one = data.build_sequences(data.assign_feedback(make_log(rows), 3), 1)
    assert name(one.pos[0]) == "E" and name(one.neg[0]) == "D"


def test_all_positive_user_has_empty_negatives():
    rows = [("u", f"i{t}", 5.0, t) for t in range(4)]
    seqs = data.build_sequences(data.assign_feedback(make_log(rows), 3), 10)
    assert len(seqs.neg[0]) == 0 and len(seqs.pos[0]) == 4


def _random_rows(rng, n_users=6, n_items=8, n=60):
    return [
        (f"u{rng.integers(n_users)}", f"i{rng.integers(n_items)}", float(rng.integers(1, 6)), int(rng.integers(0, 1000)))
        for _ in range(n)
    ]


@pytest.mark.parametrize("seed", range(5))
def test_sequences_commute_with_user_permutation(seed):
    rng = np.random.default_rng(seed)
    rows = _random_rows(rng)
    perm = rng.permutation(len(rows))
    a = make_log(rows)
    b = make_log([rows[j] for j in perm])

    def by_user(log):
        s = data.build_sequences(data.assign_feedback(log, 3), 4)
        out = {}
        for u, uid in enumerate(log.user_ids):
            out[uid] = tuple(tuple(log.item_ids[i] for i in seq) for seq in (s.pos[u], s.neg[u]))
        return out

    # ties in timestamp keep file order, so only compare tie-free histories
    for rows_ in (rows,):
        keys = [(r[0], r[3]) for r in rows_]
        if len(set(keys)) != len(keys):
            pytest.skip("timestamp tie within a user")
    assert by_user(a) == by_user(b)


@pytest.mark.parametrize("seed", range(5))
def test_sequence_items_keep_polarity_and_order(seed):
    rng = np.random.default_rng(seed)
    labeled = data.assign_feedback(make_log(_random_rows(rng)), 3)
    seqs = data.build_sequences(labeled, 3)
    for u in range(labeled.log.num_users):
        full, flags = seqs.full[u], seqs.full_positive[u]
        assert list(seqs.pos[u]) == list(full[flags][-3:])
        assert list(seqs.neg[u]) == list(full[~flags][-3:])


# -- temporal split ----------------------------------------------------------


def test_boundary_hand_trace():
    rows = [("a" if t % 2 else "b", f"i{t}", 5.0, t) for t in range(1, 11)]
    labeled = data.assign_feedback(make_log(rows), 3)
    split = data.temporal_split(labeled, 0.9, seed=0)
    assert split.boundary_timestamp == 10
    assert len(split.train) == 9
    assert len(split.val) + len(split.test) == 1
    held = split.val if len(split.val) else split.test
    log = labeled.log
    assert log.user_ids[held.users[0]] == "b"
    assert log.item_ids[held.gt_item[0]] == "i10"
    assert list(held.input_timestamps[0]) == [2, 4, 6, 8]


def test_ground_truth_polarity_follows_threshold():
    rows = [("a", f"i{t}", 5.0, t) for t in range(9)] + [("b", "x", 5.0, 0), ("b", "y", 1.0, 100)]
    split = data.temporal_split(data.assign_feedback(make_log(rows), 3), 0.9, seed=0)
    held = split.val if len(split.val) else split.test
    assert not held.gt_positive[0]


def test_single_post_boundary_interaction_user_is_dropped():
    rows = [("a", f"i{t}", 5.0, t) for t in range(9)] + [("late", "z", 5.0, 99)]
    split = data.temporal_split(data.assign_feedback(make_log(rows), 3), 0.9, seed=0)
    assert len(split.val) + len(split.test) == 0


def test_split_needs_post_boundary_records():
    rows = [("a", "i", 5.0, 1)] * 3
    with pytest.raises(SplitError):
        data.temporal_split(data.assign_feedback(make_log(rows), 3), 0.9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.5, 0.95))
def test_split_invariants(seed, fraction):
    rng = np.random.default_rng(seed)
    rows = [(f"u{rng.integers(30)}", f"i{rng.integers(20)}", float(rng.integers(1, 6)), int(rng.integers(0, 10_000)))
            for _ in range(300)]
    labeled = data.assign_feedback(make_log(rows), 3)
    split = data.temporal_split(labeled, fraction, seed=seed)
    b = split.boundary_timestamp
    assert (split.train.log.timestamps < b).all()
    assert (labeled.log.timestamps < b).sum() >= fraction * len(labeled) - 1e-9
    assert (labeled.log.timestamps < b - 1).sum() < fraction * len(labeled)
    assert not set(split.val.users) & set(split.test.users)
    assert abs(len(split.val) - len(split.test)) <= 1
    train_keys = set(zip(split.train.log.users.tolist(), split.train.log.timestamps.tolist()))
    for es in (split.val, split.test):
        assert not train_keys & set(zip(es.users.tolist(), es.gt_timestamp.tolist()))
        assert (es.gt_timestamp >= b).all()
        for j in range(len(es)):
            assert es.input_positive[j].any()


def test_save_and_load_split_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    rows = [(f"u{rng.integers(20)}", f"i{rng.integers(15)}", float(rng.integers(1, 6)), int(rng.integers(0, 500)))
            for _ in range(200)]
    labeled = data.assign_feedback(make_log(rows), 3)
    split = data.temporal_split(labeled, 0.8, seed=5)
    data.save_split(split, tmp_path / "s", max_len=7)
    back = data.load_split(tmp_path / "s")
    assert back.boundary_timestamp == split.boundary_timestamp
    assert back.meta["l"] == 7 and back.meta["seed"] == 5
    assert records(back.train.log) == records(split.train.log)
    assert (back.train.positive == split.train.positive).all()
    for a, b in ((split.val, back.val), (split.test, back.test)):
        assert list(a.users) == list(b.users)
        assert list(a.gt_item) == list(b.gt_item)
        assert list(a.gt_positive) == list(b.gt_positive)
        for x, y in zip(a.inputs, b.inputs):
            assert list(x) == list(y)
    meta = (tmp_path / "s" / "metadata.txt").read_text()
    for key in ("boundary_timestamp", "threshold", "l", "U", "N", "seed"):
        assert f"{key}=" in meta
