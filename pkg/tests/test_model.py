import numpy as np
import pytest

from pnfrec.errors import CheckpointError, InferenceError, ShapeError
from pnfrec.losses import LossWeights, loss_ce_negative, model_loss
from pnfrec.model import EncoderConfig, SeqRecModel, TrainBatch, Variant, parameter_count
from pnfrec.optim import Adam
from pnfrec.tensor import Tensor


def small(variant="pnfrec", n_items=12, seed=0, dtype=np.float32, **kw):
    cfg = dict(d=8, num_blocks=2, num_heads=2, l=6, dropout_rate=0.2)
    cfg.update(kw)
    return SeqRecModel(variant, n_items, EncoderConfig(**cfg), seed=seed, dtype=dtype)


def set_params(model, **arrays):
    for k, v in arrays.items():
        model.params[k].data = np.asarray(v, dtype=model.dtype)


def toy_batch(rng, n_items=12, B=4, l=6):
    def seqs():
        out = np.zeros((B, l), dtype=np.int64)
        for r in range(B):
            n = rng.integers(1, l + 1)
            out[r, l - n:] = rng.integers(1, n_items + 1, size=n)
        return out

    main_in, main_tgt = seqs(), seqs()
    main_tgt[main_in == 0] = 0
    neg_in, neg_tgt = seqs(), seqs()
    neg_tgt[neg_in == 0] = 0
    return TrainBatch(main_in, main_tgt, neg_in, neg_tgt, main_tgt.copy(), seqs())


# -- encoder -----------------------------------------------------------------


@pytest.mark.parametrize("variant,heads", [("pnfrec", 1), ("sasrec", 2), ("sasrec_p", 4)])
def test_causality_bit_identical(variant, heads):
    model = small(variant, num_heads=heads)
    rng = np.random.default_rng(0)
    base = rng.integers(1, 13, size=(3, 6))
    H = model.encode(base).data
    for t in range(5):
        pert = base.copy()
        pert[:, t + 1:] = rng.integers(1, 13, size=(3, 5 - t))
        H2 = model.encode(pert).data
        assert np.array_equal(H[:, : t + 1], H2[:, : t + 1])


def test_all_padding_sequence_is_defined_and_zero():
    H = small().encode(np.zeros((2, 6), dtype=np.int64)).data
    assert np.isfinite(H).all() and not H.any()


def test_padding_positions_do_not_affect_real_ones():
    model = small()
    a = model.encode([[0, 0, 0, 3, 4, 5]]).data
    b = model.encode([[3, 4, 5]]).data
    assert np.array_equal(a, b)


def test_zero_block_forward_by_hand():
    # d=2, l=2, one item in the history: hidden = E[item] + P[last]
    model = SeqRecModel("sasrec_p", 3, EncoderConfig(d=2, num_blocks=0, num_heads=1, l=2), seed=0)
    set_params(model, item_emb=[[0, 0], [1, 0], [0, 1], [1, 1]], **{"pos.pos_emb": [[0.5, 0], [0, 0.5]]})
    H = model.encode([2]).data
    assert np.allclose(H[0], [[0, 0], [0, 1.5]])
    logits = model.score_items(Tensor(H[0, -1:])).data
    assert np.allclose(logits, [[0.0, 1.5, 1.5]])


def test_sequence_longer_than_l_rejected():
    with pytest.raises(ShapeError):
        small().encode(np.ones((1, 7), dtype=np.int64))


def test_item_index_out_of_range():
    with pytest.raises(IndexError):
        small(n_items=12).encode([[13]])


# -- scoring -----------------------------------------------------------------


def test_score_items_hand_logits():
    model = SeqRecModel("sasrec_p", 3, EncoderConfig(d=2, num_blocks=0, l=2), seed=0)
    set_params(model, item_emb=[[0, 0], [1, 0], [0, 1], [1, -1]])
    logits = model.score_items(Tensor(np.array([[2.0, 3.0], [0.0, 0.0]]))).data
    assert np.allclose(logits, [[2, 3, -1], [0, 0, 0]])


def test_hidden_equal_to_a_row_picks_that_item():
    model = small(n_items=8, d=8)
    E = np.zeros((9, 8))
    E[1:] = np.eye(8)
    set_params(model, item_emb=E)
    for j in range(8):
        assert int(np.argmax(model.score_items(Tensor(E[j + 1][None])).data)) == j


def _tiny_ranker():
    model = SeqRecModel("sasrec_p", 3, EncoderConfig(d=2, num_blocks=0, l=2), seed=0)
    set_params(model, item_emb=[[0, 0], [1, 0], [0, 1], [1, 0]], **{"pos.pos_emb": np.zeros((2, 2))})
    return model


def test_predict_topk_against_enumeration():
    model = _tiny_ranker()
    E = model.params["item_emb"].data[1:].astype(np.float64)
    for last in range(3):
        hist = [(last + 1) % 3, last]
        h = E[last]
        for filter_seen in (True, False):
            cands = [i for i in range(3) if not (filter_seen and i in hist)]
            best = min(cands, key=lambda i: (-float(h @ E[i]), i))
            got = model.predict_topk(hist, [True, True], 1, filter_seen)
            assert list(got) == [best]
    # tie between items 0 and 2 goes to the lower index
    assert list(model.predict_topk([0], [True], 3, filter_seen=False)) == [0, 2, 1]


def test_predict_topk_length_and_errors():
    model = _tiny_ranker()
    assert len(model.predict_topk([0], [True], 10)) == 2
    assert len(model.predict_topk([0, 1], [True, True], 10)) == 1
    with pytest.raises(InferenceError, match="empty candidate"):
        model.predict_topk([0, 1, 2], [True] * 3, 1)
    with pytest.raises(InferenceError):
        model.predict_topk([0], [False], 1)


def test_positive_variant_ignores_negatives_at_inference():
    model = small("pnfrec")
    items, flags = [1, 2, 3, 4], [True, False, True, False]
    assert list(model.inference_sequence(items, flags)) == [2, 4]
    assert list(small("sasrec").inference_sequence(items, flags)) == [2, 3, 4, 5]


# -- dual branches -----------------------------------------------------------


def test_negative_gradients_reach_embeddings_not_positive_encoder():
    model = small("pnfrec", dtype=np.float64)
    batch = toy_batch(np.random.default_rng(1))
    out = model.forward(batch, training=False)
    loss_ce_negative(out.neg_logits, out.neg_targets).backward()
    for name, p in model.params.items():
        if name.startswith("pos."):
            assert p.grad is None or not p.grad.any(), name
    assert model.params["neg.block0.wq"].grad.any()
    g = model.params["item_emb"].grad
    touched = np.unique(batch.neg_in[batch.neg_in > 0])
    assert np.abs(g[touched]).sum(axis=1).min() > 0
    assert not g[0].any()


def test_user_without_negatives_leaves_positive_branch_unchanged():
    model = small("pnfrec")
    batch = toy_batch(np.random.default_rng(2))
    a = model.forward(batch, training=False)
    batch.neg_in[0] = 0
    batch.neg_tgt[0] = 0
    b = model.forward(batch, training=False)
    assert np.array_equal(a.pos_logits.data, b.pos_logits.data)
    assert b.neg_logits.shape[0] < a.neg_logits.shape[0]


def test_zeroing_negative_positions_changes_no_positive_output():
    model = small("pnfrec")
    batch = toy_batch(np.random.default_rng(3))
    a = model.forward(batch, training=False)
    model.params["neg.pos_emb"].data = np.zeros_like(model.params["neg.pos_emb"].data)
    b = model.forward(batch, training=False)
    assert np.array_equal(a.pos_logits.data, b.pos_logits.data)
    assert not np.array_equal(a.neg_logits.data, b.neg_logits.data)


def test_zero_weights_step_matches_positive_only_model():
    batch = toy_batch(np.random.default_rng(4))
    dual, single = small("pnfrec", seed=7), small("sasrec_p", seed=7)
    for model in (dual, single):
        opt = Adam(model.params, lr=1e-2)
        for _ in range(3):
            opt.zero_grad()
            model_loss(model, batch, LossWeights(0.0, 0.0), training=True).total.backward()
            opt.step()
    for name, p in single.params.items():
        assert np.array_equal(p.data, dual.params[name].data), name


# -- bookkeeping -------------------------------------------------------------


@pytest.mark.parametrize("variant,d,blocks,heads,l,n", [
    ("pnfrec", 8, 2, 2, 6, 12), ("sasrec_p", 16, 1, 4, 10, 30), ("sasrec", 4, 0, 1, 3, 5), ("sasrec_c", 64, 2, 1, 50, 500),
])
def test_parameter_count_formula(variant, d, blocks, heads, l, n):
    cfg = EncoderConfig(d, blocks, heads, l)
    n_enc = 2 if variant == "pnfrec" else 1
    assert parameter_count(variant, n, cfg) == (n + 1) * d + n_enc * (l * d + blocks * (6 * d * d + 10 * d))
    assert SeqRecModel(variant, n, cfg).num_parameters() == parameter_count(variant, n, cfg)


def test_init_is_seeded_and_padding_row_zero():
    a, b, c = small(seed=3), small(seed=3), small(seed=4)
    assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)
    assert not np.array_equal(a.params["item_emb"].data, c.params["item_emb"].data)
    assert not a.params["item_emb"].data[0].any()


@pytest.mark.parametrize("variant", [v.value for v in Variant])
def test_checkpoint_round_trip(tmp_path, variant):
    model = small(variant)
    path = tmp_path / "m.ckpt"
    model.save(path)
    back = SeqRecModel.load(path)
    assert back.variant.value == variant and back.config.l == 6 and back.config.num_heads == 2
    assert list(back.params) == list(model.params)
    for k in model.params:
        assert np.array_equal(back.params[k].data, model.params[k].data)
    seq = [[1, 2, 3]]
    assert np.array_equal(back.encode(seq).data, model.encode(seq).data)
    back.save(tmp_path / "again.ckpt")
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_checkpoint_corruption(tmp_path):
    path = tmp_path / "m.ckpt"
    small().save(path)
    blob = path.read_bytes()
    for bad, msg in ((b"XXXX" + blob[4:], "magic"), (blob[:4] + (9).to_bytes(4, "little") + blob[8:], "version"),
                     (blob[:-3], "corrupt"), (blob + b"\0", "trailing")):
        path.write_bytes(bad)
        with pytest.raises(CheckpointError, match=msg):
            SeqRecModel.load(path)


def test_dropout_only_in_training():
    model = small(dropout_rate=0.5)
    seq = [[1, 2, 3, 4]]
    assert np.array_equal(model.encode(seq).data, model.encode(seq).data)
    assert not np.array_equal(model.encode(seq, training=True).data, model.encode(seq).data)
