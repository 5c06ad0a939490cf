from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dmsw.embed import (AutoencoderParams, RefinerParams, TextEmbedderConfig, autoencoder_loss_and_grads,
                        autoencoder_train, build_sequences, embed_text_hash, encode_numeric,
                        load_precomputed_embeddings, refine, refine_loss_grads, text_tensor, token_slot,
                        write_embeddings)
from dmsw.preprocess import numeric_tensor
from dmsw.records import Cohort, DataError, StudentRecord, load_cohort_dir


def test_hash_empty_and_normalized():
    cfg = TextEmbedderConfig(dim=16)
    assert not embed_text_hash("", cfg).any()
    assert not embed_text_hash("  ,;  ", cfg).any()
    a, b = embed_text_hash("Late to class, twice.", cfg), embed_text_hash("Late to class, twice.", cfg)
    assert np.array_equal(a, b)
    assert np.linalg.norm(a) == pytest.approx(1.0)


def test_hash_counts_repeats():
    cfg = TextEmbedderConfig(dim=64)
    ba, sa = token_slot("absent", cfg)
    br, sr = token_slot("reward", cfg)
    assert ba != br  # the hand count below assumes separate buckets
    v = embed_text_hash("absent absent reward", cfg)
    assert v[ba] == pytest.approx(2 * sa / np.sqrt(5))
    assert v[br] == pytest.approx(sr / np.sqrt(5))


def test_hash_is_case_and_punctuation_blind():
    assert np.array_equal(embed_text_hash("Absent; REWARD"), embed_text_hash("absent reward"))


@given(st.text(max_size=60))
def test_hash_norm_zero_or_one(text):
    n = np.linalg.norm(embed_text_hash(text, TextEmbedderConfig(dim=8)))
    assert n == 0 or abs(n - 1) < 1e-12


def test_hash_seed_changes_slots():
    slots = [token_slot(t, TextEmbedderConfig(hash_seed=1)) for t in "abcdefgh"]
    others = [token_slot(t, TextEmbedderConfig(hash_seed=2)) for t in "abcdefgh"]
    assert slots != others


def _write(path, rows):
    path.write_text("\n".join(rows) + "\n")


def test_precomputed_roundtrip(tmp_path):
    vecs = {(f"s{n}", p): np.arange(8.0) * (n + 1) + p for n in range(2) for p in range(1, 7)}
    write_embeddings(tmp_path / "e.csv", vecs)
    back = load_precomputed_embeddings(tmp_path / "e.csv", 8)
    assert len(back) == 12
    for k, v in vecs.items():
        assert np.array_equal(back[k], v)


def test_precomputed_missing_pair(tmp_path, assets):
    cohort = load_cohort_dir(assets / "three_students")
    vecs = {(s.student_id, p): np.ones(4) for s in cohort.students for p in range(1, 7)}
    del vecs[("A02", 3)]
    write_embeddings(tmp_path / "e.csv", vecs)
    with pytest.raises(DataError, match="A02.*period 3"):
        load_precomputed_embeddings(tmp_path / "e.csv", 4, cohort)


def test_precomputed_dimension_error(tmp_path):
    header = "student_id,period," + ",".join(f"v{i}" for i in range(8))
    _write(tmp_path / "e.csv", [header, "s1,1," + ",".join(["0.5"] * 8), "s1,2," + ",".join(["0.5"] * 7)])
    with pytest.raises(DataError, match=r"e\.csv:3: dimension"):
        load_precomputed_embeddings(tmp_path / "e.csv", 8)


def test_precomputed_nonfinite(tmp_path):
    _write(tmp_path / "e.csv", ["student_id,period,v0,v1", "s1,1,0.1,nan"])
    with pytest.raises(DataError, match="non-finite"):
        load_precomputed_embeddings(tmp_path / "e.csv", 2)


def test_autoencoder_zero_epochs_is_init():
    X = np.random.default_rng(0).normal(size=(10, 5))
    p, curve = autoencoder_train(X, 3, epochs=0, seed=11)
    ref = AutoencoderParams.init(5, 3, 11)
    assert len(curve) == 1
    assert np.array_equal(p.enc_W, ref.enc_W) and np.array_equal(p.dec_W, ref.dec_W)
    s = np.sqrt(6 / 8)
    assert np.all(np.abs(ref.enc_W) <= s)


def test_autoencoder_recovers_rank_two():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(200, 2)) @ rng.normal(size=(2, 6))
    p, curve = autoencoder_train(X, 2, epochs=500, lr=0.2, seed=0)
    assert len(curve) == 501
    assert all(np.isfinite(curve))
    assert curve[-1] <= curve[0]
    assert curve[-1] < 0.05


def test_autoencoder_constant_column():
    X = np.ones((5, 3)) * [1.0, 2.0, 3.0]
    p, curve = autoencoder_train(X, 2, epochs=10, seed=0)
    assert curve[-1] == 0.0


def test_autoencoder_rejects_nonfinite():
    with pytest.raises(ValueError):
        autoencoder_train(np.array([[1.0, np.inf]]), 1)


def test_autoencoder_deterministic():
    X = np.random.default_rng(2).normal(size=(20, 4))
    a, ca = autoencoder_train(X, 2, epochs=20, seed=5)
    b, cb = autoencoder_train(X, 2, epochs=20, seed=5)
    assert ca == cb and np.array_equal(a.enc_W, b.enc_W)


def test_autoencoder_gradients_match_differences():
    rng = np.random.default_rng(3)
    p = AutoencoderParams.init(4, 3, 0)
    p.enc_b[:] = 0.2
    Xs = rng.normal(size=(6, 4))
    _, g = autoencoder_loss_and_grads(p, Xs)
    h = 1e-6
    for name in ("enc_W", "enc_b", "dec_W", "dec_b"):
        arr = getattr(p, name)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = autoencoder_loss_and_grads(p, Xs)[0]
            arr[idx] = old - h
            down = autoencoder_loss_and_grads(p, Xs)[0]
            arr[idx] = old
            num = (up - down) / (2 * h)
            assert abs(num - g[name][idx]) <= 1e-4 * max(1e-6, abs(num), abs(g[name][idx]))


def test_encode_numeric_hand_values():
    zero = AutoencoderParams(np.zeros((3, 2)), np.zeros(2), np.zeros((2, 3)), np.zeros(3))
    assert not encode_numeric(zero, [1.0, -2.0, 3.0]).any()
    one = AutoencoderParams(np.array([[2.0]]), np.array([1.0]), np.array([[1.0]]), np.zeros(1))
    assert encode_numeric(one, [3.0]).tolist() == [7.0]
    with pytest.raises(ValueError):
        encode_numeric(one, [1.0, 2.0])


def test_refine_hand_values():
    assert not refine(RefinerParams.zeros(4, 3, 5), np.ones(4)).any()
    one = RefinerParams(np.ones((1, 1)), np.zeros(1), np.ones((1, 1)), np.zeros(1))
    assert refine(one, [-5.0]).tolist() == [0.0]
    assert refine(RefinerParams.init(7, 4, 9, seed=1), np.ones(7)).shape == (9,)
    with pytest.raises(ValueError):
        refine(one, [1.0, 2.0])


def test_refine_gradients_match_differences():
    rng = np.random.default_rng(4)
    p = RefinerParams.init(5, 4, 3, seed=2)
    p.b1[:] = 0.1
    X = rng.normal(size=(7, 5))
    dout = rng.normal(size=(7, 3))
    dX, dW1, db1, dW2, db2 = refine_loss_grads(p, X, dout)
    loss = lambda: float((refine(p, X) * dout).sum())
    h = 1e-6
    for arr, grad in ((p.W1, dW1), (p.b1, db1), (p.W2, dW2), (p.b2, db2)):
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = loss()
            arr[idx] = old - h
            down = loss()
            arr[idx] = old
            num = (up - down) / (2 * h)
            assert abs(num - grad[idx]) <= 1e-4 * max(1e-6, abs(num), abs(grad[idx]))


def test_build_sequences_shapes_and_duplicates(assets):
    cohort = load_cohort_dir(assets / "three_students")
    twin = cohort.students[0]
    copy = StudentRecord("A01b", [replace(e, student_id="A01b") for e in twin.exams],
                         [replace(e, student_id="A01b") for e in twin.events], twin.label)
    dup = Cohort([twin, copy], cohort.periods, cohort.subjects)
    numeric, _ = numeric_tensor(dup)
    text = text_tensor(dup)
    ae, _ = autoencoder_train(numeric.reshape(-1, numeric.shape[2]), 4, epochs=5)
    tr, nr = RefinerParams.init(text.shape[2], 8, 6, 0), RefinerParams.init(4, 8, 5, 1)
    seqs = build_sequences(dup, numeric, text, ae, tr, nr)
    assert seqs[0].text_vecs.shape == (6, 6) and seqs[0].num_vecs.shape == (6, 5)
    assert np.array_equal(seqs[0].text_vecs, seqs[1].text_vecs)
    assert np.array_equal(seqs[0].num_vecs, seqs[1].num_vecs)


def test_precomputed_text_source(tmp_path, assets):
    cohort = load_cohort_dir(assets / "three_students")
    rng = np.random.default_rng(0)
    vecs = {(s.student_id, p): rng.normal(size=8) for s in cohort.students for p in range(1, 7)}
    text = text_tensor(cohort, "precomputed", precomputed=vecs)
    assert np.array_equal(text[1, 2], vecs[("A02", 3)])
    tr = RefinerParams.init(8, 4, 3, 0)
    rows = np.stack([vecs[("A02", p)] for p in range(1, 7)])
    assert np.array_equal(refine(tr, text[1]), refine(tr, rows))
