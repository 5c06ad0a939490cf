import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dmsw.embed import EmbeddingSequence
from dmsw.features import (FusedSequence, SlidingKernel, WindowConfig, build_index_map, cosine_sim,
                           extract_features, feature_length, first_order_features, fuse,
                           second_order_features, write_features)
from oracles import sliding_features


def _seq(V, sid="s"):
    return FusedSequence(sid, np.asarray(V, dtype=float))


def test_fuse():
    rng = np.random.default_rng(0)
    t, n = rng.normal(size=(6, 32)), rng.normal(size=(6, 32))
    V = fuse(EmbeddingSequence("x", t, n)).V
    assert V.shape == (6, 64)
    assert np.array_equal(V[0], np.concatenate([t[0], n[0]]))
    Z = fuse(EmbeddingSequence("x", np.zeros((6, 3)), n)).V
    assert not Z[:, :3].any() and np.array_equal(Z[:, 3:], n)
    with pytest.raises(ValueError):
        EmbeddingSequence("x", t[:5], n)


def test_cosine_examples():
    assert cosine_sim([1, 2], [1, 2]) == pytest.approx(1.0)
    assert cosine_sim([1, 0], [0, 1]) == 0.0
    assert cosine_sim([1, 2, 3], [4, 5, 6]) == pytest.approx(32 / np.sqrt(14 * 77), abs=1e-12)
    assert cosine_sim([1, 2, 3], [4, 5, 6]) == pytest.approx(0.974632, abs=1e-6)
    assert cosine_sim([0, 0], [1, 1]) == 0.0
    assert cosine_sim([0, 0], [1, 1], zero_value=1.0) == 1.0
    with pytest.raises(ValueError):
        cosine_sim([1, 2], [1, 2, 3])


def test_first_order_examples():
    assert np.all(first_order_features(np.ones((6, 3)), 2) == 1.0)
    assert len(first_order_features(np.random.default_rng(1).normal(size=(6, 4)), 5)) == 1
    alt = np.array([[1, 0], [0, 1]] * 3, dtype=float)
    assert not first_order_features(alt, 1).any()
    with pytest.raises(ValueError):
        first_order_features(alt, 6)
    with pytest.raises(ValueError):
        first_order_features(alt, 0)


def test_second_order_examples():
    D = [0.8, -0.2, 0.5]
    assert second_order_features(D, "cosine").tolist() == [-1.0, -1.0]
    assert second_order_features(D, "delta") == pytest.approx([-1.0, 0.7], abs=1e-12)
    assert second_order_features([0.3, 0.4, 0.9], "cosine").tolist() == [1.0, 1.0]
    assert not second_order_features([0.4] * 4, "delta").any()
    assert second_order_features([0.0, 0.5], "cosine").tolist() == [0.0]
    assert len(second_order_features([0.5], "cosine")) == 0


def test_default_layout_is_25():
    rng = np.random.default_rng(2)
    feats = extract_features([_seq(rng.normal(size=(6, 8)))], WindowConfig())
    imap = feats[0].index_map
    assert len(feats[0].F) == 25 == len(imap)
    groups = []
    for ix in imap:
        if not groups or groups[-1][0] != (ix.a, ix.order):
            groups.append([(ix.a, ix.order), 0])
        groups[-1][1] += 1
    assert [g[1] for g in groups] == [5, 4, 3, 2, 1, 4, 3, 2, 1]
    assert [g[0] for g in groups] == [(a, 1) for a in range(1, 6)] + [(a, 2) for a in range(1, 5)]
    assert len(set(imap)) == 25


def test_pre_fusion_doubles():
    rng = np.random.default_rng(3)
    seq = EmbeddingSequence("x", rng.normal(size=(6, 5)), rng.normal(size=(6, 4)))
    pre = extract_features([seq], WindowConfig(placement="pre_fusion"))[0]
    assert len(pre.F) == 50
    assert np.array_equal(pre.F[:25], extract_features([_seq(seq.text_vecs)])[0].F)
    assert np.array_equal(pre.F[25:], extract_features([_seq(seq.num_vecs)])[0].F)
    assert {ix.modality for ix in pre.index_map[:25]} == {"text"}


@pytest.mark.parametrize("P", range(2, 13))
def test_length_formula_exhaustive(P):
    from itertools import combinations
    sizes = range(1, P)
    for r in range(1, P):
        for A in combinations(sizes, r):
            cfg = WindowConfig(window_sizes=A)
            expected = sum(P - a for a in A) + sum(P - a - 1 for a in A if P - a >= 2)
            assert feature_length(P, A) == expected == len(build_index_map(P, cfg))


def test_oracle_bitwise():
    rng = np.random.default_rng(20240)
    for trial in range(100):
        P = (4, 6, 8)[trial % 3]
        d = (3, 16)[trial // 3 % 2]
        V = rng.normal(size=(P, d))
        mode = ("cosine", "delta")[trial % 2]
        got = extract_features([_seq(V)], WindowConfig(second_order_mode=mode))[0].F
        assert got.tolist() == sliding_features(V.tolist(), range(1, P), mode)


def test_kernel_batch_matches_single():
    rng = np.random.default_rng(5)
    V = rng.normal(size=(7, 6, 5))
    F = np.stack([f.F for f in extract_features([_seq(v) for v in V])])
    single = extract_features([_seq(V[3])])[0].F
    assert np.array_equal(F[3], single)


def test_zero_rows_use_convention():
    V = np.ones((4, 2))
    V[1] = 0
    F = extract_features([_seq(V)], WindowConfig(window_sizes=(1,)))[0].F
    assert F[:3].tolist() == [0.0, 0.0, 1.0]
    F1 = extract_features([_seq(V)], WindowConfig(window_sizes=(1,), zero_cosine=1.0))[0].F
    assert F1[:3].tolist() == [1.0, 1.0, 1.0]


def test_window_config_errors():
    with pytest.raises(ValueError):
        WindowConfig(window_sizes=())
    with pytest.raises(ValueError):
        WindowConfig(second_order_mode="ratio")
    with pytest.raises(ValueError):
        WindowConfig(window_sizes=(6,)).sizes(6)


vectors = arrays(np.float64, st.tuples(st.integers(3, 8), st.integers(1, 6)),
                 elements=st.floats(-10, 10, allow_nan=False).filter(lambda x: x == 0 or abs(x) > 1e-3))


@settings(max_examples=60, deadline=None)
@given(vectors, st.floats(0.1, 100))
def test_scale_invariance(V, c):
    cfg = WindowConfig(second_order_mode="cosine")
    a = extract_features([_seq(V)], cfg)[0].F
    b = extract_features([_seq(V * c)], cfg)[0].F
    np.testing.assert_allclose(a[:feature_length(len(V), range(1, len(V))) - sum(range(len(V) - 1))],
                               b[:len(a) - sum(range(len(V) - 1))], atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(vectors)
def test_time_reversal(V):
    P = len(V)
    for a in range(1, P):
        np.testing.assert_allclose(first_order_features(V[::-1], a), first_order_features(V, a)[::-1],
                                   atol=1e-12)


def test_kernel_backward_matches_differences():
    rng = np.random.default_rng(6)
    for mode in ("cosine", "delta"):
        for placement in ("post_fusion", "pre_fusion"):
            cfg = WindowConfig(second_order_mode=mode, placement=placement)
            k = SlidingKernel(6, cfg, text_dim=3, fused_dim=7)
            V = rng.normal(size=(3, 6, 7))
            W = rng.normal(size=(3, len(k)))
            W[:, ~np.array([ix.order == 1 or mode == "delta" for ix in k.index_map])] = 0
            F, cache = k.forward(V)
            dV = k.backward(W, cache)
            h = 1e-6
            for idx in np.ndindex(V.shape):
                old = V[idx]
                V[idx] = old + h
                up = (k.forward(V)[0] * W).sum()
                V[idx] = old - h
                down = (k.forward(V)[0] * W).sum()
                V[idx] = old
                num = (up - down) / (2 * h)
                assert abs(num - dV[idx]) <= 1e-6 + 1e-5 * abs(num)


def test_write_features(tmp_path):
    imap = build_index_map(3, WindowConfig())
    F = np.array([[0.5, 0.25, 1.0, 1.0], [0.1, 0.2, 0.3, -1.0]])
    path = write_features(tmp_path / "features.csv", ["a", "b"], [1, None], F, imap)
    lines = path.read_text().splitlines()
    assert lines[0] == "student_id,label,f_1_1_1,f_1_1_2,f_2_1_1,f_1_2_1"
    assert lines[1] == "a,1,0.5,0.25,1.0,1.0"
    assert lines[2].startswith("b,,0.1,")
