import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dmsw.config import RunConfig
from dmsw.embed import AutoencoderParams
from dmsw.features import WindowConfig, build_index_map
from dmsw.pipeline import gradcheck_problem, run_gradcheck
from dmsw.train import (Batch, LossBreakdown, NumericError, TrainConfig, bce_loss, change_magnitudes, loss_and_grads,
                        combine_losses, distinction_loss, gradient_check, init_model, percentile_threshold,
                        percentile_thresholds, predict, predict_batch, total_loss, train_model)


def test_bce_examples():
    assert bce_loss([1 - 1e-7], [1]) == pytest.approx(1e-7, rel=1e-3)
    assert bce_loss([0.5], [1]) == pytest.approx(0.693147, abs=1e-6)
    assert bce_loss([0.9, 0.1], [1, 0]) == pytest.approx(0.105361, abs=1e-6)
    assert math.isfinite(bce_loss([0.0, 1.0], [1, 0]))
    with pytest.raises(ValueError):
        bce_loss([], [])


def test_change_magnitudes():
    imap = build_index_map(3, WindowConfig())
    m = change_magnitudes([[1.0, -1.0, 0.0, 1.0]], imap, "cosine")
    assert m.tolist() == [[0.0, 1.0, 0.5, 0.0]]
    dmap = build_index_map(3, WindowConfig(second_order_mode="delta"))
    m = change_magnitudes([[1.0, -1.0, 0.0, -1.2]], dmap, "delta")
    assert m[0, 3] == pytest.approx(0.6)
    assert change_magnitudes([[0, 0, 0, 3.0]], dmap, "delta")[0, 3] == 1.0


def test_percentile_examples():
    assert percentile_threshold(np.arange(1, 101), 0.85) == 85
    assert percentile_threshold([0.3], 0.85) == 0.3
    assert percentile_threshold([0.2] * 7) == 0.2
    with pytest.raises(ValueError):
        percentile_threshold([])
    cols = percentile_thresholds(np.column_stack([np.arange(1, 101), np.arange(100, 0, -1)]))
    assert cols.tolist() == [85, 85]


def test_distinction_examples():
    m = np.array([[0.9], [0.1]])
    assert distinction_loss(m, [0.5], [1, 0], "intent") == pytest.approx(-0.2)
    assert distinction_loss(m, [0.5], [1, 0], "literal") == pytest.approx(0.2)
    assert distinction_loss(m, [0.95], [1, 0]) == 0.0
    assert distinction_loss(m, [0.0], [0, 0]) >= 0
    with pytest.raises(ValueError):
        distinction_loss(m, [0.5, 0.5], [1, 0])


def test_combine_losses():
    assert combine_losses(0.6, -0.2, 0.5) == pytest.approx(0.5)
    assert combine_losses(0.6, 123.0, 0.0) == 0.6


unit = st.floats(0, 1)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 9), st.integers(1, 5)), elements=unit), st.data())
def test_distinction_permutation_and_monotonicity(m, data):
    N, M = m.shape
    y = np.array(data.draw(st.lists(st.integers(0, 1), min_size=N, max_size=N)))
    delta = percentile_thresholds(m)
    base = distinction_loss(m, delta, y)
    perm = np.random.default_rng(0).permutation(N)
    assert distinction_loss(m[perm], delta, y[perm]) == pytest.approx(base, abs=1e-12)
    cperm = np.random.default_rng(1).permutation(M)
    assert distinction_loss(m[:, cperm], delta[cperm], y) == pytest.approx(base, abs=1e-12)
    i, j = data.draw(st.integers(0, N - 1)), data.draw(st.integers(0, M - 1))
    if delta[j] < 0.9:
        bumped = m.copy()
        bumped[i, j] = max(m[i, j], delta[j]) + 0.05
        after = distinction_loss(bumped, delta, y)
        assert (after < base) if y[i] == 1 else (after > base)


def _toy(n=24, seed=0, P=6):
    """Students whose text flips between two orthogonal vectors are positives; the rest stay constant."""
    rng = np.random.default_rng(seed)
    text = np.zeros((n, P, 4))
    labels = np.zeros(n, dtype=int)
    for s in range(n):
        if s % 3 == 0:
            labels[s] = 1
            text[s, :, 0] = [1, 0, 1, 0, 1, 0][:P]
            text[s, :, 1] = 1 - text[s, :, 0]
        else:
            text[s, :, 0] = 1
        text[s] += 0.05 * rng.normal(size=(P, 4))
    return Batch(text, rng.normal(size=(n, P, 3)), labels)


def _model(cfg=TrainConfig(), window=WindowConfig(), seed=0, P=6):
    ae = AutoencoderParams.init(3, 2, seed)
    return init_model(ae, 4, P, window, cfg, refiner_hidden=6, refined_dim=4, seed=seed)


def test_epochs_zero_returns_initialization():
    m0 = _model(TrainConfig(epochs=0))
    m1, hist = train_model(m0, _toy())
    assert hist.losses == []
    for k, v in m0.trainable().items():
        assert np.array_equal(v, m1.trainable()[k])


def test_train_separable_toy():
    batch = _toy()
    model, hist = train_model(_model(TrainConfig(epochs=200, lr=0.05)), batch)
    _, labels = predict_batch(model, batch)
    assert (labels == batch.labels).all()


def test_train_deterministic_and_identity():
    batch = _toy()
    cfg = TrainConfig(epochs=30, lr=0.05, lam=0.5)
    _, h1 = train_model(_model(cfg), batch)
    _, h2 = train_model(_model(cfg), batch)
    assert h1.as_dict() == h2.as_dict()
    for x in h1.losses:
        assert x.l_total == x.l_bce + 0.5 * x.l_distinction


def test_lambda_zero_is_pure_bce():
    batch = _toy()
    a, ha = train_model(_model(TrainConfig(epochs=40, lr=0.05, lam=0.0)), batch)
    b, hb = train_model(_model(TrainConfig(epochs=40, lr=0.05, use_distinction=False)), batch)
    assert [x.l_bce for x in ha.losses] == [x.l_bce for x in hb.losses]
    assert [x.l_total for x in ha.losses] == [x.l_bce for x in ha.losses]
    for k, v in a.trainable().items():
        assert np.array_equal(v, b.trainable()[k])


def test_train_rejects_single_class():
    batch = _toy()
    batch.labels[:] = 0
    with pytest.raises(ValueError):
        train_model(_model(), batch)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_aborts_on_nonfinite():
    batch = _toy()
    batch.text[0, 0, 0] = np.inf
    with pytest.raises(NumericError, match="epoch 0"):
        train_model(_model(TrainConfig(epochs=5)), batch)


def test_predict_zero_weights_tie():
    model = _model()
    model.clf_W1[:] = 0
    model.clf_W2[:] = 0
    p, labels = predict(model, np.ones((2, model.n_features)))
    assert p.tolist() == [0.5, 0.5] and labels.tolist() == [1, 1]
    with pytest.raises(ValueError):
        predict(model, np.ones((1, 3)))


def test_predict_hand_forward_pass():
    model = _model(TrainConfig(clf_hidden=2))
    M = model.n_features
    model.feat_mean = np.full(M, 0.5)
    model.feat_scale = np.full(M, 2.0)
    model.clf_W1 = np.zeros((M, 2))
    model.clf_W1[0] = [1.0, -1.0]
    model.clf_W1[1] = [0.5, 2.0]
    model.clf_b1 = np.array([0.1, -0.2])
    model.clf_W2 = np.array([[1.5], [-0.5]])
    model.clf_b2 = np.array([0.25])
    F = np.zeros((1, M))
    F[0, :2] = [2.5, 1.5]
    # standardized: (1.0, 0.5); hidden pre: (1.0 + 0.25 + 0.1, -1.0 + 1.0 - 0.2) = (1.35, -0.2)
    z = 1.5 * 1.35 + 0.25
    p, _ = predict(model, F)
    assert p[0] == pytest.approx(1 / (1 + math.exp(-z)), abs=1e-12)


def test_probability_monotone_in_logit_bias():
    model = _model()
    F = np.random.default_rng(0).normal(size=(4, model.n_features))
    ps = []
    for b in (-2.0, -1.0, 0.0, 1.0, 2.0):
        model.clf_b2 = np.array([b])
        ps.append(predict(model, F)[0])
    assert all((ps[k] < ps[k + 1]).all() for k in range(4))


def test_total_loss_breakdown():
    batch = _toy()
    model = _model(TrainConfig(lam=0.5))
    lb = total_loss(model, batch)
    assert isinstance(lb, LossBreakdown)
    assert lb.l_total == lb.l_bce + 0.5 * lb.l_distinction
    assert lb.delta_thresholds.shape == (model.n_features,)
    lb0 = total_loss(_model(TrainConfig(lam=0.0)), batch)
    assert lb0.l_total == lb0.l_bce


@pytest.mark.parametrize("lam", [0.0, 0.5])
@pytest.mark.parametrize("mode", ["cosine", "delta"])
@pytest.mark.parametrize("placement", ["post_fusion", "pre_fusion"])
def test_gradient_check_variants(lam, mode, placement):
    cfg = RunConfig().replace(second_order_mode=mode, placement=placement, **{"lambda": lam})
    res = run_gradcheck(cfg, 5)
    assert res["checked"] > 100
    assert res["max_rel_error"] <= 1e-4


def test_gradient_check_literal_and_embedding_smote():
    cfg = RunConfig().replace(distinction_sign="literal", smote_space="embeddings")
    assert run_gradcheck(cfg, 2)["max_rel_error"] <= 1e-4


def test_gradient_check_saturated_point():
    # every student labeled 1 and predicted 1 with the probability clamped
    model, batch, _ = gradcheck_problem(RunConfig().replace(**{"lambda": 0.0}), 1)
    batch.labels[:] = 1
    model.clf_b2[:] = 60.0
    _, grads, _ = loss_and_grads(model, batch)
    assert all(not g.any() for g in grads.values())
    res = gradient_check(model, batch)
    assert res["max_rel_error"] == 0.0 and res["checked"] > 0
