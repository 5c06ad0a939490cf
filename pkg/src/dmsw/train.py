"""Classifier, composite loss and full-batch training of the joint model.

The joint model maps raw per-period inputs to a dropout probability:

    text vec  -> text refiner ----+
                                  +-> fused V -> sliding features F -> MLP -> p
    numeric   -> encoder -> numeric refiner

Gradients of the total loss flow through the cosine features back into the
refiners and (unless frozen) the encoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .embed import AutoencoderParams, RefinerParams
from .features import FeatureIndex, SlidingKernel, WindowConfig
from .nn import dense, dense_backward, glorot, mlp2_backward, mlp2_forward, relu, sigmoid
from .preprocess import SmotePlan

EPS = 1e-7
SIGN_MODES = ("intent", "literal")


class NumericError(FloatingPointError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.5
    lr: float = 0.01
    epochs: int = 200
    percentile_q: float = 0.85
    distinction_sign: str = "intent"
    use_distinction: bool = True
    clf_hidden: int = 16
    decision_threshold: float = 0.5
    freeze_autoencoder: bool = False
    standardize_features: bool = True
    weight_decay: float = 0.0
    eps: float = EPS

    def __post_init__(self):
        if self.distinction_sign not in SIGN_MODES:
            raise ValueError(f"distinction_sign must be one of {SIGN_MODES}")
        if not 0 < self.percentile_q <= 1:
            raise ValueError(f"percentile_q must lie in (0, 1], got {self.percentile_q}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


@dataclass
class LossBreakdown:
    l_bce: float
    l_distinction: float
    l_total: float
    delta_thresholds: np.ndarray
    lam: float = 0.5


# -- losses --------------------------------------------------------------------


def bce_loss(p, y, eps: float = EPS) -> float:
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=float)
    if p.size == 0:
        raise ValueError("empty batch")
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {y.shape}")
    pc = np.clip(p, eps, 1 - eps)
    return float(-np.mean(y * np.log(pc) + (1 - y) * np.log(1 - pc)))


def cosine_valued(index_map, mode: str) -> np.ndarray:
    """Mask of coordinates holding cosine-type values (as opposed to deltas)."""
    return np.array([ix.order == 1 or (ix.order == 2 and mode == "cosine") for ix in index_map], dtype=bool)


def change_magnitudes(F, index_map, mode: str = "cosine") -> np.ndarray:
    """Map similarity-type features onto [0, 1] change magnitudes (0 = no change).

    Only behavior-change coordinates are returned; appended raw embedding
    coordinates are dropped.
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    change = np.array([ix.order in (1, 2) for ix in index_map], dtype=bool)
    cos = cosine_valued(index_map, mode)[change]
    f = F[:, change]
    return np.where(cos, (1.0 - f) / 2.0, np.minimum(np.abs(f) / 2.0, 1.0))


def _dm_df(F_change, cos_mask):
    return np.where(cos_mask, -0.5, np.where(np.abs(F_change) < 2.0, 0.5 * np.sign(F_change), 0.0))


def _nearest_rank(K: int, q: float) -> int:
    # round before ceil: 0.85 * 100 is 85.00000000000001 in binary floating point
    return min(max(math.ceil(round(q * K, 9)), 1), K)


def percentile_threshold(column, q: float = 0.85) -> float:
    col = np.sort(np.asarray(column, dtype=float).ravel())
    if col.size == 0:
        raise ValueError("empty column")
    return float(col[_nearest_rank(col.size, q) - 1])


def percentile_thresholds(m, q: float = 0.85) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape[0] == 0:
        raise ValueError("empty batch")
    return np.sort(m, axis=0)[_nearest_rank(m.shape[0], q) - 1]


def _row_signs(y, sign_mode):
    y = np.asarray(y, dtype=float)
    if sign_mode == "intent":
        return (1.0 - y) - y
    if sign_mode == "literal":
        return y - (1.0 - y)
    raise ValueError(f"unknown sign mode {sign_mode!r}")


def distinction_loss(m, delta, y, sign_mode: str = "intent") -> float:
    """Mean over students and features of the signed supra-threshold change.

    In intent mode, change above the threshold lowers the loss for at-risk
    students and raises it for the others; literal mode flips the sign.
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    delta = np.asarray(delta, dtype=float)
    y = np.asarray(y, dtype=float)
    if m.shape[1] != delta.shape[0] or m.shape[0] != y.shape[0]:
        raise ValueError(f"shape mismatch: m {m.shape}, delta {delta.shape}, y {y.shape}")
    if m.size == 0:
        return 0.0
    excess = np.maximum(0.0, m - delta)
    return float(np.sum(_row_signs(y, sign_mode)[:, None] * excess) / m.size)


# -- model ---------------------------------------------------------------------


@dataclass
class ModelParams:
    ae: AutoencoderParams
    text_refiner: RefinerParams
    num_refiner: RefinerParams
    clf_W1: np.ndarray
    clf_b1: np.ndarray
    clf_W2: np.ndarray
    clf_b2: np.ndarray
    window: WindowConfig
    periods: int
    cfg: TrainConfig = field(default_factory=TrainConfig)
    feat_mean: np.ndarray | None = None
    feat_scale: np.ndarray | None = None

    def __post_init__(self):
        self.kernel = SlidingKernel(self.periods, self.window, self.text_refiner.out_dim,
                                    self.text_refiner.out_dim + self.num_refiner.out_dim)
        if self.clf_W1.shape[0] != len(self.kernel):
            raise ValueError(f"classifier expects {self.clf_W1.shape[0]} inputs, features have {len(self.kernel)}")
        M = len(self.kernel)
        if self.feat_mean is None:
            self.feat_mean = np.zeros(M)
        if self.feat_scale is None:
            self.feat_scale = np.ones(M)

    @property
    def index_map(self) -> list[FeatureIndex]:
        return self.kernel.index_map

    @property
    def n_features(self) -> int:
        return len(self.kernel)

    def trainable(self) -> dict[str, np.ndarray]:
        out = {}
        if not self.cfg.freeze_autoencoder:
            out["enc_W"] = self.ae.enc_W
            out["enc_b"] = self.ae.enc_b
        for prefix, r in (("txt", self.text_refiner), ("num", self.num_refiner)):
            for k in ("W1", "b1", "W2", "b2"):
                out[f"{prefix}_{k}"] = getattr(r, k)
        for k in ("clf_W1", "clf_b1", "clf_W2", "clf_b2"):
            out[k] = getattr(self, k)
        return out

    def set_param(self, name: str, value: np.ndarray) -> None:
        if name.startswith("enc_"):
            setattr(self.ae, name, value)
        elif name.startswith("txt_"):
            setattr(self.text_refiner, name[4:], value)
        elif name.startswith("num_"):
            setattr(self.num_refiner, name[4:], value)
        else:
            setattr(self, name, value)

    def copy(self) -> "ModelParams":
        def cp(obj):
            return replace(obj, **{k: np.array(v, copy=True) for k, v in vars(obj).items() if isinstance(v, np.ndarray)})
        return ModelParams(cp(self.ae), cp(self.text_refiner), cp(self.num_refiner),
                           self.clf_W1.copy(), self.clf_b1.copy(), self.clf_W2.copy(), self.clf_b2.copy(),
                           self.window, self.periods, self.cfg,
                           self.feat_mean.copy(), self.feat_scale.copy())


def init_model(ae: AutoencoderParams, text_dim: int, periods: int, window: WindowConfig,
               cfg: TrainConfig = TrainConfig(), refiner_hidden: int = 32, refined_dim: int = 32,
               seed: int = 0) -> ModelParams:
    """Seeded initial parameters; the encoder is copied from the pretrained autoencoder."""
    ae = replace(ae, enc_W=ae.enc_W.copy(), enc_b=ae.enc_b.copy(), dec_W=ae.dec_W.copy(), dec_b=ae.dec_b.copy())
    txt = RefinerParams.init(text_dim, refiner_hidden, refined_dim, seed=np.random.default_rng([seed, 1]).integers(2**31))
    num = RefinerParams.init(ae.latent_dim, refiner_hidden, refined_dim, seed=np.random.default_rng([seed, 2]).integers(2**31))
    probe = SlidingKernel(periods, window, refined_dim, 2 * refined_dim)
    M = len(probe)
    rng = np.random.default_rng([seed, 3])
    return ModelParams(ae, txt, num, glorot(rng, M, cfg.clf_hidden), np.zeros(cfg.clf_hidden),
                       glorot(rng, cfg.clf_hidden, 1), np.zeros(1), window, periods, cfg)


@dataclass
class Batch:
    """Raw model inputs for N students: text (N, P, d_t), numeric (N, P, d_n), labels (N,)."""

    text: np.ndarray
    numeric: np.ndarray
    labels: np.ndarray | None = None
    ids: list = field(default_factory=list)

    def __post_init__(self):
        self.text = np.asarray(self.text, dtype=float)
        self.numeric = np.asarray(self.numeric, dtype=float)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int)

    def __len__(self):
        return len(self.text)

    def take(self, idx) -> "Batch":
        idx = np.asarray(idx, dtype=int)
        return Batch(self.text[idx], self.numeric[idx],
                     None if self.labels is None else self.labels[idx],
                     [self.ids[i] for i in idx] if self.ids else [])


def embed_forward(model: ModelParams, batch: Batch):
    """Fused per-period vectors V (N, P, d) and the cache for backprop."""
    Xs = model.ae.standardize(batch.numeric)
    pre_e = dense(Xs, model.ae.enc_W, model.ae.enc_b)
    Z = relu(pre_e)
    Rn, cache_n = mlp2_forward(Z, model.num_refiner.W1, model.num_refiner.b1, model.num_refiner.W2, model.num_refiner.b2)
    Rt, cache_t = mlp2_forward(batch.text, model.text_refiner.W1, model.text_refiner.b1,
                               model.text_refiner.W2, model.text_refiner.b2)
    return np.concatenate([Rt, Rn], axis=-1), (Xs, pre_e, cache_n, cache_t)


def features_forward(model: ModelParams, batch: Batch):
    """Sliding-window features of the real students plus the cache for backprop."""
    V, ecache = embed_forward(model, batch)
    F, kcache = model.kernel.forward(V)
    return F, (ecache, kcache)


def extract_model_features(model: ModelParams, batch: Batch) -> np.ndarray:
    return features_forward(model, batch)[0]


def classifier_forward(model: ModelParams, F):
    Fs = (F - model.feat_mean) / model.feat_scale
    pre_h = dense(Fs, model.clf_W1, model.clf_b1)
    h = relu(pre_h)
    z = dense(h, model.clf_W2, model.clf_b2)[:, 0]
    return sigmoid(z), (Fs, pre_h, h, z)


def predict_proba(model: ModelParams, F) -> np.ndarray:
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if F.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {F.shape[1]}")
    return classifier_forward(model, F)[0]


def predict(model: ModelParams, F) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities and labels (1 iff probability >= the decision threshold)."""
    p = predict_proba(model, F)
    return p, (p >= model.cfg.decision_threshold).astype(int)


def predict_batch(model: ModelParams, batch: Batch):
    return predict(model, extract_model_features(model, batch))


@dataclass
class _Pass:
    loss: LossBreakdown
    F_all: np.ndarray
    y_all: np.ndarray
    p: np.ndarray
    m: np.ndarray
    caches: tuple
    n_real: int
    plan: SmotePlan | None = None


def _scatter_plan(d_real, d_syn, plan):
    u = plan.u.reshape((-1,) + (1,) * (d_syn.ndim - 1))
    np.add.at(d_real, plan.base, d_syn * (1.0 - u))
    np.add.at(d_real, plan.neighbor, d_syn * u)
    return d_real


def _forward_loss(model: ModelParams, batch: Batch, plan: SmotePlan | None, delta=None) -> _Pass:
    cfg = model.cfg
    y = batch.labels
    V, ecache = embed_forward(model, batch)
    n = len(V)
    has_plan = plan is not None and len(plan) > 0
    if has_plan and plan.space == "embeddings":
        V = np.concatenate([V, plan.apply(V)])
    F_all, kcache = model.kernel.forward(V)
    if has_plan and plan.space == "features":
        F_all = np.vstack([F_all, plan.apply(F_all)])
    y_all = np.concatenate([y, np.full(len(plan), plan.label)]) if has_plan else y
    p, ccache = classifier_forward(model, F_all)
    l_bce = bce_loss(p, y_all, cfg.eps)
    m = change_magnitudes(F_all, model.index_map, model.window.second_order_mode)
    if cfg.use_distinction:
        if delta is None:
            delta = percentile_thresholds(m, cfg.percentile_q)
        l_dist = distinction_loss(m, delta, y_all, cfg.distinction_sign)
        lam = cfg.lam
    else:
        delta = np.zeros(m.shape[1])
        l_dist, lam = 0.0, 0.0
    loss = LossBreakdown(l_bce, l_dist, l_bce + lam * l_dist, delta, lam)
    return _Pass(loss, F_all, y_all, p, m, (ecache, kcache, ccache), n, plan if has_plan else None)


def _backward(model: ModelParams, ps: _Pass) -> dict[str, np.ndarray]:
    cfg = model.cfg
    (Xs, pre_e, cache_n, cache_t), kcache, (Fs, pre_h, h, z) = ps.caches
    N = len(ps.y_all)
    p = ps.p
    unclamped = (p >= cfg.eps) & (p <= 1 - cfg.eps)
    dz = np.where(unclamped, (p - ps.y_all) / N, 0.0)[:, None]
    grads = {}
    dh, grads["clf_W2"], grads["clf_b2"] = dense_backward(h, model.clf_W2, dz)
    dpre_h = dh * (pre_h > 0)
    dFs, grads["clf_W1"], grads["clf_b1"] = dense_backward(Fs, model.clf_W1, dpre_h)
    dF = dFs / model.feat_scale

    if cfg.use_distinction and cfg.lam != 0:
        change = model.kernel.change_mask
        cos = cosine_valued(model.index_map, model.window.second_order_mode)[change]
        active = ps.m > ps.loss.delta_thresholds
        dm = _row_signs(ps.y_all, cfg.distinction_sign)[:, None] * active / ps.m.size
        dF[:, change] += cfg.lam * dm * _dm_df(ps.F_all[:, change], cos)

    n, plan = ps.n_real, ps.plan
    if plan is not None and plan.space == "features":
        dF = _scatter_plan(dF[:n].copy(), dF[n:], plan)
    dV = model.kernel.backward(dF, kcache)
    if plan is not None and plan.space == "embeddings":
        dV = _scatter_plan(dV[:n].copy(), dV[n:], plan)

    t = model.text_refiner.out_dim
    _, grads["txt_W1"], grads["txt_b1"], grads["txt_W2"], grads["txt_b2"] = mlp2_backward(
        dV[..., :t], cache_t, model.text_refiner.W1, model.text_refiner.W2)
    dZ, grads["num_W1"], grads["num_b1"], grads["num_W2"], grads["num_b2"] = mlp2_backward(
        dV[..., t:], cache_n, model.num_refiner.W1, model.num_refiner.W2)
    if not cfg.freeze_autoencoder:
        dpre_e = dZ * (pre_e > 0)
        _, grads["enc_W"], grads["enc_b"] = dense_backward(Xs, None, dpre_e)
    return grads


def loss_and_grads(model: ModelParams, batch: Batch, plan: SmotePlan | None = None, delta=None):
    ps = _forward_loss(model, batch, plan, delta)
    return ps.loss, _backward(model, ps), ps


def total_loss(model: ModelParams, batch: Batch, plan: SmotePlan | None = None, delta=None) -> LossBreakdown:
    """Loss breakdown on a batch (plus optional SMOTE rows); delta is recomputed unless given."""
    return _forward_loss(model, batch, plan, delta).loss


def combine_losses(l_bce: float, l_distinction: float, lam: float = 0.5) -> float:
    return l_bce + lam * l_distinction


@dataclass
class History:
    losses: list[LossBreakdown] = field(default_factory=list)
    val_bce: list[float] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "l_bce": [x.l_bce for x in self.losses],
            "l_distinction": [x.l_distinction for x in self.losses],
            "l_total": [x.l_total for x in self.losses],
            "val_bce": list(self.val_bce),
        }


def fit_feature_scaling(model: ModelParams, batch: Batch) -> None:
    """Freeze per-feature centring/scaling constants from the initial features."""
    if not model.cfg.standardize_features or len(batch) == 0:
        return
    F = extract_model_features(model, batch)
    sd = F.std(axis=0)
    model.feat_mean = F.mean(axis=0)
    model.feat_scale = np.where(sd > 1e-8, sd, 1.0)


def train_model(model: ModelParams, train: Batch, val: Batch | None = None,
                plan: SmotePlan | None = None) -> tuple[ModelParams, History]:
    """Full-batch gradient descent on the total loss; returns a trained copy and the loss history.

    The distinction threshold is recomputed from the current batch at every
    epoch and held constant inside that epoch's gradient. Weight decay, when
    set, shrinks weight matrices at each step without entering the loss.
    """
    labels = train.labels
    if len(train) == 0 or labels is None or len(set(labels.tolist())) < 2:
        raise ValueError("training set must be non-empty with both classes present")
    model = model.copy()
    cfg = model.cfg
    hist = History()
    for epoch in range(cfg.epochs):
        loss, grads, _ = loss_and_grads(model, train, plan)
        if not math.isfinite(loss.l_total):
            raise NumericError(f"non-finite loss at epoch {epoch}")
        hist.losses.append(loss)
        if val is not None and len(val):
            p, _ = predict_batch(model, val)
            hist.val_bce.append(bce_loss(p, val.labels, cfg.eps))
        params = model.trainable()
        for name, g in grads.items():
            w = params[name]
            if cfg.weight_decay and w.ndim == 2:
                # decoupled decay on weight matrices; the logged loss stays penalty-free
                g = g + cfg.weight_decay * w
            model.set_param(name, w - cfg.lr * g)
    return model, hist


# -- gradient verification -----------------------------------------------------


def _signature(model: ModelParams, ps: _Pass):
    (Xs, pre_e, cache_n, cache_t), kcache, (Fs, pre_h, h, z) = ps.caches
    sig = [pre_e > 0, cache_n[1] > 0, cache_t[1] > 0, pre_h > 0,
           (ps.p >= model.cfg.eps) & (ps.p <= 1 - model.cfg.eps)]
    if model.cfg.use_distinction and model.cfg.lam != 0:
        sig.append(ps.m > ps.loss.delta_thresholds)
    sig.extend(model.kernel.kink_signature(kcache))
    if model.window.second_order_mode == "delta":
        change = model.kernel.change_mask
        cos = cosine_valued(model.index_map, "delta")[change]
        f = ps.F_all[:, change][:, ~cos]
        sig.extend([np.sign(f), np.abs(f) < 2.0])
    return sig


def _gap_midpoint_thresholds(m, delta):
    """Move each threshold halfway to the next larger value in its column.

    The set of entries strictly above the threshold is unchanged, so is the
    analytic gradient, but no entry sits exactly on the hinge any more.
    """
    out = np.array(delta, dtype=float, copy=True)
    for j in range(m.shape[1]):
        above = m[:, j][m[:, j] > delta[j]]
        out[j] = 0.5 * (delta[j] + above.min()) if above.size else delta[j] + 0.5
    return out


def gradient_check(model: ModelParams, batch: Batch, plan: SmotePlan | None = None,
                   step: float = 1e-5, floor: float = 1e-6) -> dict:
    """Compare analytic gradients of the total loss with central differences.

    Thresholds are held constant. A coordinate is skipped when the +/- step
    flips any piecewise branch relative to the base point (rectifier masks,
    hinge activity, probability clamps, second-order signs), i.e. when the
    point lies within one step of a kink along that coordinate. Relative
    error is |a - n| / max(|a|, |n|, floor).
    """
    ps0 = _forward_loss(model, batch, plan)
    delta = _gap_midpoint_thresholds(ps0.m, ps0.loss.delta_thresholds)
    _, grads, ps = loss_and_grads(model, batch, plan, delta)
    base_sig = _signature(model, ps)
    params = model.trainable()
    max_err, checked, skipped = 0.0, 0, 0
    worst = None
    for name, arr in params.items():
        g = grads[name]
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            vals = []
            ok = True
            for sgn in (1, -1):
                arr[idx] = orig + sgn * step
                ps2 = _forward_loss(model, batch, plan, delta)
                if any(not np.array_equal(a, b) for a, b in zip(base_sig, _signature(model, ps2))):
                    ok = False
                vals.append(ps2.loss.l_total)
            arr[idx] = orig
            if not ok:
                skipped += 1
                continue
            num = (vals[0] - vals[1]) / (2 * step)
            ana = float(g[idx])
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            checked += 1
            if err > max_err:
                max_err, worst = err, (name, idx, ana, num)
    return {"max_rel_error": max_err, "checked": checked, "skipped": skipped, "worst": worst}
