"""End-to-end wiring: cohort -> tensors -> pretrained encoder -> joint training -> predictions."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .analyze.baseline import baseline_logreg
from .analyze.metrics import MetricsReport, classification_metrics
from .analyze.ols import GroupedOls, grouped_ols_report
from .config import RunConfig
from .embed import AutoencoderParams, autoencoder_train, load_precomputed_embeddings, text_tensor
from .preprocess import (LabeledVectorSet, cohort_score_stats, numeric_tensor, smote_balance, smote_plan,
                         split_indices)
from .records import Cohort, DataError
from .train import (Batch, History, ModelParams, embed_forward, extract_model_features,
                    fit_feature_scaling, gradient_check, init_model, predict_batch, train_model)


def prepare_batch(cohort: Cohort, cfg: RunConfig) -> Batch:
    """Raw text and numeric tensors for every student of the cohort."""
    numeric, _ = numeric_tensor(cohort, cohort_score_stats(cohort, cfg.weights()))
    if cfg.text_source == "precomputed":
        if not cfg.embeddings_path:
            raise ValueError("text_source 'precomputed' needs embeddings_path")
        vecs = load_precomputed_embeddings(cfg.embeddings_path, cfg.text_dim, cohort)
        text = text_tensor(cohort, "precomputed", precomputed=vecs)
    else:
        text = text_tensor(cohort, "hash", cfg.text_config())
    labels = cohort.labels
    lab = None if any(l is None for l in labels) else np.asarray(labels, dtype=int)
    return Batch(text, numeric, lab, [s.student_id for s in cohort.students])


@dataclass
class FitResult:
    model: ModelParams
    history: History
    ae_curve: list


def fit_dmsw(train: Batch, cfg: RunConfig, seed: int | None = None, val: Batch | None = None,
             **train_overrides) -> FitResult:
    """Pretrain the autoencoder, initialise the joint model and train it on ``train``."""
    seed = cfg.seed if seed is None else seed
    P, dn = train.numeric.shape[1], train.numeric.shape[2]
    latent = min(cfg.latent_dim, dn)
    ae, curve = autoencoder_train(train.numeric.reshape(-1, dn), latent, cfg.ae_epochs, cfg.ae_lr,
                                  seed=int(np.random.default_rng([seed, 0]).integers(2**31)))
    tcfg = cfg.train_config(**train_overrides)
    window = cfg.window_config()
    model = init_model(ae, train.text.shape[2], P, window, tcfg, cfg.refiner_hidden, cfg.refined_dim, seed)
    fit_feature_scaling(model, train)
    plan = None
    if cfg.use_smote:
        if cfg.smote_space == "features":
            space = extract_model_features(model, train)
        else:
            space, _ = embed_forward(model, train)
        plan = dataclasses.replace(smote_plan(space, train.labels, cfg.smote_k, seed), space=cfg.smote_space)
    trained, hist = train_model(model, train, val, plan)
    return FitResult(trained, hist, curve)


@dataclass
class Evaluation:
    train_idx: np.ndarray
    test_idx: np.ndarray
    dmsw: MetricsReport
    dmsw_no_distinction: MetricsReport
    lr_num: MetricsReport
    lr_bi: MetricsReport
    ols: GroupedOls
    fit: FitResult

    def as_dict(self) -> dict:
        hist = self.fit.history.as_dict()
        return {
            "split": {"train": len(self.train_idx), "test": len(self.test_idx),
                      "test_indices": self.test_idx.tolist()},
            "metrics": {
                "dmsw": self.dmsw.as_dict(),
                "dmsw_lambda0": self.dmsw_no_distinction.as_dict(),
                "logreg_num": self.lr_num.as_dict(),
                "logreg_bi": self.lr_bi.as_dict(),
            },
            "training": {key: (vals[-1] if vals else None) for key, vals in hist.items()},
            "ols": self.ols.as_dict(),
        }


def numeric_rows(batch: Batch) -> np.ndarray:
    """Numeric period vectors of each student laid end to end."""
    return batch.numeric.reshape(len(batch), -1)


def _logreg(rows, labels, tr, te, cfg: RunConfig) -> MetricsReport:
    data = LabeledVectorSet(rows, labels)
    train = data.take(tr)
    if cfg.use_smote:
        train = smote_balance(train, cfg.smote_k, cfg.seed)
    return baseline_logreg(train, data.take(te), cfg.logreg_l2, cfg.logreg_lr, cfg.logreg_epochs,
                           cfg.decision_threshold)


def evaluate(cohort: Cohort, cfg: RunConfig) -> Evaluation:
    """DMSW at the configured lambda and at lambda 0, both logistic baselines and OLS, on one split."""
    batch = prepare_batch(cohort, cfg)
    if batch.labels is None:
        raise DataError("evaluation needs a fully labeled cohort")
    tr, te = split_indices(batch.labels, cfg.test_fraction, cfg.seed)
    train, test = batch.take(tr), batch.take(te)
    fit = fit_dmsw(train, cfg)
    base = fit_dmsw(train, cfg, lam=0.0)
    F = extract_model_features(fit.model, batch)
    return Evaluation(
        tr, te,
        classification_metrics(predict_batch(fit.model, test)[1], test.labels),
        classification_metrics(predict_batch(base.model, test)[1], test.labels),
        _logreg(numeric_rows(batch), batch.labels, tr, te, cfg),
        _logreg(F, batch.labels, tr, te, cfg),
        grouped_ols_report(F, fit.model.index_map, batch.labels),
        fit,
    )


def gradcheck_problem(cfg: RunConfig, seed: int, n: int = 8, text_dim: int = 6, numeric_dim: int = 5):
    """A small random model, batch and SMOTE plan built from the window and loss settings of ``cfg``."""
    rng = np.random.default_rng([seed, 7])
    P = cfg.periods
    ae = AutoencoderParams.init(numeric_dim, 4, seed)
    # keep the encoder rectifiers mostly active so few coordinates sit on a kink
    ae.enc_b[:] = 0.1
    model = init_model(ae, text_dim, P, cfg.window_config(), cfg.train_config(clf_hidden=4),
                       refiner_hidden=5, refined_dim=4, seed=seed)
    labels = np.zeros(n, dtype=int)
    labels[: max(2, n // 3)] = 1
    batch = Batch(rng.normal(size=(n, P, text_dim)), rng.normal(size=(n, P, numeric_dim)), labels)
    fit_feature_scaling(model, batch)
    plan = None
    if cfg.use_smote:
        space = extract_model_features(model, batch) if cfg.smote_space == "features" else embed_forward(model, batch)[0]
        plan = dataclasses.replace(smote_plan(space, labels, min(cfg.smote_k, 2), seed), space=cfg.smote_space)
    return model, batch, plan


def run_gradcheck(cfg: RunConfig, seed: int) -> dict:
    model, batch, plan = gradcheck_problem(cfg, seed)
    return gradient_check(model, batch, plan)
