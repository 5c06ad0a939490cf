"""Run configuration: one flat set of keys shared by the config file and the CLI flags."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .embed import TextEmbedderConfig
from .features import WindowConfig
from .preprocess import CompositeWeights
from .records import DEFAULT_SUBJECTS
from .train import TrainConfig

CONFIG_ENV = "DMSW_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data
    data_dir: str | None = None
    out_dir: str = "runs"
    model_path: str | None = None
    periods: int = 6
    subjects: list = field(default_factory=lambda: list(DEFAULT_SUBJECTS))
    # composite value
    omega1: float = 0.5
    omega2: float = 0.5
    # text modality
    text_source: str = "hash"
    embeddings_path: str | None = None
    text_dim: int = 64
    hash_seed: int = 0
    # numeric modality
    latent_dim: int = 16
    ae_epochs: int = 300
    ae_lr: float = 0.01
    refiner_hidden: int = 32
    refined_dim: int = 32
    # sliding windows
    window_sizes: list | None = None
    second_order_mode: str = "cosine"
    placement: str = "post_fusion"
    include_raw: bool = False
    zero_cosine: float = 0.0
    # loss and training
    lam: float = 0.5
    percentile_q: float = 0.85
    distinction_sign: str = "intent"
    clf_hidden: int = 16
    lr: float = 0.2
    epochs: int = 400
    freeze_autoencoder: bool = False
    standardize_features: bool = True
    weight_decay: float = 0.0
    decision_threshold: float = 0.5
    # balancing and splitting
    use_smote: bool = True
    smote_space: str = "features"
    smote_k: int = 5
    test_fraction: float = 0.2
    seed: int = 0
    # baselines
    logreg_l2: float = 0.01
    logreg_lr: float = 0.1
    logreg_epochs: int = 500
    # ablation grid
    ablation_sizes: list = field(default_factory=lambda: [1, 3, 5])
    ablation_placements: list = field(default_factory=lambda: ["post_fusion", "pre_fusion"])
    ablation_lambdas: list = field(default_factory=lambda: [0.0, 0.5])
    # cohort statistics rules
    rule_spike: float = 5.0
    rule_decline: float = 0.30
    rule_width: int = 1

    def __post_init__(self):
        self.validate()

    # "lambda" is the public key; ``lam`` is the attribute
    @staticmethod
    def key_to_attr(key: str) -> str:
        return "lam" if key == "lambda" else key

    @staticmethod
    def attr_to_key(attr: str) -> str:
        return "lambda" if attr == "lam" else attr

    @classmethod
    def keys(cls) -> list[str]:
        return [cls.attr_to_key(f.name) for f in fields(cls)]

    def validate(self) -> None:
        try:
            self.window_config()
            self.train_config()
            self.text_config()
            CompositeWeights(self.omega1, self.omega2)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        if self.periods < 2:
            raise ConfigError("periods must be >= 2")
        if self.window_sizes is not None:
            bad = [a for a in self.window_sizes if not 1 <= int(a) <= self.periods - 1]
            if bad:
                raise ConfigError(f"window_sizes {bad} outside [1, {self.periods - 1}]")
        if self.text_source not in ("hash", "precomputed"):
            raise ConfigError("text_source must be 'hash' or 'precomputed'")
        if self.smote_space not in ("features", "embeddings"):
            raise ConfigError("smote_space must be 'features' or 'embeddings'")
        if self.smote_k < 1:
            raise ConfigError("smote_k must be >= 1")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must lie in (0, 1)")
        for name in ("latent_dim", "refiner_hidden", "refined_dim", "clf_hidden", "text_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    def window_config(self, **over) -> WindowConfig:
        kw = dict(window_sizes=tuple(self.window_sizes) if self.window_sizes else None,
                  second_order_mode=self.second_order_mode, placement=self.placement,
                  include_raw=self.include_raw, zero_cosine=float(self.zero_cosine))
        kw.update(over)
        return WindowConfig(**kw)

    def train_config(self, **over) -> TrainConfig:
        kw = dict(lam=float(self.lam), lr=self.lr, epochs=self.epochs, percentile_q=self.percentile_q,
                  distinction_sign=self.distinction_sign, clf_hidden=self.clf_hidden,
                  decision_threshold=self.decision_threshold, freeze_autoencoder=self.freeze_autoencoder,
                  standardize_features=self.standardize_features, weight_decay=self.weight_decay)
        kw.update(over)
        return TrainConfig(**kw)

    def text_config(self) -> TextEmbedderConfig:
        return TextEmbedderConfig(self.text_dim, self.hash_seed)

    def weights(self) -> CompositeWeights:
        return CompositeWeights(self.omega1, self.omega2)

    def to_dict(self) -> dict:
        return {self.attr_to_key(k): v for k, v in dataclasses.asdict(self).items()}

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:10]

    def replace(self, **changes) -> "RunConfig":
        return from_mapping({**self.to_dict(), **changes})


def from_mapping(data: dict) -> RunConfig:
    known = set(RunConfig.keys())
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        return RunConfig(**{RunConfig.key_to_attr(k): v for k, v in data.items()})
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the config file, then explicit overrides."""
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        loaded = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{p}: config must be a mapping")
        data.update(loaded)
    data.update(overrides or {})
    return from_mapping(data)
