"""Per-period modality vectors.

Text paragraphs are embedded with a seeded signed feature hash (or read from
an externally produced ``embeddings.csv``), numeric period vectors go through
an autoencoder's encoder, and each modality is refined by a one-hidden-layer
perceptron.
"""

from __future__ import annotations

import csv
import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn import dense, glorot, mlp2_backward, mlp2_forward, relu
from .records import Cohort, DataError, PeriodSummary, period_summaries

_TOKEN = re.compile(r"[^0-9a-z]+")


@dataclass(frozen=True)
class TextEmbedderConfig:
    dim: int = 64
    hash_seed: int = 0

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError(f"text embedding dim must be >= 2, got {self.dim}")


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN.split(text.lower()) if t]


def token_slot(token: str, cfg: TextEmbedderConfig) -> tuple[int, int]:
    """Seeded (bucket, sign) for one token; stable across processes."""
    digest = hashlib.blake2b(
        token.encode("utf-8"), digest_size=8, key=str(cfg.hash_seed).encode("ascii")
    ).digest()
    h = int.from_bytes(digest, "little")
    return (h >> 1) % cfg.dim, 1 if h & 1 else -1


def embed_text_hash(summary: PeriodSummary | str, cfg: TextEmbedderConfig = TextEmbedderConfig()) -> np.ndarray:
    text = summary.text if isinstance(summary, PeriodSummary) else summary
    v = np.zeros(cfg.dim)
    for tok in tokenize(text):
        bucket, sign = token_slot(tok, cfg)
        v[bucket] += sign
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


def load_precomputed_embeddings(path, expected_dim: int, cohort: Cohort | None = None) -> dict[tuple[str, int], np.ndarray]:
    """Read ``student_id,period,v0..v{d-1}`` rows.

    With a cohort, every (student, period) pair of the cohort must be present.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing input file: {path}")
    header = ["student_id", "period"] + [f"v{i}" for i in range(expected_dim)]
    out: dict[tuple[str, int], np.ndarray] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None or first[:2] != header[:2]:
            raise DataError(f"{path}:1: bad header, expected {','.join(header[:3])},...")
        if len(first) != len(header):
            raise DataError(f"{path}:1: dimension mismatch, header has {len(first) - 2} values, expected {expected_dim}")
        for row in reader:
            if not row:
                continue
            where = f"{path}:{reader.line_num}"
            if len(row) != len(header):
                raise DataError(f"{where}: dimension mismatch, {len(row) - 2} values, expected {expected_dim}")
            try:
                key = (row[0].strip(), int(row[1]))
                vec = np.array([float(x) for x in row[2:]])
            except ValueError:
                raise DataError(f"{where}: malformed row") from None
            if not np.all(np.isfinite(vec)):
                raise DataError(f"{where}: non-finite value")
            if key in out:
                raise DataError(f"{where}: duplicate pair {key}")
            out[key] = vec
    if cohort is not None:
        for s in cohort.students:
            for p in range(1, cohort.periods + 1):
                if (s.student_id, p) not in out:
                    raise DataError(f"{path}: missing embedding for (student {s.student_id!r}, period {p})")
    return out


def write_embeddings(path, vectors: dict[tuple[str, int], np.ndarray]) -> None:
    dim = len(next(iter(vectors.values())))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["student_id", "period"] + [f"v{i}" for i in range(dim)])
        for (sid, p), v in vectors.items():
            w.writerow([sid, p] + [repr(float(x)) for x in v])


# -- autoencoder -------------------------------------------------------------


@dataclass
class AutoencoderParams:
    enc_W: np.ndarray
    enc_b: np.ndarray
    dec_W: np.ndarray
    dec_b: np.ndarray
    mean: np.ndarray = None
    scale: np.ndarray = None

    def __post_init__(self):
        d, L = self.enc_W.shape
        if self.dec_W.shape != (L, d) or self.enc_b.shape != (L,) or self.dec_b.shape != (d,):
            raise ValueError("inconsistent autoencoder shapes")
        if L > d:
            raise ValueError(f"latent_dim {L} exceeds input_dim {d}")
        if self.mean is None:
            self.mean = np.zeros(d)
        if self.scale is None:
            self.scale = np.ones(d)

    @property
    def input_dim(self) -> int:
        return self.enc_W.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.enc_W.shape[1]

    @classmethod
    def init(cls, input_dim: int, latent_dim: int, seed: int) -> "AutoencoderParams":
        rng = np.random.default_rng(seed)
        return cls(glorot(rng, input_dim, latent_dim), np.zeros(latent_dim),
                   glorot(rng, latent_dim, input_dim), np.zeros(input_dim))

    def standardize(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.scale


def _ae_forward(p: AutoencoderParams, Xs):
    pre = dense(Xs, p.enc_W, p.enc_b)
    z = relu(pre)
    return dense(z, p.dec_W, p.dec_b), pre, z


def autoencoder_loss_and_grads(p: AutoencoderParams, Xs):
    """Mean squared reconstruction error over all entries, and its gradients."""
    recon, pre, z = _ae_forward(p, Xs)
    err = recon - Xs
    loss = float(np.mean(err ** 2))
    d_recon = 2.0 * err / err.size
    dz = d_recon @ p.dec_W.T
    dpre = dz * (pre > 0)
    grads = {
        "dec_W": z.T @ d_recon,
        "dec_b": d_recon.sum(axis=0),
        "enc_W": Xs.T @ dpre,
        "enc_b": dpre.sum(axis=0),
    }
    return loss, grads


def autoencoder_train(X, latent_dim: int = 16, epochs: int = 300, lr: float = 0.01,
                      seed: int = 0) -> tuple[AutoencoderParams, list[float]]:
    """Full-batch gradient descent on reconstruction MSE in standardised space.

    Returns the parameters and a loss curve with ``epochs + 1`` entries (the
    last one evaluated after the final update).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or len(X) < 1:
        raise ValueError(f"expected a non-empty matrix, got shape {X.shape}")
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    if not np.all(np.isfinite(X)):
        raise ValueError("autoencoder input contains non-finite values")
    p = AutoencoderParams.init(X.shape[1], latent_dim, seed)
    p.mean = X.mean(axis=0)
    sd = X.std(axis=0)
    p.scale = np.where(sd > 0, sd, 1.0)
    Xs = p.standardize(X)
    curve = []
    for _ in range(epochs):
        loss, g = autoencoder_loss_and_grads(p, Xs)
        curve.append(loss)
        for name, grad in g.items():
            setattr(p, name, getattr(p, name) - lr * grad)
    curve.append(autoencoder_loss_and_grads(p, Xs)[0])
    return p, curve


def encode_numeric(params: AutoencoderParams, row) -> np.ndarray:
    row = np.asarray(row, dtype=float)
    if row.shape[-1] != params.input_dim:
        raise ValueError(f"expected {params.input_dim} numeric entries, got {row.shape[-1]}")
    return relu(dense(params.standardize(row), params.enc_W, params.enc_b))


# -- refiners ----------------------------------------------------------------


@dataclass
class RefinerParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        i, h = self.W1.shape
        if self.b1.shape != (h,) or self.W2.shape[0] != h or self.b2.shape != (self.W2.shape[1],):
            raise ValueError("inconsistent refiner shapes")

    @property
    def in_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W2.shape[1]

    @classmethod
    def init(cls, in_dim: int, hidden: int = 32, out_dim: int = 32, seed: int = 0) -> "RefinerParams":
        rng = np.random.default_rng(seed)
        return cls(glorot(rng, in_dim, hidden), np.zeros(hidden), glorot(rng, hidden, out_dim), np.zeros(out_dim))

    @classmethod
    def zeros(cls, in_dim: int, hidden: int = 32, out_dim: int = 32) -> "RefinerParams":
        return cls(np.zeros((in_dim, hidden)), np.zeros(hidden), np.zeros((hidden, out_dim)), np.zeros(out_dim))


def refine(params: RefinerParams, vec) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    if vec.shape[-1] != params.in_dim:
        raise ValueError(f"refiner expects {params.in_dim} inputs, got {vec.shape[-1]}")
    return mlp2_forward(vec, params.W1, params.b1, params.W2, params.b2)[0]


def refine_loss_grads(params: RefinerParams, X, dout):
    """Back-propagate ``dout`` through :func:`refine`; returns (dX, dW1, db1, dW2, db2)."""
    _, cache = mlp2_forward(np.asarray(X, dtype=float), params.W1, params.b1, params.W2, params.b2)
    return mlp2_backward(dout, cache, params.W1, params.W2)


# -- sequences ---------------------------------------------------------------


@dataclass
class EmbeddingSequence:
    student_id: str
    text_vecs: np.ndarray
    num_vecs: np.ndarray
    label: int | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.text_vecs) != len(self.num_vecs):
            raise ValueError(f"modality row counts differ: {len(self.text_vecs)} vs {len(self.num_vecs)}")
        if not (np.all(np.isfinite(self.text_vecs)) and np.all(np.isfinite(self.num_vecs))):
            raise ValueError(f"non-finite embedding for {self.student_id!r}")


def text_tensor(cohort: Cohort, source: str = "hash", cfg: TextEmbedderConfig = TextEmbedderConfig(),
                precomputed: dict | None = None) -> np.ndarray:
    """Raw (unrefined) text vectors as an (N, P, d_t) array."""
    if source == "hash":
        return np.stack([
            np.stack([embed_text_hash(s, cfg) for s in period_summaries(st, cohort.periods)])
            for st in cohort.students
        ]) if len(cohort) else np.zeros((0, cohort.periods, cfg.dim))
    if source == "precomputed":
        if precomputed is None:
            raise ValueError("precomputed text source needs an embeddings map")
        out = []
        for st in cohort.students:
            rows = []
            for p in range(1, cohort.periods + 1):
                key = (st.student_id, p)
                if key not in precomputed:
                    raise DataError(f"missing embedding for (student {st.student_id!r}, period {p})")
                rows.append(precomputed[key])
            out.append(np.stack(rows))
        return np.stack(out)
    raise ValueError(f"unknown text source {source!r}")


def build_sequences(cohort: Cohort, numeric: np.ndarray, text: np.ndarray, ae: AutoencoderParams,
                    text_refiner: RefinerParams, num_refiner: RefinerParams) -> list[EmbeddingSequence]:
    """Refined per-period vectors for every student.

    ``numeric`` is the (N, P, 3*S) array from :func:`dmsw.preprocess.numeric_tensor`
    and ``text`` the raw text array from :func:`text_tensor`.
    """
    seqs = []
    for n, st in enumerate(cohort.students):
        t = refine(text_refiner, text[n])
        z = refine(num_refiner, encode_numeric(ae, numeric[n]))
        seqs.append(EmbeddingSequence(st.student_id, t, z, st.label))
    return seqs

