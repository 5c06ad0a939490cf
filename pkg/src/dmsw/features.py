"""Modality fusion and multiscale sliding-window change features.

For a sequence of per-period vectors V_1..V_P and a window size a, the
first-order block holds cos(V_i, V_{i+a}) for i = 1..P-a. The second-order
block relates consecutive first-order values of the same window size, either
as the sign of their product (cosine of two scalars) or as their difference.
The final vector lays out all first-order blocks by ascending a, then all
second-order blocks by ascending a.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .embed import EmbeddingSequence

SECOND_ORDER_MODES = ("cosine", "delta")
PLACEMENTS = ("post_fusion", "pre_fusion")


class FeatureIndex(NamedTuple):
    a: int
    order: int
    i: int
    modality: str = "fused"

    @property
    def column(self) -> str:
        prefix = {"fused": "f", "text": "ft", "numeric": "fn", "raw": "raw"}[self.modality]
        return f"{prefix}_{self.a}_{self.order}_{self.i}"


@dataclass(frozen=True)
class WindowConfig:
    window_sizes: tuple[int, ...] | None = None   # None: every size 1..P-1
    second_order_mode: str = "cosine"
    placement: str = "post_fusion"
    include_raw: bool = False
    zero_cosine: float = 0.0

    def __post_init__(self):
        if self.window_sizes is not None:
            sizes = tuple(sorted(set(int(a) for a in self.window_sizes)))
            if not sizes:
                raise ValueError("window_sizes must be non-empty")
            if sizes[0] < 1:
                raise ValueError(f"window sizes must be >= 1, got {sizes}")
            object.__setattr__(self, "window_sizes", sizes)
        if self.second_order_mode not in SECOND_ORDER_MODES:
            raise ValueError(f"second_order_mode must be one of {SECOND_ORDER_MODES}")
        if self.placement not in PLACEMENTS:
            raise ValueError(f"placement must be one of {PLACEMENTS}")
        if self.zero_cosine not in (0.0, 1.0):
            raise ValueError("zero_cosine must be 0 or 1")

    def sizes(self, periods: int) -> tuple[int, ...]:
        if periods < 2:
            raise ValueError(f"sliding windows need at least 2 periods, got {periods}")
        sizes = self.window_sizes or tuple(range(1, periods))
        bad = [a for a in sizes if not 1 <= a <= periods - 1]
        if bad:
            raise ValueError(f"window sizes {bad} outside [1, {periods - 1}]")
        return sizes


@dataclass
class FusedSequence:
    student_id: str
    V: np.ndarray
    label: int | None = field(default=None, compare=False)


@dataclass
class SlidingFeatures:
    student_id: str
    F: np.ndarray
    index_map: list[FeatureIndex]
    label: int | None = None


def fuse(seq: EmbeddingSequence) -> FusedSequence:
    if len(seq.text_vecs) != len(seq.num_vecs):
        raise ValueError(f"row-count mismatch: {len(seq.text_vecs)} text vs {len(seq.num_vecs)} numeric")
    return FusedSequence(seq.student_id, np.concatenate([seq.text_vecs, seq.num_vecs], axis=-1), seq.label)


def rowdot(x, y) -> np.ndarray:
    """Dot products along the last axis, accumulated strictly left to right."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    acc = np.zeros(np.broadcast_shapes(x.shape, y.shape)[:-1])
    for k in range(x.shape[-1]):
        acc = acc + x[..., k] * y[..., k]
    return acc


def cosine_sim(u, v, zero_value: float = 0.0) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = rowdot(u, u)
    nv = rowdot(v, v)
    if nu == 0 or nv == 0:
        return float(zero_value)
    # one square root of the product keeps cos(u, u) exactly 1
    return float(rowdot(u, v) / np.sqrt(nu * nv))


def first_order_features(V, a: int, zero_value: float = 0.0) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    P = len(V)
    if not 1 <= a <= P - 1:
        raise ValueError(f"window size {a} outside [1, {P - 1}]")
    return _cosine_pairs(V[: P - a], V[a:], zero_value)[0]


def second_order_features(D, mode: str = "cosine") -> np.ndarray:
    D = np.asarray(D, dtype=float)
    if len(D) < 2:
        return np.zeros(0)
    if mode == "cosine":
        return np.sign(D[:-1] * D[1:])
    if mode == "delta":
        return D[1:] - D[:-1]
    raise ValueError(f"unknown second-order mode {mode!r}")


def build_index_map(periods: int, cfg: WindowConfig, raw_dim: int = 0) -> list[FeatureIndex]:
    sizes = cfg.sizes(periods)
    modalities = ("fused",) if cfg.placement == "post_fusion" else ("text", "numeric")
    out = []
    for mod in modalities:
        for a in sizes:
            out.extend(FeatureIndex(a, 1, i, mod) for i in range(1, periods - a + 1))
        for a in sizes:
            out.extend(FeatureIndex(a, 2, i, mod) for i in range(1, periods - a))
    if cfg.include_raw:
        out.extend(FeatureIndex(0, 0, i, "raw") for i in range(1, raw_dim + 1))
    return out


def feature_length(periods: int, sizes: Sequence[int]) -> int:
    return sum(periods - a for a in sizes) + sum(periods - a - 1 for a in sizes if periods - a >= 2)


# -- batched kernel with gradients ---------------------------------------------


def _cosine_pairs(U, W, zero_value):
    dot = rowdot(U, W)
    nu = rowdot(U, U)
    nw = rowdot(W, W)
    ok = (nu != 0) & (nw != 0)  # NaN stays NaN
    c = np.where(ok, dot / np.sqrt(np.where(ok, nu * nw, 1.0)), zero_value)
    return c, ok


def _lagged_cosines(X, sizes, zero_value):
    """Cosines between rows a periods apart for every a, plus the row norms.

    Sums run over the feature axis left to right, exactly like :func:`rowdot`.
    """
    P = X.shape[1]
    Xt = np.ascontiguousarray(np.moveaxis(X, -1, 0))
    sq = np.zeros(X.shape[:2])
    for row in Xt:
        sq = sq + row * row
    norms = np.sqrt(sq)
    out = []
    for a in sizes:
        dot = np.zeros((X.shape[0], P - a))
        for row in Xt:
            dot = dot + row[:, : P - a] * row[:, a:]
        nu, nw = sq[:, : P - a], sq[:, a:]
        ok = (nu != 0) & (nw != 0)  # NaN stays NaN
        out.append((np.where(ok, dot / np.sqrt(np.where(ok, nu * nw, 1.0)), zero_value), ok))
    return out, norms


def _lagged_cosines_backward(X, sizes, norms, results, dDs):
    """Push dL/dcos back to X through the Gram matrix G = X X^T."""
    N, P, _ = X.shape
    S = np.zeros((N, P, P))
    for a, (c, ok), dc in zip(sizes, results, dDs):
        i = np.arange(P - a)
        j = i + a
        nu = np.where(ok, norms[:, i], 1.0)
        nw = np.where(ok, norms[:, j], 1.0)
        dc = np.where(ok, dc, 0.0)
        S[:, i, j] += dc / (nu * nw)
        S[:, i, i] -= 0.5 * dc * c / (nu * nu)
        S[:, j, j] -= 0.5 * dc * c / (nw * nw)
    return (S + S.transpose(0, 2, 1)) @ X


class SlidingKernel:
    """Vectorised feature extraction over a batch of sequences, with a backward pass.

    ``forward`` maps an (N, P, d) array to (N, M) features; ``backward`` maps
    dL/dF back to dL/dV. For ``pre_fusion`` the first ``text_dim`` columns of
    V are treated as one modality and the rest as the other.
    """

    def __init__(self, periods: int, cfg: WindowConfig, text_dim: int | None = None, fused_dim: int | None = None):
        self.P = periods
        self.cfg = cfg
        self.sizes = cfg.sizes(periods)
        if cfg.placement == "pre_fusion" and text_dim is None:
            raise ValueError("pre_fusion placement needs the text dimension")
        self.text_dim = text_dim
        raw_dim = fused_dim if cfg.include_raw else 0
        if cfg.include_raw and fused_dim is None:
            raise ValueError("include_raw needs the fused dimension")
        self.index_map = build_index_map(periods, cfg, raw_dim or 0)
        self.change_mask = np.array([ix.order in (1, 2) for ix in self.index_map], dtype=bool)

    def __len__(self):
        return len(self.index_map)

    def _parts(self, V):
        if self.cfg.placement == "post_fusion":
            return [(slice(None), V)]
        t = self.text_dim
        return [(slice(0, t), V[..., :t]), (slice(t, None), V[..., t:])]

    def forward(self, V):
        V = np.asarray(V, dtype=float)
        if V.ndim != 3 or V.shape[1] != self.P:
            raise ValueError(f"expected (N, {self.P}, d) input, got {V.shape}")
        blocks, caches = [], []
        for sl, X in self._parts(V):
            results, norms = _lagged_cosines(X, self.sizes, self.cfg.zero_cosine)
            first = [c for c, _ in results]
            second = []
            for D in first:
                if D.shape[1] < 2:
                    continue
                if self.cfg.second_order_mode == "cosine":
                    second.append(np.sign(D[:, :-1] * D[:, 1:]))
                else:
                    second.append(D[:, 1:] - D[:, :-1])
            blocks.extend(first + second)
            caches.append((sl, X, norms, results))
        if self.cfg.include_raw:
            blocks.append(V.mean(axis=1))
        F = np.concatenate(blocks, axis=1) if blocks else np.zeros((len(V), 0))
        return F, (V.shape, caches)

    def backward(self, dF, cache):
        shape, caches = cache
        dV = np.zeros(shape)
        col = 0
        for sl, X, norms, results in caches:
            dD = []
            for c, _ in results:
                dD.append(dF[:, col: col + c.shape[1]].copy())
                col += c.shape[1]
            for k, (c, _) in enumerate(results):
                q = c.shape[1] - 1
                if q < 1:
                    continue
                g = dF[:, col: col + q]
                col += q
                if self.cfg.second_order_mode == "delta":
                    dD[k][:, 1:] += g
                    dD[k][:, :-1] -= g
            dV[..., sl] += _lagged_cosines_backward(X, self.sizes, norms, results, dD)
        if self.cfg.include_raw:
            dV += dF[:, col:][:, None, :] / shape[1]
        return dV

    def kink_signature(self, cache):
        """Discrete state that a small parameter step must not change for finite differences to be valid."""
        sig = []
        for _, _, _, results in cache[1]:
            for D, ok in results:
                sig.append(ok)
                if self.cfg.second_order_mode == "cosine":
                    sig.append(np.sign(D))
        return sig


def extract_features(seqs: Sequence[EmbeddingSequence | FusedSequence], cfg: WindowConfig = WindowConfig()) -> list[SlidingFeatures]:
    """Sliding-window feature vectors for each sequence.

    ``post_fusion`` works on fused rows; ``pre_fusion`` runs the same blocks on
    the text and numeric matrices separately, text blocks first.
    """
    if not seqs:
        return []
    first = seqs[0]
    if isinstance(first, FusedSequence):
        if cfg.placement == "pre_fusion":
            raise ValueError("pre_fusion placement needs unfused EmbeddingSequence inputs")
        V = np.stack([s.V for s in seqs])
        text_dim = None
    else:
        V = np.stack([fuse(s).V for s in seqs])
        text_dim = first.text_vecs.shape[1]
    kernel = SlidingKernel(V.shape[1], cfg, text_dim, V.shape[2])
    F, _ = kernel.forward(V)
    return [SlidingFeatures(s.student_id, F[n], kernel.index_map, s.label) for n, s in enumerate(seqs)]


def write_features(path, ids, labels, F, index_map) -> Path:
    """Dump a feature matrix as ``features.csv``: student_id, label, then one column per coordinate."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    F = np.asarray(F, dtype=float)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["student_id", "label"] + [ix.column for ix in index_map])
        for sid, lab, row in zip(ids, labels, F):
            w.writerow([sid, "" if lab is None else int(lab)] + [repr(float(v)) for v in row])
    return path
