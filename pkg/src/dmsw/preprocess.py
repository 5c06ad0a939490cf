"""Score normalisation, composite performance values, splitting and SMOTE."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .records import Cohort, DataError, StudentRecord


@dataclass(frozen=True)
class CompositeWeights:
    omega1: float = 0.5
    omega2: float = 0.5

    def __post_init__(self):
        for name in ("omega1", "omega2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if abs(self.omega1 + self.omega2 - 1.0) > 1e-12:
            raise ValueError(f"omega1 + omega2 must equal 1, got {self.omega1 + self.omega2}")


@dataclass
class LabeledVectorSet:
    rows: np.ndarray
    labels: np.ndarray
    index_map: list = field(default_factory=list)
    ids: list = field(default_factory=list)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.rows.ndim != 2:
            raise ValueError(f"rows must be a matrix, got shape {self.rows.shape}")
        if len(self.rows) != len(self.labels):
            raise ValueError(f"{len(self.rows)} rows but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    def take(self, idx) -> "LabeledVectorSet":
        idx = np.asarray(idx, dtype=int)
        ids = [self.ids[i] for i in idx] if self.ids else []
        return LabeledVectorSet(self.rows[idx], self.labels[idx], list(self.index_map), ids)


def relative_score(raw: float, max_score: float) -> float:
    if not max_score > 0:
        raise ValueError(f"max_score must be positive, got {max_score}")
    if not 0 <= raw <= max_score:
        raise ValueError(f"raw score {raw} outside [0, {max_score}]")
    return 100.0 * raw / max_score


def rank_term(rank: int, total: int) -> float:
    if not 1 <= rank <= total:
        raise ValueError(f"rank {rank} outside [1, {total}]")
    if total == 1:
        return 1.0
    return 1.0 - (rank - 1) / (total - 1)


def composite_value(score: float, mean: float, sd: float, rank: int, total: int,
                    w: CompositeWeights = CompositeWeights()) -> float:
    """Weighted blend of the exam z-score and the normalised rank.

    A zero standard deviation gives z = 0; a class of one gets rank term 1.
    """
    if sd < 0:
        raise ValueError(f"sd must be non-negative, got {sd}")
    r = rank_term(rank, total)
    z = 0.0 if sd == 0 else (score - mean) / sd
    return w.omega1 * z + w.omega2 * r


@dataclass
class ScoreStats:
    """Per (subject, period) cohort mean/sd of relative scores plus entry means for imputation."""

    subjects: tuple
    periods: int
    mean: np.ndarray        # (S, P)
    sd: np.ndarray          # (S, P)
    entry_mean: np.ndarray  # (S, P, 3)
    weights: CompositeWeights = CompositeWeights()


def _raw_entries(exam, mean: float, sd: float, w: CompositeWeights) -> list[float]:
    rel = relative_score(exam.raw_score, exam.max_score)
    return [rel, rank_term(exam.rank, exam.class_size),
            composite_value(rel, mean, sd, exam.rank, exam.class_size, w)]


def cohort_score_stats(cohort: Cohort, w: CompositeWeights = CompositeWeights()) -> ScoreStats:
    S, P = len(cohort.subjects), cohort.periods
    subj = {s: i for i, s in enumerate(cohort.subjects)}
    rel: list[list[list[float]]] = [[[] for _ in range(P)] for _ in range(S)]
    for st in cohort.students:
        for e in st.exams:
            rel[subj[e.subject]][e.period - 1].append(relative_score(e.raw_score, e.max_score))
    mean = np.zeros((S, P))
    sd = np.zeros((S, P))
    for s in range(S):
        for p in range(P):
            if rel[s][p]:
                mean[s, p] = np.mean(rel[s][p])
                sd[s, p] = np.std(rel[s][p])
    sums = np.zeros((S, P, 3))
    counts = np.zeros((S, P))
    for st in cohort.students:
        for e in st.exams:
            s, p = subj[e.subject], e.period - 1
            sums[s, p] += _raw_entries(e, mean[s, p], sd[s, p], w)
            counts[s, p] += 1
    entry_mean = np.zeros((S, P, 3))
    for s in range(S):
        seen = counts[s] > 0
        fallback = sums[s][seen].sum(axis=0) / counts[s][seen].sum() if seen.any() else np.zeros(3)
        for p in range(P):
            entry_mean[s, p] = sums[s, p] / counts[s, p] if counts[s, p] else fallback
    return ScoreStats(tuple(cohort.subjects), P, mean, sd, entry_mean, w)


def numeric_period_vector(record: StudentRecord, period: int, stats: ScoreStats) -> tuple[np.ndarray, list[str]]:
    """Return the per-period numeric vector and the subjects that had to be imputed.

    Each subject contributes [relative score, rank term, composite value].
    A missing cell takes the student's mean over observed periods for that
    subject, falling back to the cohort mean for the cell.
    """
    if not 1 <= period <= stats.periods:
        raise ValueError(f"period {period} outside [1, {stats.periods}]")
    out = []
    imputed = []
    for s, subject in enumerate(stats.subjects):
        exam = record.exam(subject, period)
        if exam is not None:
            out.extend(_raw_entries(exam, stats.mean[s, period - 1], stats.sd[s, period - 1], stats.weights))
            continue
        imputed.append(subject)
        observed = [
            _raw_entries(e, stats.mean[s, e.period - 1], stats.sd[s, e.period - 1], stats.weights)
            for e in record.exams if e.subject == subject
        ]
        if observed:
            out.extend(np.mean(observed, axis=0))
        else:
            out.extend(stats.entry_mean[s, period - 1])
    return np.asarray(out, dtype=float), imputed


def numeric_tensor(cohort: Cohort, stats: ScoreStats | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Stack numeric period vectors into an (N, P, 3*S) array with an (N, P, S) imputation mask."""
    stats = stats or cohort_score_stats(cohort)
    N, P, S = len(cohort), cohort.periods, len(cohort.subjects)
    X = np.zeros((N, P, 3 * S))
    mask = np.zeros((N, P, S), dtype=bool)
    for n, st in enumerate(cohort.students):
        for p in range(P):
            vec, imputed = numeric_period_vector(st, p + 1, stats)
            X[n, p] = vec
            for subj in imputed:
                mask[n, p, stats.subjects.index(subj)] = True
    return X, mask


# -- splitting and balancing -------------------------------------------------


def split_indices(labels, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    test = []
    for cls in (0, 1):
        members = np.flatnonzero(labels == cls)
        if members.size == 0:
            raise ValueError(f"class {cls} has no members")
        members = rng.permutation(members)
        test.extend(members[: int(round(members.size * test_fraction))])
    test_idx = np.sort(np.asarray(test, dtype=int))
    train_idx = np.setdiff1d(np.arange(labels.size), test_idx)
    return train_idx, test_idx


def stratified_split(data, test_fraction: float = 0.2, seed: int = 0):
    """Split a :class:`LabeledVectorSet` or a labeled :class:`Cohort` keeping class proportions."""
    if isinstance(data, Cohort):
        labels = data.labels
        if any(l is None for l in labels):
            raise DataError("stratified_split needs a fully labeled cohort")
        tr, te = split_indices(labels, test_fraction, seed)
        return data.subset(tr), data.subset(te)
    tr, te = split_indices(data.labels, test_fraction, seed)
    return data.take(tr), data.take(te)


@dataclass(frozen=True)
class SmotePlan:
    """Recipe for synthetic rows: row j = X[base[j]] + u[j] * (X[neighbor[j]] - X[base[j]])."""

    base: np.ndarray
    neighbor: np.ndarray
    u: np.ndarray
    label: int
    space: str = "features"

    def __len__(self):
        return len(self.u)

    def apply(self, X: np.ndarray) -> np.ndarray:
        if len(self) == 0:
            return np.zeros((0,) + X.shape[1:])
        a, b = X[self.base], X[self.neighbor]
        return a + self.u.reshape((-1,) + (1,) * (X.ndim - 1)) * (b - a)


def smote_plan(X: np.ndarray, y, k: int = 5, seed: int = 0) -> SmotePlan:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    n1 = int((y == 1).sum())
    n0 = int((y == 0).sum())
    minority = 1 if n1 < n0 else 0
    n_new = abs(n0 - n1)
    if n_new == 0:
        empty = np.zeros(0, dtype=int)
        return SmotePlan(empty, empty, np.zeros(0), minority)
    idx = np.flatnonzero(y == minority)
    if idx.size < 2:
        raise ValueError(f"SMOTE needs at least 2 minority rows, got {idx.size}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    k = min(k, idx.size - 1)
    flat = X[idx].reshape(idx.size, -1)
    d2 = ((flat[:, None, :] - flat[None, :, :]) ** 2).sum(axis=-1)
    np.fill_diagonal(d2, np.inf)
    neighbors = np.argsort(d2, axis=1, kind="stable")[:, :k]
    base = np.empty(n_new, dtype=int)
    nn = np.empty(n_new, dtype=int)
    u = np.empty(n_new)
    for j in range(n_new):
        # per-row substream so any partition of the loop gives the same rows
        rng = np.random.default_rng([seed, j])
        b = j % idx.size
        base[j] = idx[b]
        nn[j] = idx[neighbors[b, rng.integers(k)]]
        u[j] = rng.random()
    return SmotePlan(base, nn, u, minority)


def smote_balance(train: LabeledVectorSet, k: int = 5, seed: int = 0) -> LabeledVectorSet:
    """Oversample the minority class until both classes have equal counts.

    Original rows come first, unchanged; synthetic rows follow.
    """
    plan = smote_plan(train.rows, train.labels, k, seed)
    if len(plan) == 0:
        return train
    rows = np.vstack([train.rows, plan.apply(train.rows)])
    labels = np.concatenate([train.labels, np.full(len(plan), plan.label)])
    ids = list(train.ids) + [f"smote-{j}" for j in range(len(plan))] if train.ids else []
    return LabeledVectorSet(rows, labels, list(train.index_map), ids)
