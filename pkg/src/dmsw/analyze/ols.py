"""Ordinary least squares with classical inference, plus the window-group summary."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.linalg import solve_triangular


class RankDeficientError(ValueError):
    pass


@dataclass
class OlsReport:
    names: list[str]
    coef: np.ndarray
    std_err: np.ndarray
    t_stat: np.ndarray
    p_value: np.ndarray
    r_squared: float
    adj_r_squared: float
    f_statistic: float
    f_p_value: float
    n: int
    k: int

    def as_dict(self) -> dict:
        return {
            "n": self.n, "k": self.k,
            "r_squared": self.r_squared, "adj_r_squared": self.adj_r_squared,
            "f_statistic": self.f_statistic, "f_p_value": self.f_p_value,
            "coefficients": [
                {"name": nm, "coef": float(c), "std_err": float(s), "t": float(t), "p": float(p)}
                for nm, c, s, t, p in zip(self.names, self.coef, self.std_err, self.t_stat, self.p_value)
            ],
        }


def _first_dependent_column(X) -> int | None:
    for j in range(1, X.shape[1] + 1):
        if np.linalg.matrix_rank(X[:, :j]) < j:
            return j - 1
    return None


def ols_fit(X, y, add_intercept: bool = True, names=None) -> OlsReport:
    """Least squares via QR, t-tests on N-k-1 degrees of freedom and the all-slopes F-test."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    n, k = X.shape
    if len(y) != n:
        raise ValueError(f"{n} rows but {len(y)} responses")
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(k)]
    design = np.column_stack([np.ones(n), X]) if add_intercept else X
    cols = (["const"] if add_intercept else []) + names
    p = design.shape[1]
    if n <= p:
        raise ValueError(f"need more observations than parameters (n={n}, parameters={p})")
    if np.linalg.matrix_rank(design) < p:
        j = _first_dependent_column(design)
        raise RankDeficientError(f"rank deficient design: column {cols[j]!r} is linearly dependent on earlier columns")

    Q, R = np.linalg.qr(design)
    beta = solve_triangular(R, Q.T @ y)
    resid = y - design @ beta
    rss = float(resid @ resid)
    df = n - p
    s2 = rss / df
    Rinv = solve_triangular(R, np.eye(p))
    se = np.sqrt(s2 * np.sum(Rinv ** 2, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = beta / se
    pv = 2 * stats.t.sf(np.abs(t), df)

    tss = float(np.sum((y - y.mean()) ** 2)) if add_intercept else float(y @ y)
    r2 = 1.0 - rss / tss if tss > 0 else (1.0 if rss == 0 else 0.0)
    r2 = min(max(r2, 0.0), 1.0)
    k_slopes = p - 1 if add_intercept else p
    adj = 1.0 - (1.0 - r2) * (n - (1 if add_intercept else 0)) / df
    if k_slopes > 0:
        with np.errstate(divide="ignore", invalid="ignore"):
            f_stat = ((tss - rss) / k_slopes) / s2 if s2 > 0 else np.inf
        f_p = float(stats.f.sf(f_stat, k_slopes, df)) if np.isfinite(f_stat) else 0.0
    else:
        f_stat, f_p = np.nan, np.nan
    return OlsReport(cols, beta, se, t, pv, r2, adj, float(f_stat), f_p, n, k_slopes)


@dataclass
class GroupedOlsRow:
    key: tuple
    label: str
    members: list[int]
    estimated: list[int]
    mean_coef: float
    mean_std_err: float
    mean_p_value: float

    @property
    def size(self) -> int:
        return len(self.members)

    def as_dict(self) -> dict:
        return {
            "group": self.label, "size": self.size,
            "coordinates": f"x{self.members[0]}-x{self.members[-1]}" if self.size > 1 else f"x{self.members[0]}",
            "estimated": len(self.estimated),
            "mean_coef": self.mean_coef, "mean_std_err": self.mean_std_err, "mean_p_value": self.mean_p_value,
        }


@dataclass
class GroupedOls:
    fit: OlsReport
    groups: list[GroupedOlsRow]
    dropped: list[int] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"fit": self.fit.as_dict(), "groups": [g.as_dict() for g in self.groups],
                "dropped_coordinates": [f"x{j}" for j in self.dropped]}


def estimable_columns(X, tol: float = 1e-10) -> list[int]:
    """Greedy left-to-right selection of columns that add rank on top of an intercept."""
    n = len(X)
    keep = []
    basis = np.ones((n, 1)) / np.sqrt(n)
    for j in range(X.shape[1]):
        v = X[:, j] - basis @ (basis.T @ X[:, j])
        norm = np.linalg.norm(v)
        if norm > tol * max(1.0, np.linalg.norm(X[:, j])):
            keep.append(j)
            basis = np.column_stack([basis, v / norm])
    return keep


_MOD = {"fused": "", "text": "Text ", "numeric": "Numeric "}
_ORD = {1: "1st", 2: "2nd"}


def grouped_ols_report(F, index_map, labels) -> GroupedOls:
    """Fit the at-risk label on every feature coordinate, then average within (window size, order) groups.

    Coordinates that are constant or linear combinations of earlier ones
    cannot be estimated; they are left out of the fit and listed as dropped
    (their group keeps its full membership).
    """
    F = np.asarray(F, dtype=float)
    keep = estimable_columns(F)
    dropped = [j + 1 for j in range(F.shape[1]) if j not in set(keep)]
    names = [f"x{j + 1}" for j in keep]
    fit = ols_fit(F[:, keep], labels, names=names)
    pos = {j: i + 1 for i, j in enumerate(keep)}
    groups: dict[tuple, list[int]] = {}
    for j, ix in enumerate(index_map):
        if ix.order not in (1, 2):
            continue
        groups.setdefault((ix.modality, ix.a, ix.order), []).append(j)
    order = sorted(groups, key=lambda g: (list(_MOD).index(g[0]), g[1], g[2]))
    rows = []
    for g in order:
        members = groups[g]
        est = [pos[j] for j in members if j in pos]
        mean = lambda arr: float(np.mean(arr[est])) if est else float("nan")
        rows.append(GroupedOlsRow(
            g, f"{_MOD[g[0]]}Window Size {g[1]}, {_ORD[g[2]]} order",
            [j + 1 for j in members], [j + 1 for j in members if j in pos],
            mean(fit.coef), mean(fit.std_err), mean(fit.p_value),
        ))
    return GroupedOls(fit, rows, dropped)
