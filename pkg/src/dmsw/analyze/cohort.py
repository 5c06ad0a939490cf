"""Conditional dropout rates for behavior patterns (absentee spikes, rewards, severe punishments)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..preprocess import relative_score
from ..records import Category, Cohort, StudentRecord

REWARD_GROUPS = ("academic competition", "academic attitude", "good behavior")
PUNISHMENT_KEYWORDS = {
    "academic": ("assignment", "homework", "tardiness", "inattentive", "academic"),
    "misbehavior": ("vandalism", "property", "misbehavior", "damage"),
    "dishonesty": ("plagiarism", "forg", "cheating", "dishonest"),
    "infringement": ("abuse", "harass", "touching", "bully", "infringement"),
}


@dataclass
class StudentProfile:
    student_id: str
    label: int | None
    absences: np.ndarray          # (P,) absence counts
    mean_score: np.ndarray        # (P,) mean relative score over observed subjects, nan if none
    reward_subtypes: set[str] = field(default_factory=set)
    severe_punishments: set[str] = field(default_factory=set)
    has_severe_punishment: bool = False


def punishment_type(text: str) -> str | None:
    low = text.lower()
    for kind, words in PUNISHMENT_KEYWORDS.items():
        if any(w in low for w in words):
            return kind
    return None


def profile(record: StudentRecord, periods: int) -> StudentProfile:
    absences = np.zeros(periods)
    sums = np.zeros(periods)
    counts = np.zeros(periods)
    for e in record.exams:
        sums[e.period - 1] += relative_score(e.raw_score, e.max_score)
        counts[e.period - 1] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    rewards, severe = set(), set()
    has_severe = False
    for ev in record.events:
        if ev.category is Category.ABSENCE:
            absences[ev.period - 1] += ev.count
        elif ev.category is Category.REWARD and ev.count > 0:
            rewards.add(ev.subtype.strip().lower())
        elif ev.category is Category.PUNISHMENT and "severe" in ev.subtype.lower() and ev.count > 0:
            has_severe = True
            kind = punishment_type(ev.description) or punishment_type(ev.subtype)
            if kind:
                severe.add(kind)
    return StudentProfile(record.student_id, record.label, absences, mean, rewards, severe, has_severe)


def _window_mean(x, lo, hi):
    lo, hi = max(lo, 1), min(hi, len(x))
    if lo > hi:
        return np.nan
    vals = x[lo - 1: hi]
    vals = vals[~np.isnan(vals)]
    return float(vals.mean()) if vals.size else np.nan


def absentee_spike_with_decline(prof: StudentProfile, spike: float = 5, decline: float = 0.30,
                                width: int = 1) -> bool:
    """Absences rise by more than ``spike`` within one or two periods and the mean score drops by >= ``decline``.

    The drop compares the ``width`` periods ending at the pre-spike baseline
    period with the ``width`` periods starting at the spike period.
    """
    a = prof.absences
    P = len(a)
    for t in range(2, P + 1):
        for base in (t - 1, t - 2):
            if base < 1 or not a[t - 1] - a[base - 1] > spike:
                continue
            pre = _window_mean(prof.mean_score, base - width + 1, base)
            post = _window_mean(prof.mean_score, t, t + width - 1)
            if np.isfinite(pre) and np.isfinite(post) and pre > 0 and (pre - post) / pre >= decline - 1e-12:
                return True
    return False


@dataclass
class Rule:
    label: str
    group: str
    predicate: Callable[[StudentProfile], bool]
    reference: str | None = None   # label of the row the change is measured against; None = base rate


def default_rules(spike: float = 5, decline: float = 0.30, width: int = 1) -> list[Rule]:
    r1 = lambda p: absentee_spike_with_decline(p, spike, decline, width)
    rules = [Rule("R1: absentee spike with academic decline", "spike", r1)]
    rules.append(Rule("R1 & no rewards", "rewards", lambda p: r1(p) and not p.reward_subtypes))
    for kind in REWARD_GROUPS:
        rules.append(Rule(f"R1 & {kind} reward", "rewards",
                          lambda p, k=kind: r1(p) and k in p.reward_subtypes, "R1 & no rewards"))
    rules.append(Rule("R3: severe punishment (all)", "punishments", lambda p: p.has_severe_punishment))
    for kind in PUNISHMENT_KEYWORDS:
        rules.append(Rule(f"R3 & {kind} punishment", "punishments",
                          lambda p, k=kind: k in p.severe_punishments, "R3: severe punishment (all)"))
    return rules


@dataclass
class CohortStatsRow:
    condition: str
    group: str
    population: int
    dropouts: int
    rate: float
    reference: str
    change: float

    def as_dict(self) -> dict:
        return dict(vars(self))


@dataclass
class CohortStatsReport:
    n_labeled: int
    n_excluded_unlabeled: int
    base_dropouts: int
    base_rate: float
    rows: list[CohortStatsRow]
    omitted: list[str]

    def row(self, condition: str) -> CohortStatsRow | None:
        return next((r for r in self.rows if r.condition == condition), None)

    def as_dict(self) -> dict:
        return {"n_labeled": self.n_labeled, "n_excluded_unlabeled": self.n_excluded_unlabeled,
                "base_dropouts": self.base_dropouts, "base_rate": self.base_rate,
                "rows": [r.as_dict() for r in self.rows], "omitted": list(self.omitted)}


def cohort_stats(cohort: Cohort, rules: list[Rule] | None = None) -> CohortStatsReport:
    """Dropout rate within each rule's population, with the change against its reference row.

    Unlabeled students are excluded and counted. Conditions nobody satisfies
    are omitted from the rows and listed by name.
    """
    rules = default_rules() if rules is None else rules
    profiles = [profile(s, cohort.periods) for s in cohort.students if s.label is not None]
    excluded = len(cohort.students) - len(profiles)
    n = len(profiles)
    drop = sum(p.label for p in profiles)
    base = drop / n if n else float("nan")
    rates: dict[str, float] = {}
    rows, omitted = [], []
    for rule in rules:
        members = [p for p in profiles if rule.predicate(p)]
        if not members:
            omitted.append(rule.label)
            continue
        d = sum(p.label for p in members)
        rate = d / len(members)
        rates[rule.label] = rate
        ref_name = rule.reference or "base rate"
        ref_rate = base if rule.reference is None else rates.get(rule.reference, float("nan"))
        rows.append(CohortStatsRow(rule.label, rule.group, len(members), d, rate, ref_name, rate - ref_rate))
    return CohortStatsReport(n, excluded, drop, base, rows, omitted)
