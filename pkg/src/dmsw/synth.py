"""Seeded synthetic cohorts with planted behavior-change patterns.

Patterns
--------
absentee_spike_decline
    Absences jump by more than five in one late period and the mean relative
    score falls by 35-55% from that period on.
punishment_shock_decline
    A severe reprimand in a late period followed by the same kind of score drop.
reward_mitigated
    The absentee spike and score drop, plus one or two academic rewards in
    every period.
stable_control
    Slow score drift and sparse minor events.
noisy_control
    Volatile scores (including a transient dip) and stationary frequent events.

Dropout labels are drawn without replacement with pattern-dependent
priorities, so that dropouts come predominantly from the spike and shock
patterns; the label count is exactly ``round(n_students * dropout_rate)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .records import (DEFAULT_SUBJECTS, BehaviorEvent, Category, Cohort, ExamEntry,
                      StudentRecord, write_cohort)

PATTERNS = ("absentee_spike_decline", "punishment_shock_decline", "reward_mitigated",
            "stable_control", "noisy_control")
DROPOUT_CAPABLE = ("absentee_spike_decline", "punishment_shock_decline")
DEFAULT_MIX = {
    "absentee_spike_decline": 0.08,
    "punishment_shock_decline": 0.05,
    "reward_mitigated": 0.10,
    "stable_control": 0.52,
    "noisy_control": 0.25,
}
# relative chance of being picked as a dropout
_DROPOUT_PRIORITY = {
    "absentee_spike_decline": 1.0,
    "punishment_shock_decline": 1.0,
    "reward_mitigated": 0.01,
    "stable_control": 0.0005,
    "noisy_control": 0.002,
}

ABSENCE_REASONS = ("sick leave", "parental leave", "other reasons", "late", "transportation issues")
SESSIONS = ("AM", "PM", "All day")
REWARD_TYPES = ("good behavior", "merit", "academic attitude", "academic competition")
ACTIVITIES = ("sports day", "music club", "volunteer service", "debate team")
SEVERE_PUNISHMENTS = {
    "academic": "repeatedly failing to submit assignments",
    "misbehavior": "vandalism of school property",
    "dishonesty": "plagiarism and forging parental signatures",
    "infringement": "verbal abuse and harassment of a classmate",
}
MINOR_OFFENSES = ("talking in class", "uniform violation", "late homework")


@dataclass(frozen=True)
class SynthConfig:
    n_students: int = 1000
    periods: int = 6
    dropout_rate: float = 0.122
    mix: dict = field(default_factory=lambda: dict(DEFAULT_MIX))
    score_noise_sd: float = 3.0
    class_size: int = 40
    seed: int = 0

    def __post_init__(self):
        if self.n_students < 1:
            raise ValueError("n_students must be positive")
        if self.periods < 2:
            raise ValueError("periods must be >= 2")
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1], got {self.dropout_rate}")
        unknown = set(self.mix) - set(PATTERNS)
        if unknown:
            raise ValueError(f"unknown patterns in mix: {sorted(unknown)}")
        w = np.array([self.mix.get(p, 0.0) for p in PATTERNS])
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("mix weights must be non-negative and sum to 1")
        capable = sum(self.mix.get(p, 0.0) for p in DROPOUT_CAPABLE)
        if self.dropout_rate > capable + 1e-12:
            raise ValueError(
                f"infeasible mix: dropout_rate {self.dropout_rate} exceeds the weight of "
                f"dropout-capable patterns ({capable})"
            )


@dataclass
class GroundTruth:
    student_id: str
    pattern: str
    event_period: int | None
    label: int


def _pattern_counts(cfg: SynthConfig) -> list[str]:
    w = np.array([cfg.mix.get(p, 0.0) for p in PATTERNS])
    raw = w * cfg.n_students
    counts = np.floor(raw).astype(int)
    # largest remainder, ties to the earlier pattern
    order = sorted(range(len(PATTERNS)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: cfg.n_students - counts.sum()]:
        counts[i] += 1
    out = []
    for p, c in zip(PATTERNS, counts):
        out.extend([p] * int(c))
    return out


def _absences(rng, sid, period, n, many_reasons=False):
    reasons = ABSENCE_REASONS if many_reasons else ABSENCE_REASONS[:1]
    out = []
    left = n
    while left > 0:
        c = int(min(left, rng.integers(1, 4)))
        out.append(BehaviorEvent(sid, period, Category.ABSENCE, str(rng.choice(reasons)), c,
                                 str(rng.choice(SESSIONS))))
        left -= c
    return out


def _minor_events(rng, sid, period, rate):
    out = []
    if rng.random() < rate:
        kind = rng.integers(4)
        if kind == 0:
            out.extend(_absences(rng, sid, period, int(rng.integers(1, 3))))
        elif kind == 1:
            out.append(BehaviorEvent(sid, period, Category.REWARD, str(rng.choice(REWARD_TYPES[:2])), 1))
        elif kind == 2:
            out.append(BehaviorEvent(sid, period, Category.ACTIVITY, str(rng.choice(ACTIVITIES)), 1))
        else:
            out.append(BehaviorEvent(sid, period, Category.PUNISHMENT, "minor offense", 1,
                                     str(rng.choice(MINOR_OFFENSES))))
    return out


def _student(cfg: SynthConfig, index: int, pattern: str):
    rng = np.random.default_rng([cfg.seed, index])
    sid = f"S{index:05d}"
    P, S = cfg.periods, len(DEFAULT_SUBJECTS)
    ability = np.clip(rng.normal(68, 10) + rng.normal(0, 5, size=S), 25, 95)
    walk_sd = 5.0 if pattern == "noisy_control" else 1.5
    levels = np.zeros((S, P))
    levels[:, 0] = ability
    for t in range(1, P):
        levels[:, t] = levels[:, t - 1] + rng.normal(0, walk_sd, size=S)
    events: list[BehaviorEvent] = []
    event_period = None
    late = range(max(2, P // 2), P + 1)

    if pattern in ("absentee_spike_decline", "punishment_shock_decline", "reward_mitigated"):
        event_period = int(rng.choice(list(late)))
        drop = rng.uniform(0.35, 0.55)
        levels[:, event_period - 1:] *= 1.0 - drop
    if pattern == "noisy_control":
        dip = int(rng.integers(2, P + 1))
        levels[:, dip - 1] *= 1.0 - rng.uniform(0.1, 0.3)

    base_rate = {"stable_control": 0.12, "noisy_control": 0.5}.get(pattern, 0.12)
    for p in range(1, P + 1):
        events.extend(_minor_events(rng, sid, p, base_rate))
    if pattern in ("absentee_spike_decline", "reward_mitigated"):
        spike = int(rng.integers(8, 20))
        events.extend(_absences(rng, sid, event_period, spike, many_reasons=True))
        for p in range(event_period + 1, P + 1):
            events.extend(_absences(rng, sid, p, int(rng.integers(2, 8)), many_reasons=True))
    if pattern == "punishment_shock_decline":
        kind = str(rng.choice(list(SEVERE_PUNISHMENTS)))
        events.append(BehaviorEvent(sid, event_period, Category.PUNISHMENT, "severe reprimand", 1,
                                    SEVERE_PUNISHMENTS[kind]))
    if pattern == "reward_mitigated":
        # recognised throughout the year: at least one reward every period
        for p in range(1, P + 1):
            for _ in range(int(rng.integers(1, 3))):
                events.append(BehaviorEvent(sid, p, Category.REWARD, str(rng.choice(REWARD_TYPES[2:])), 1))

    scores = np.clip(levels + rng.normal(0, cfg.score_noise_sd, size=(S, P)), 0, 100)
    return sid, scores, events, event_period


def generate_cohort(cfg: SynthConfig = SynthConfig()) -> tuple[Cohort, list[GroundTruth]]:
    """Build a fully labeled cohort and the per-student pattern assignments."""
    patterns = _pattern_counts(cfg)
    assign_rng = np.random.default_rng([cfg.seed, 10**6])
    patterns = [patterns[i] for i in assign_rng.permutation(len(patterns))]
    P, subjects = cfg.periods, DEFAULT_SUBJECTS
    max_scores = assign_rng.choice([60, 80, 100, 120, 150], size=(len(subjects), P))

    built = [_student(cfg, i, pat) for i, pat in enumerate(patterns)]
    n_drop = int(round(cfg.n_students * cfg.dropout_rate))
    label_rng = np.random.default_rng([cfg.seed, 10**6 + 1])
    prio = np.array([_DROPOUT_PRIORITY[p] for p in patterns])
    # Efraimidis-Spirakis weighted sampling without replacement
    keys = np.log(label_rng.random(cfg.n_students)) / prio
    chosen = set(np.argsort(-keys, kind="stable")[:n_drop].tolist())

    raw = np.zeros((cfg.n_students, len(subjects), P))
    for i, (_, scores, _, _) in enumerate(built):
        raw[i] = np.round(scores / 100.0 * max_scores, 1)
    raw = np.minimum(raw, max_scores)

    students, truth = [], []
    for i, (sid, _, events, event_period) in enumerate(built):
        cls_lo = (i // cfg.class_size) * cfg.class_size
        cls_hi = min(cls_lo + cfg.class_size, cfg.n_students)
        exams = []
        for s, subj in enumerate(subjects):
            for p in range(P):
                peers = raw[cls_lo:cls_hi, s, p]
                rank = 1 + int(np.sum(peers > raw[i, s, p])) + int(np.sum(peers[: i - cls_lo] == raw[i, s, p]))
                exams.append(ExamEntry(sid, subj, p + 1, float(raw[i, s, p]), float(max_scores[s, p]),
                                       rank, cls_hi - cls_lo))
        label = 1 if i in chosen else 0
        students.append(StudentRecord(sid, exams, events, label))
        truth.append(GroundTruth(sid, patterns[i], event_period, label))
    return Cohort(students, P, subjects), truth


def write_synthetic(cfg: SynthConfig, directory) -> dict[str, Path]:
    """Write the three cohort CSVs plus ``patterns.csv`` (ground truth sidecar)."""
    cohort, truth = generate_cohort(cfg)
    paths = write_cohort(cohort, directory)
    side = Path(directory) / "patterns.csv"
    with side.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["student_id", "pattern", "event_period", "label"])
        for g in truth:
            w.writerow([g.student_id, g.pattern, "" if g.event_period is None else g.event_period, g.label])
    paths["patterns"] = side
    return paths
