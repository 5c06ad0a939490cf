"""Longitudinal student records: domain types, CSV ingestion and period summaries."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

DEFAULT_PERIODS = 6
DEFAULT_SUBJECTS = ("Chinese", "Mathematics", "English")
NO_BEHAVIOR_TEXT = "During this period, no behaviors were recorded."

STUDENT_HEADER = ["student_id", "label"]
SCORE_HEADER = ["student_id", "subject", "period", "raw_score", "max_score", "rank", "class_size"]
EVENT_HEADER = ["student_id", "period", "category", "subtype", "count", "description"]


class DataError(ValueError):
    """Raised when input records violate the file contract or a type invariant."""


class Category(str, Enum):
    ACTIVITY = "activity"
    PUNISHMENT = "punishment"
    REWARD = "reward"
    ABSENCE = "absence"


@dataclass(frozen=True)
class BehaviorEvent:
    student_id: str
    period: int
    category: Category
    subtype: str
    count: int = 1
    description: str = ""

    def __post_init__(self):
        if not isinstance(self.category, Category):
            try:
                object.__setattr__(self, "category", Category(self.category))
            except ValueError:
                raise DataError(f"unknown category {self.category!r}") from None
        if self.period < 1:
            raise DataError(f"period out of range: {self.period}")
        if self.count < 0:
            raise DataError(f"negative event count: {self.count}")


@dataclass(frozen=True)
class ExamEntry:
    student_id: str
    subject: str
    period: int
    raw_score: float
    max_score: float
    rank: int
    class_size: int

    def __post_init__(self):
        if self.period < 1:
            raise DataError(f"period out of range: {self.period}")
        if not self.max_score > 0:
            raise DataError(f"max_score must be positive, got {self.max_score}")
        if not 0 <= self.raw_score <= self.max_score:
            raise DataError(f"raw_score {self.raw_score} outside [0, {self.max_score}]")
        if not 1 <= self.rank <= self.class_size:
            raise DataError(f"rank {self.rank} outside [1, class_size={self.class_size}]")


@dataclass
class StudentRecord:
    student_id: str
    exams: list[ExamEntry] = field(default_factory=list)
    events: list[BehaviorEvent] = field(default_factory=list)
    label: int | None = None

    def exam(self, subject: str, period: int) -> ExamEntry | None:
        for e in self.exams:
            if e.subject == subject and e.period == period:
                return e
        return None

    def events_in(self, period: int) -> list[BehaviorEvent]:
        return [e for e in self.events if e.period == period]


@dataclass
class Cohort:
    students: list[StudentRecord]
    periods: int = DEFAULT_PERIODS
    subjects: tuple[str, ...] = DEFAULT_SUBJECTS

    def __post_init__(self):
        self.subjects = tuple(self.subjects)
        validate_cohort(self)

    def __len__(self):
        return len(self.students)

    def by_id(self) -> dict[str, StudentRecord]:
        return {s.student_id: s for s in self.students}

    @property
    def labels(self) -> list[int | None]:
        return [s.label for s in self.students]

    def subset(self, indices: Iterable[int]) -> "Cohort":
        return Cohort([self.students[i] for i in indices], self.periods, self.subjects)


@dataclass(frozen=True)
class PeriodSummary:
    student_id: str
    period: int
    text: str


def validate_cohort(cohort: Cohort) -> None:
    if cohort.periods < 1:
        raise DataError(f"periods must be positive, got {cohort.periods}")
    seen: set[str] = set()
    for s in cohort.students:
        if s.student_id in seen:
            raise DataError(f"duplicate student_id {s.student_id!r}")
        seen.add(s.student_id)
        if s.label not in (None, 0, 1):
            raise DataError(f"label must be 0, 1 or empty for {s.student_id!r}")
        cells: set[tuple[str, int]] = set()
        for e in s.exams:
            if e.student_id != s.student_id:
                raise DataError(f"exam for {e.student_id!r} attached to {s.student_id!r}")
            if e.subject not in cohort.subjects:
                raise DataError(f"unknown subject {e.subject!r}")
            if e.period > cohort.periods:
                raise DataError(f"period out of range: {e.period} > {cohort.periods}")
            if (e.subject, e.period) in cells:
                raise DataError(f"duplicate exam ({s.student_id}, {e.subject}, {e.period})")
            cells.add((e.subject, e.period))
        for ev in s.events:
            if ev.student_id != s.student_id:
                raise DataError(f"event for {ev.student_id!r} attached to {s.student_id!r}")
            if ev.period > cohort.periods:
                raise DataError(f"period out of range: {ev.period} > {cohort.periods}")


# -- CSV ingestion -----------------------------------------------------------


def _read_rows(path: Path, header: Sequence[str]):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing input file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected header {','.join(header)}") from None
        if [c.strip() for c in first] != list(header):
            raise DataError(f"{path}:1: bad header {first!r}, expected {list(header)!r}")
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}:{reader.line_num}: malformed row, expected {len(header)} fields, got {len(row)}"
                )
            yield reader.line_num, dict(zip(header, row))


def _parse_int(value: str, what: str, where: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise DataError(f"{where}: malformed row, {what}={value!r} is not an integer") from None


def _parse_float(value: str, what: str, where: str) -> float:
    try:
        x = float(value)
    except ValueError:
        raise DataError(f"{where}: malformed row, {what}={value!r} is not a number") from None
    if not math.isfinite(x):
        raise DataError(f"{where}: malformed row, {what} is not finite")
    return x


def load_cohort(
    students_path,
    scores_path,
    events_path,
    periods: int = DEFAULT_PERIODS,
    subjects: Sequence[str] = DEFAULT_SUBJECTS,
) -> Cohort:
    """Read the three cohort CSVs into a validated :class:`Cohort`.

    Exam cells that are absent from ``scores.csv`` are simply missing; the
    numeric preprocessing step imputes them.
    """
    subjects = tuple(subjects)
    students: dict[str, StudentRecord] = {}
    for line, row in _read_rows(students_path, STUDENT_HEADER):
        where = f"{students_path}:{line}"
        sid = row["student_id"].strip()
        if not sid:
            raise DataError(f"{where}: malformed row, empty student_id")
        if sid in students:
            raise DataError(f"{where}: duplicate student_id {sid!r}")
        raw = row["label"].strip()
        if raw == "":
            label = None
        elif raw in ("0", "1"):
            label = int(raw)
        else:
            raise DataError(f"{where}: malformed row, label {raw!r} not in {{0,1,empty}}")
        students[sid] = StudentRecord(sid, label=label)

    seen_cells: set[tuple[str, str, int]] = set()
    for line, row in _read_rows(scores_path, SCORE_HEADER):
        where = f"{scores_path}:{line}"
        sid = row["student_id"].strip()
        if sid not in students:
            raise DataError(f"{where}: unknown student_id {sid!r}")
        subject = row["subject"].strip()
        if subject not in subjects:
            raise DataError(f"{where}: unknown subject {subject!r}")
        period = _parse_int(row["period"], "period", where)
        if not 1 <= period <= periods:
            raise DataError(f"{where}: period out of range: {period} not in [1, {periods}]")
        key = (sid, subject, period)
        if key in seen_cells:
            raise DataError(f"{where}: duplicate (student, subject, period) {key}")
        seen_cells.add(key)
        rank = _parse_int(row["rank"], "rank", where)
        class_size = _parse_int(row["class_size"], "class_size", where)
        if rank > class_size:
            raise DataError(f"{where}: rank {rank} > class_size {class_size}")
        try:
            entry = ExamEntry(
                sid,
                subject,
                period,
                _parse_float(row["raw_score"], "raw_score", where),
                _parse_float(row["max_score"], "max_score", where),
                rank,
                class_size,
            )
        except DataError as exc:
            raise DataError(f"{where}: {exc}") from None
        students[sid].exams.append(entry)

    for line, row in _read_rows(events_path, EVENT_HEADER):
        where = f"{events_path}:{line}"
        sid = row["student_id"].strip()
        if sid not in students:
            raise DataError(f"{where}: unknown student_id {sid!r}")
        period = _parse_int(row["period"], "period", where)
        if not 1 <= period <= periods:
            raise DataError(f"{where}: period out of range: {period} not in [1, {periods}]")
        category = row["category"].strip()
        if category not in {c.value for c in Category}:
            raise DataError(f"{where}: unknown category {category!r}")
        count = _parse_int(row["count"], "count", where)
        if count < 0:
            raise DataError(f"{where}: malformed row, negative count {count}")
        students[sid].events.append(
            BehaviorEvent(sid, period, Category(category), row["subtype"].strip(), count, row["description"])
        )

    return Cohort(list(students.values()), periods, subjects)


def load_cohort_dir(directory, periods: int = DEFAULT_PERIODS, subjects: Sequence[str] = DEFAULT_SUBJECTS) -> Cohort:
    d = Path(directory)
    return load_cohort(d / "students.csv", d / "scores.csv", d / "events.csv", periods, subjects)


def _fmt_num(x: float) -> str:
    return repr(float(x))


def write_cohort(cohort: Cohort, directory) -> dict[str, Path]:
    """Write ``students.csv``, ``scores.csv`` and ``events.csv`` into *directory*."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {name: d / f"{name}.csv" for name in ("students", "scores", "events")}
    with paths["students"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STUDENT_HEADER)
        for s in cohort.students:
            w.writerow([s.student_id, "" if s.label is None else s.label])
    with paths["scores"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_HEADER)
        for s in cohort.students:
            for e in s.exams:
                w.writerow([
                    e.student_id, e.subject, e.period,
                    _fmt_num(e.raw_score), _fmt_num(e.max_score), e.rank, e.class_size,
                ])
    with paths["events"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_HEADER)
        for s in cohort.students:
            for ev in s.events:
                w.writerow([ev.student_id, ev.period, ev.category.value, ev.subtype, ev.count, ev.description])
    return paths


# -- period text -------------------------------------------------------------

# clause order follows the school's record template: absences, rewards,
# punishments, activities
_CLAUSES = (
    (Category.ABSENCE, "was absent {n} times, the reasons including {items}"),
    (Category.REWARD, "received {n} rewards for reasons such as {items}"),
    (Category.PUNISHMENT, "faced {n} punishments for reasons such as {items}"),
    (Category.ACTIVITY, "participated in {n} activities, including {items}"),
)


def _event_label(ev: BehaviorEvent) -> str:
    desc = ev.description.strip()
    return f"{ev.subtype} ({desc})" if desc else ev.subtype


def summarize_period(events: Sequence[BehaviorEvent]) -> PeriodSummary:
    """Render one student-period's events as a single paragraph.

    The output depends only on the multiset of events: counts are summed per
    category and labels are listed once each in lexicographic order.
    """
    if not events:
        return PeriodSummary("", 0, NO_BEHAVIOR_TEXT)
    ids = {e.student_id for e in events}
    periods = {e.period for e in events}
    if len(ids) > 1 or len(periods) > 1:
        raise DataError(f"summarize_period needs one student-period, got ids={sorted(ids)} periods={sorted(periods)}")
    counts: dict[Category, int] = defaultdict(int)
    labels: dict[Category, set[str]] = defaultdict(set)
    for ev in events:
        counts[ev.category] += ev.count
        labels[ev.category].add(_event_label(ev))
    parts = []
    for cat, template in _CLAUSES:
        if cat in labels:
            parts.append(template.format(n=counts[cat], items=", ".join(sorted(labels[cat]))))
    sid, period = ids.pop(), periods.pop()
    return PeriodSummary(sid, period, "During this period, the student " + "; ".join(parts) + ".")


def period_summaries(record: StudentRecord, periods: int) -> list[PeriodSummary]:
    out = []
    for p in range(1, periods + 1):
        s = summarize_period(record.events_in(p))
        out.append(PeriodSummary(record.student_id, p, s.text))
    return out
