"""Reading raw answer logs into per-student sequences, corpus statistics and
student-level cross-validation folds."""
from __future__ import annotations

import csv
import io
import json
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

MIN_SEQUENCE_LENGTH = 4


class ParseError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ValidationError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class InteractionRecord:
    student_id: str
    question_id: str
    kc_ids: tuple
    correct: int
    attempts: int
    order_index: int

    def __post_init__(self):
        if self.correct not in (0, 1):
            raise ValidationError(f"correct must be 0 or 1, got {self.correct!r}")
        if self.attempts < 1:
            raise ValidationError(f"attempts must be >= 1, got {self.attempts!r}")
        if not self.kc_ids:
            raise ValidationError(f"question {self.question_id!r} has an empty KC list")
        if self.order_index < 0:
            raise ValidationError(f"order index must be nonnegative, got {self.order_index!r}")


@dataclass(frozen=True)
class StudentSequence:
    student_id: str
    records: tuple

    def __post_init__(self):
        orders = [r.order_index for r in self.records]
        if any(b <= a for a, b in zip(orders, orders[1:])):
            raise ValidationError(f"student {self.student_id!r}: records not strictly ordered")

    def __len__(self):
        return len(self.records)

    @property
    def questions(self):
        return [r.question_id for r in self.records]

    @property
    def answers(self):
        return [r.correct for r in self.records]


@dataclass(frozen=True)
class ColumnMapping:
    """Names of the columns holding each field of a raw log.

    ``attempts`` may be ``None``, in which case the attempt count of a record
    is derived from how often the student has already seen that question.
    ``scaffold`` optionally names a boolean column; flagged rows are dropped.
    With ``deduplicate`` set, repeated (student, order) rows keep the first
    occurrence instead of raising.
    """

    student: str = "student_id"
    question: str = "question_id"
    kcs: str = "kc_ids"
    correct: str = "correct"
    order: str = "order_index"
    attempts: str | None = "attempts"
    scaffold: str | None = None
    deduplicate: bool = False
    delimiter: str = ","
    kc_separator: str = ";"

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown column mapping field(s): {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class DatasetStats:
    n_students: int
    n_questions: int
    n_skills: int
    n_logs: int
    questions_per_skill: float
    skills_per_question: float

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class FoldSplit:
    fold_index: int
    train_ids: frozenset = field(repr=False)
    test_ids: frozenset = field(repr=False)


_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n", ""}


def _parse_int(value, what, line):
    try:
        f = float(value)
    except (TypeError, ValueError):
        raise ParseError(f"cannot parse {what} {value!r} as a number", line) from None
    if not f.is_integer():
        raise ParseError(f"{what} {value!r} is not an integer", line)
    return int(f)


def _parse_flag(value, what, line):
    v = (value or "").strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ParseError(f"cannot parse {what} {value!r} as a boolean", line)


def _read_text(source):
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        return Path(source).read_text(encoding="utf-8")
    if isinstance(source, str):
        return source
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if hasattr(source, "read"):
        data = source.read()
        return data.decode("utf-8") if isinstance(data, bytes) else data
    raise TypeError(f"cannot read log data from {type(source).__name__}")


def parse_log(source, mapping=None, min_length=MIN_SEQUENCE_LENGTH):
    """Parse a delimiter-separated log with a header row.

    ``source`` is a path, bytes, or a file-like object.  Returns the kept
    sequences sorted by student id; students with fewer than ``min_length``
    records are discarded.
    """
    mapping = mapping or ColumnMapping()
    reader = csv.reader(io.StringIO(_read_text(source)), delimiter=mapping.delimiter)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty input, expected a header row", 1) from None
    header = [h.strip() for h in header]
    required = [mapping.student, mapping.question, mapping.kcs, mapping.correct, mapping.order]
    optional = [c for c in (mapping.attempts, mapping.scaffold) if c is not None]
    missing = [c for c in required + ([mapping.scaffold] if mapping.scaffold else []) if c not in header]
    if missing:
        raise ParseError(f"missing column(s) {missing} in header {header}", 1)
    col = {name: header.index(name) for name in required + optional if name in header}
    has_attempts = mapping.attempts is not None and mapping.attempts in header

    rows = defaultdict(dict)  # student -> order -> (line, fields)
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", line_no)
        if mapping.scaffold and _parse_flag(row[col[mapping.scaffold]], "scaffold flag", line_no):
            continue
        student = row[col[mapping.student]].strip()
        question = row[col[mapping.question]].strip()
        if not student or not question:
            raise ParseError("empty student or question id", line_no)
        kcs = tuple(sorted({k.strip() for k in row[col[mapping.kcs]].split(mapping.kc_separator) if k.strip()}))
        if not kcs:
            raise ValidationError(f"empty KC list for question {question!r}", line_no)
        correct = _parse_int(row[col[mapping.correct]], "correctness", line_no)
        if correct not in (0, 1):
            raise ValidationError(f"correctness must be 0 or 1, got {correct}", line_no)
        order = _parse_int(row[col[mapping.order]], "order index", line_no)
        if order < 0:
            raise ValidationError(f"order index must be nonnegative, got {order}", line_no)
        attempts = None
        if has_attempts:
            attempts = _parse_int(row[col[mapping.attempts]], "attempts", line_no)
            if attempts < 1:
                raise ValidationError(f"attempts must be >= 1, got {attempts}", line_no)
        if order in rows[student]:
            if mapping.deduplicate:
                continue
            first = rows[student][order][0]
            raise ValidationError(
                f"duplicate order index {order} for student {student!r} (first seen on line {first})", line_no
            )
        rows[student][order] = (line_no, question, kcs, correct, attempts)

    sequences = []
    for student in sorted(rows):
        seen = Counter()
        records = []
        for order in sorted(rows[student]):
            _, question, kcs, correct, attempts = rows[student][order]
            seen[question] += 1
            records.append(InteractionRecord(
                student, question, kcs, correct, attempts if attempts is not None else seen[question], order
            ))
        if len(records) >= min_length:
            sequences.append(StudentSequence(student, tuple(records)))
    return sequences


def derive_attempts(records):
    """Attempt counts as 1 + earlier records of the same question."""
    seen = Counter()
    out = []
    for r in records:
        seen[r.question_id] += 1
        out.append(seen[r.question_id])
    return out


# ----------------------------------------------------------------------------
# canonical one-object-per-line format

def sequence_to_dict(seq):
    return {
        "student_id": seq.student_id,
        "records": [
            {
                "question_id": r.question_id,
                "kc_ids": list(r.kc_ids),
                "correct": r.correct,
                "attempts": r.attempts,
                "order_index": r.order_index,
            }
            for r in seq.records
        ],
    }


def sequence_from_dict(d):
    sid = str(d["student_id"])
    records = tuple(
        InteractionRecord(
            sid, str(r["question_id"]), tuple(str(k) for k in r["kc_ids"]),
            int(r["correct"]), int(r["attempts"]), int(r["order_index"]),
        )
        for r in d["records"]
    )
    return StudentSequence(sid, records)


def write_canonical(sequences, path):
    with open(path, "w", encoding="utf-8") as fh:
        for seq in sequences:
            fh.write(json.dumps(sequence_to_dict(seq), sort_keys=True) + "\n")


def read_canonical(path):
    sequences = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                sequences.append(sequence_from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"bad canonical record: {exc}", line_no) from None
    return sequences


# ----------------------------------------------------------------------------

def question_kcs(sequences):
    """Map question id -> sorted tuple of every KC it was tagged with."""
    tags = defaultdict(set)
    for seq in sequences:
        for r in seq.records:
            tags[r.question_id].update(r.kc_ids)
    return {q: tuple(sorted(k)) for q, k in tags.items()}


def compute_stats(sequences):
    if not sequences:
        raise ValueError("compute_stats: no sequences")
    tags = question_kcs(sequences)
    skills = set().union(*tags.values())
    n_q, n_k = len(tags), len(skills)
    return DatasetStats(
        n_students=len({s.student_id for s in sequences}),
        n_questions=n_q,
        n_skills=n_k,
        n_logs=sum(len(s) for s in sequences),
        questions_per_skill=n_q / n_k,
        skills_per_question=sum(len(k) for k in tags.values()) / n_q,
    )


def make_folds(sequences, k=5, seed=0):
    """Partition students into ``k`` test folds of near-equal size."""
    if k < 2:
        raise ValueError(f"need at least 2 folds, got {k}")
    students = sorted({s.student_id for s in sequences})
    if k > len(students):
        raise ValueError(f"cannot make {k} folds from {len(students)} students")
    order = np.random.default_rng(seed).permutation(len(students))
    chunks = np.array_split(order, k)
    everyone = frozenset(students)
    folds = []
    for i, chunk in enumerate(chunks):
        test = frozenset(students[j] for j in chunk)
        folds.append(FoldSplit(i, everyone - test, test))
    return folds


def subsample_students(sequences, n, seed=0):
    """Keep ``n`` randomly chosen students (all of them if there are fewer)."""
    if len(sequences) <= n:
        return list(sequences)
    keep = np.random.default_rng(seed).choice(len(sequences), size=n, replace=False)
    return [sequences[i] for i in sorted(keep)]


def select(sequences, student_ids):
    return [s for s in sequences if s.student_id in student_ids]
