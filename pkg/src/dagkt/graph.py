"""Question-KC graph construction.

Questions are linked to the KCs they are tagged with.  Two questions are also
linked when students tend to answer them the same way: for every student the
first answer to ``q_i`` is used as a "prediction" of the later first answer to
``q_j``, and the precision/recall of that predictor (Laplace-smoothed) are
combined into an F1 score.  The similarity of a pair is the mean of the F1
scores for both orders.
"""
from __future__ import annotations

import hashlib
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ingest import question_kcs

DEFAULT_OMEGA = 0.7
DEFAULT_LAMBDA = 0.01
DEFAULT_MIN_SUPPORT = 3


@dataclass(frozen=True)
class PairCounts:
    """Outcome counts for an ordered question pair; ``count_ab`` means the
    earlier question was answered ``a`` and the later one ``b``."""

    count_11: int = 0
    count_10: int = 0
    count_01: int = 0
    count_00: int = 0

    @property
    def total(self):
        return self.count_11 + self.count_10 + self.count_01 + self.count_00

    def __add__(self, other):
        return PairCounts(
            self.count_11 + other.count_11,
            self.count_10 + other.count_10,
            self.count_01 + other.count_01,
            self.count_00 + other.count_00,
        )


ZERO_COUNTS = PairCounts()


def first_occurrences(seq):
    """(question, correct) for the first record of each distinct question."""
    seen = set()
    out = []
    for r in seq.records:
        if r.question_id not in seen:
            seen.add(r.question_id)
            out.append((r.question_id, r.correct))
    return out


def accumulate_pair_counts(sequences):
    """Ordered-pair outcome counts over all students.

    Vectorised per student: pairs (i, j), i < j, of first occurrences are
    encoded as integer keys and tallied with ``np.unique``.
    """
    qindex = {}
    keys = []
    for seq in sequences:
        firsts = first_occurrences(seq)
        if len(firsts) < 2:
            continue
        q = np.array([qindex.setdefault(qid, len(qindex)) for qid, _ in firsts], dtype=np.int64)
        a = np.array([c for _, c in firsts], dtype=np.int64)
        i, j = np.triu_indices(len(firsts), k=1)
        keys.append((q[i] * 4 + a[i] * 2 + a[j], q[j]))
    if not keys:
        return {}
    n = len(qindex)
    first = np.concatenate([k[0] for k in keys])
    second = np.concatenate([k[1] for k in keys])
    uniq, counts = np.unique(first * n + second, return_counts=True)
    names = list(qindex)
    table = defaultdict(lambda: [0, 0, 0, 0])
    for key, c in zip(uniq.tolist(), counts.tolist()):
        packed, qj = divmod(key, n)
        qi, cell = divmod(packed, 4)
        table[(names[qi], names[qj])][cell] = c
    # cell = 2 * a_i + a_j, so index 3 is (1,1), 2 is (1,0), 1 is (0,1)
    return {pair: PairCounts(c[3], c[2], c[1], c[0]) for pair, c in table.items()}


def merge_pair_counts(*maps):
    """Cell-wise sum of partial count maps (e.g. per-student shards)."""
    out = {}
    for m in maps:
        for pair, c in m.items():
            out[pair] = out.get(pair, ZERO_COUNTS) + c
    return out


def f1_directed(counts, lam=DEFAULT_LAMBDA):
    if lam <= 0:
        raise ValueError(f"smoothing must be positive, got {lam}")
    precision = (counts.count_11 + lam) / (counts.count_01 + counts.count_11 + lam)
    recall = (counts.count_11 + lam) / (counts.count_10 + counts.count_11 + lam)
    return 2.0 * precision * recall / (precision + recall)


def similarity(q1, q2, counts_map, lam=DEFAULT_LAMBDA):
    forward = f1_directed(counts_map.get((q1, q2), ZERO_COUNTS), lam)
    reverse = f1_directed(counts_map.get((q2, q1), ZERO_COUNTS), lam)
    return (forward + reverse) / 2.0


def _edge_key(a, b):
    return (a, b) if a <= b else (b, a)


@dataclass
class QKGraph:
    questions: list
    kcs: list
    qk_edges: set
    qq_edges: dict  # (a, b) with a <= b -> (sim, support)
    omega: float = DEFAULT_OMEGA
    lam: float = DEFAULT_LAMBDA
    c_min: int = DEFAULT_MIN_SUPPORT
    _kcs_of: dict = field(default=None, repr=False)
    _similar: dict = field(default=None, repr=False)

    def __post_init__(self):
        kcs_of, similar = defaultdict(list), defaultdict(list)
        for q, k in sorted(self.qk_edges):
            kcs_of[q].append(k)
        for a, b in sorted(self.qq_edges):
            similar[a].append(b)
            similar[b].append(a)
        self._kcs_of = {q: tuple(v) for q, v in kcs_of.items()}
        self._similar = {q: tuple(sorted(v)) for q, v in similar.items()}

    def kcs_of(self, question):
        return self._kcs_of.get(question, ())

    def similar_to(self, question):
        return self._similar.get(question, ())

    def sim(self, a, b):
        return self.qq_edges[_edge_key(a, b)][0]

    def has_edge(self, a, b):
        return _edge_key(a, b) in self.qq_edges

    def edge_set(self):
        return set(self.qq_edges)

    def without_similarity(self):
        return QKGraph(list(self.questions), list(self.kcs), set(self.qk_edges), {}, self.omega, self.lam, self.c_min)

    def to_tsv(self):
        lines = [
            "# dagkt question-kc graph",
            f"# lambda={self.lam!r}",
            f"# omega={self.omega!r}",
            f"# c_min={self.c_min}",
            "[question_kc]",
            "question\tkc",
        ]
        lines += [f"{q}\t{k}" for q, k in sorted(self.qk_edges)]
        lines += ["[question_question]", "q1\tq2\tsim\tsupport"]
        lines += [f"{a}\t{b}\t{s!r}\t{n}" for (a, b), (s, n) in sorted(self.qq_edges.items())]
        return "\n".join(lines) + "\n"

    def provenance_hash(self):
        return hashlib.sha256(self.to_tsv().encode("utf-8")).hexdigest()

    def save(self, path):
        Path(path).write_text(self.to_tsv(), encoding="utf-8")

    @classmethod
    def from_tsv(cls, text):
        meta, section, header_pending = {}, None, False
        qk, qq = set(), {}
        for raw in text.splitlines():
            line = raw.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                if "=" in line:
                    key, value = line[1:].strip().split("=", 1)
                    meta[key] = value
                continue
            if line.startswith("["):
                section, header_pending = line.strip("[]"), True
                continue
            if header_pending:
                header_pending = False
                continue
            parts = line.split("\t")
            if section == "question_kc":
                qk.add((parts[0], parts[1]))
            elif section == "question_question":
                qq[_edge_key(parts[0], parts[1])] = (float(parts[2]), int(parts[3]))
        questions = sorted({q for q, _ in qk})
        kcs = sorted({k for _, k in qk})
        return cls(
            questions, kcs, qk, qq,
            omega=float(meta.get("omega", DEFAULT_OMEGA)),
            lam=float(meta.get("lambda", DEFAULT_LAMBDA)),
            c_min=int(meta.get("c_min", DEFAULT_MIN_SUPPORT)),
        )

    @classmethod
    def load(cls, path):
        return cls.from_tsv(Path(path).read_text(encoding="utf-8"))


def build_graph(sequences, omega=DEFAULT_OMEGA, lam=DEFAULT_LAMBDA, c_min=DEFAULT_MIN_SUPPORT, counts=None):
    # omega = 1 is accepted and simply admits no similarity edges
    if not 0.0 <= omega <= 1.0:
        raise ValueError(f"omega must lie in [0, 1], got {omega}")
    if c_min < 1:
        raise ValueError(f"minimum support must be >= 1, got {c_min}")
    tags = question_kcs(sequences)
    qk = {(q, k) for q, ks in tags.items() for k in ks}
    counts = accumulate_pair_counts(sequences) if counts is None else counts
    qq = {}
    for a, b in {_edge_key(*pair) for pair in counts}:
        if a == b:
            continue
        support = counts.get((a, b), ZERO_COUNTS).total + counts.get((b, a), ZERO_COUNTS).total
        if support < c_min:
            continue
        s = similarity(a, b, counts, lam)
        if s > omega:
            qq[(a, b)] = (s, support)
    return QKGraph(sorted(tags), sorted({k for _, k in qk}), qk, qq, omega, lam, c_min)


# ----------------------------------------------------------------------------
# difficulty and attempts

class DifficultyTable:
    """Per-question accuracy over the corpus and difficulty ``1 - accuracy``."""

    def __init__(self, accuracy):
        self.accuracy = dict(accuracy)

    def __contains__(self, question):
        return question in self.accuracy

    def __len__(self):
        return len(self.accuracy)

    def difficulty(self, question):
        try:
            return 1.0 - self.accuracy[question]
        except KeyError:
            raise LookupError(f"no difficulty recorded for question {question!r}") from None

    def mean_difficulty(self):
        return 1.0 - float(np.mean(list(self.accuracy.values())))

    def to_tsv(self):
        rows = ["question\taccuracy\tdifficulty"]
        rows += [f"{q}\t{a!r}\t{1.0 - a!r}" for q, a in sorted(self.accuracy.items())]
        return "\n".join(rows) + "\n"

    @classmethod
    def from_tsv(cls, text):
        rows = [line.split("\t") for line in text.splitlines()[1:] if line]
        return cls({q: float(a) for q, a, _ in rows})


def compute_difficulty(sequences):
    right, total = defaultdict(int), defaultdict(int)
    for seq in sequences:
        for r in seq.records:
            right[r.question_id] += r.correct
            total[r.question_id] += 1
    return DifficultyTable({q: right[q] / total[q] for q in total})


class AttemptTable:
    """Attempts per (student, question, occurrence), occurrence counted from 1."""

    def __init__(self, entries):
        self.entries = dict(entries)

    def __len__(self):
        return len(self.entries)

    def get(self, student, question, occurrence=1):
        return self.entries[(student, question, occurrence)]

    def pairs(self):
        return {(s, q) for s, q, _ in self.entries}

    def max_attempts(self):
        return max(self.entries.values())

    def to_tsv(self):
        rows = ["student\tquestion\toccurrence\tattempts"]
        rows += [f"{s}\t{q}\t{o}\t{m}" for (s, q, o), m in sorted(self.entries.items())]
        return "\n".join(rows) + "\n"


def compute_attempts(sequences):
    entries = {}
    for seq in sequences:
        occurrence = defaultdict(int)
        for r in seq.records:
            occurrence[r.question_id] += 1
            entries[(seq.student_id, r.question_id, occurrence[r.question_id])] = r.attempts
    return AttemptTable(entries)
