"""Synthetic answer logs with known structure, used as a test oracle.

Each student has a latent ability, each question a latent difficulty.  An
answer is correct with probability

    sigmoid(ability - difficulty + mastery_gain * exposures - attempt_effect * (attempts - 1))

where ``exposures`` counts the student's earlier records sharing a KC with
the question.  Attempts are geometric with a success rate that falls as the
question gets harder for the student.  Questions in a planted pair share a
difficulty and a student's first answer to the second-seen member copies the
first answer to the other member.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .ingest import InteractionRecord, StudentSequence


class InfeasibleSpec(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    n_students: int = 200
    n_questions: int = 30
    n_kcs: int = 6
    max_kcs_per_question: int = 2
    planted_pairs: int = 5
    min_length: int = 20
    max_length: int = 40
    ability_scale: float = 1.5
    difficulty_scale: float = 1.5
    mastery_gain: float = 0.05
    attempt_offset: float = 1.0
    attempt_effect: float = 0.0
    max_attempts: int = 10
    difficulties: tuple | None = None   # optional explicit per-question difficulty
    abilities: tuple | None = None      # optional explicit per-student ability

    def validate(self):
        problems = []
        if self.n_students < 1 or self.n_questions < 1 or self.n_kcs < 1:
            problems.append("need at least one student, question and KC")
        if 2 * self.planted_pairs > self.n_questions:
            problems.append(f"{self.planted_pairs} disjoint pairs need {2 * self.planted_pairs} questions")
        if not 4 <= self.min_length <= self.max_length:
            problems.append("sequence lengths must satisfy 4 <= min_length <= max_length")
        if not 1 <= self.max_kcs_per_question <= self.n_kcs:
            problems.append("max_kcs_per_question must lie in [1, n_kcs]")
        if self.max_attempts < 1:
            problems.append("max_attempts must be >= 1")
        if self.difficulties is not None and len(self.difficulties) != self.n_questions:
            problems.append("difficulties must have one entry per question")
        if self.abilities is not None and len(self.abilities) != self.n_students:
            problems.append("abilities must have one entry per student")
        if problems:
            raise InfeasibleSpec("; ".join(problems))

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        for key in ("difficulties", "abilities"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())


@dataclass
class SyntheticCorpus:
    sequences: list
    planted_pairs: set            # {(qa, qb)} with qa < qb
    difficulty: dict              # question -> latent difficulty
    ability: dict                 # student -> latent ability
    question_kcs: dict
    true_prob: dict = field(repr=False)   # (student, order_index) -> P(correct)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def qname(i):
    return f"q{i:03d}"


def generate_synthetic(spec, seed=0):
    spec.validate()
    rng = np.random.default_rng(seed)
    questions = [qname(i) for i in range(spec.n_questions)]
    kcs = [f"k{i:02d}" for i in range(spec.n_kcs)]

    tags = {}
    for q in questions:
        n = rng.integers(1, spec.max_kcs_per_question + 1)
        tags[q] = tuple(sorted(rng.choice(kcs, size=n, replace=False).tolist()))

    if spec.difficulties is not None:
        diff = dict(zip(questions, map(float, spec.difficulties)))
    else:
        diff = dict(zip(questions, rng.normal(0.0, spec.difficulty_scale, spec.n_questions).tolist()))
    chosen = rng.permutation(spec.n_questions)[: 2 * spec.planted_pairs]
    pairs, partner = set(), {}
    for a, b in zip(chosen[0::2], chosen[1::2]):
        qa, qb = sorted((questions[a], questions[b]))
        pairs.add((qa, qb))
        partner[qa], partner[qb] = qb, qa
        diff[qb] = diff[qa]

    students = [f"s{i:04d}" for i in range(spec.n_students)]
    if spec.abilities is not None:
        ability = dict(zip(students, map(float, spec.abilities)))
    else:
        ability = dict(zip(students, rng.normal(0.0, spec.ability_scale, spec.n_students).tolist()))

    sequences, true_prob = [], {}
    for s in students:
        length = int(rng.integers(spec.min_length, spec.max_length + 1))
        exposure = {k: 0 for k in kcs}
        first_answer = {}
        records = []
        for t in range(length):
            q = questions[rng.integers(spec.n_questions)]
            gap = ability[s] - diff[q]
            p_solve = _sigmoid(gap + spec.attempt_offset)
            attempts = int(min(rng.geometric(p_solve), spec.max_attempts))
            exposures = sum(exposure[k] for k in tags[q])
            p = float(_sigmoid(gap + spec.mastery_gain * exposures - spec.attempt_effect * (attempts - 1)))
            u = rng.random()
            mate = partner.get(q)
            if q not in first_answer and mate is not None and mate in first_answer:
                correct = first_answer[mate]
                p = float(correct)
            else:
                correct = int(u < p)
            first_answer.setdefault(q, correct)
            for k in tags[q]:
                exposure[k] += 1
            true_prob[(s, t)] = p
            records.append(InteractionRecord(s, q, tags[q], correct, attempts, t))
        sequences.append(StudentSequence(s, tuple(records)))
    return SyntheticCorpus(sequences, pairs, diff, ability, tags, true_prob)


def bayes_auc(corpus, student_ids=None, skip_first=True):
    """AUC of the generator's own probabilities on the predicted steps."""
    from .metrics import auc

    scores, labels = [], []
    for seq in corpus.sequences:
        if student_ids is not None and seq.student_id not in student_ids:
            continue
        for r in seq.records[1 if skip_first else 0:]:
            scores.append(corpus.true_prob[(seq.student_id, r.order_index)])
            labels.append(r.correct)
    return auc(scores, labels)


def expected_accuracy(corpus, question):
    """Closed-form accuracy of ``question`` ignoring exposure and copying."""
    d = corpus.difficulty[question]
    return float(np.mean([_sigmoid(a - d) for a in corpus.ability.values()]))
