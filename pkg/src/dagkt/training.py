"""Training loop, per-fold artifacts, cross-validation and ablation runs."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .graph import (DEFAULT_LAMBDA, DEFAULT_MIN_SUPPORT, DEFAULT_OMEGA, DifficultyTable, build_graph, compute_attempts,
                    compute_difficulty)
from .ingest import make_folds, question_kcs, select
from .metrics import auc, loss_from_forward
from .model import VARIANTS, DagktModel, ModelConfig, Vocab, collate, encode_sequence
from .optim import Adam, clip_grad_norm, load_tensors, save_tensors

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


class ProvenanceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 0.001
    seed: int = 0
    variant: str = "full"
    omega: float = DEFAULT_OMEGA
    lam: float = DEFAULT_LAMBDA
    c_min: int = DEFAULT_MIN_SUPPORT
    clip_norm: float = 5.0
    max_len: int = 200
    folds: int = 5
    model: dict = field(default_factory=dict)   # ModelConfig overrides

    def __post_init__(self):
        problems = []
        if self.epochs < 1:
            problems.append("epochs must be >= 1")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if not self.lr > 0:
            problems.append("lr must be positive")
        if self.variant not in VARIANTS:
            problems.append(f"variant must be one of {VARIANTS}")
        if self.max_len < 2:
            problems.append("max_len must be >= 2")
        if self.folds < 2:
            problems.append("folds must be >= 2")
        if problems:
            raise ValueError("invalid train config: " + "; ".join(problems))

    def model_config(self):
        return ModelConfig.for_variant(self.variant, **{**self.model, "seed": self.seed})

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"invalid train config: unknown field(s) {sorted(unknown)}")
        return cls(**d)


class FeatureTables:
    """Difficulty and attempt statistics estimated on training students only.

    Reads are counted so tests can check that variants without difficulty or
    attempts never consult them.
    """

    def __init__(self, train_sequences):
        self.source_students = frozenset(s.student_id for s in train_sequences)
        self._difficulty = compute_difficulty(train_sequences)
        self._attempts = compute_attempts(train_sequences)
        self.m_max = self._attempts.max_attempts() if len(self._attempts) else 1
        self._fallback = self._difficulty.mean_difficulty() if len(self._difficulty) else 0.0
        self.difficulty_reads = 0
        self.attempt_reads = 0

    def difficulty(self, question):
        self.difficulty_reads += 1
        if question in self._difficulty:
            return self._difficulty.difficulty(question)
        return self._fallback

    def attempts_scale(self):
        self.attempt_reads += 1
        return self.m_max

    def to_dict(self):
        return {"accuracy": dict(sorted(self._difficulty.accuracy.items())), "m_max": self.m_max}

    @classmethod
    def from_dict(cls, d):
        """Tables restored from a checkpoint (no source sequences attached)."""
        obj = cls([])
        obj._difficulty = DifficultyTable(d["accuracy"])
        obj._fallback = obj._difficulty.mean_difficulty() if d["accuracy"] else 0.0
        obj.m_max = int(d["m_max"])
        return obj


@dataclass
class FoldArtifacts:
    vocab: Vocab
    graph: object
    features: FeatureTables
    train: list
    test: list
    test_students: frozenset = frozenset()


def split_long(sequences, max_len):
    """Cut sequences into windows of at most ``max_len`` records (windows
    shorter than two records are dropped)."""
    out = []
    for seq in sequences:
        recs = seq.records
        for start in range(0, len(recs), max_len):
            chunk = recs[start:start + max_len]
            if len(chunk) >= 2:
                out.append(chunk)
    return out


def encode_all(chunks, vocab, features, config):
    diff = features.difficulty if config.use_difficulty else (lambda q: 0.0)
    m_max = features.attempts_scale() if config.use_attempts else 1
    return [encode_sequence(c, vocab, diff, m_max, config) for c in chunks]


def prepare_fold(train_sequences, test_sequences, tcfg, tags=None):
    """Graph, statistics and encoded sequences for one fold.

    Everything estimated from responses uses ``train_sequences`` only; the
    question -> KC tags (``tags``) are item metadata and may cover every
    question so that test-only questions still have embedding rows.
    """
    cfg = tcfg.model_config()
    tags = tags or question_kcs(list(train_sequences) + list(test_sequences))
    vocab = Vocab.from_tags(tags)
    graph = build_graph(train_sequences, tcfg.omega, tcfg.lam, tcfg.c_min)
    features = FeatureTables(train_sequences)
    train = encode_all(split_long(train_sequences, tcfg.max_len), vocab, features, cfg)
    test = encode_all(split_long(test_sequences, tcfg.max_len), vocab, features, cfg)
    return FoldArtifacts(vocab, graph, features, train, test, frozenset(s.student_id for s in test_sequences))


def batches(encoded, size, order=None):
    idx = np.arange(len(encoded)) if order is None else order
    for start in range(0, len(idx), size):
        yield [encoded[i] for i in idx[start:start + size]]


def predict_all(model, encoded, batch_size=64):
    """Concatenated (probabilities, labels) over every predicted step."""
    probs, labels = [], []
    for group in batches(encoded, batch_size):
        batch = collate(group, model.config)
        res = model.forward(batch, training=False)
        probs.append(res.probs.data[res.mask])
        labels.append(res.labels[res.mask])
    return np.concatenate(probs), np.concatenate(labels)


def mean_loss(model, encoded, batch_size=64):
    """Average per-prediction objective in evaluation mode."""
    total, n = 0.0, 0
    for group in batches(encoded, batch_size):
        res = model.forward(collate(group, model.config), training=False)
        total += float(loss_from_forward(res).data)
        n += int(res.mask.sum())
    return total / n


@dataclass
class FoldResult:
    fold: int
    best_auc: float
    best_epoch: int
    train_loss: list
    test_auc: list
    best_state: dict = field(repr=False)
    model: DagktModel = field(repr=False)
    artifacts: FoldArtifacts | None = field(default=None, repr=False)


def train_fold(artifacts, tcfg, fold=0, metrics_file=None):
    """Train one model and evaluate it on the held-out students every epoch."""
    overlap = artifacts.features.source_students & artifacts.test_students
    if overlap:
        raise AssertionError(f"test students leaked into fold statistics: {sorted(overlap)[:5]}")
    cfg = tcfg.model_config()
    model = DagktModel(cfg, artifacts.vocab, artifacts.graph)
    params = model.parameters()
    opt = Adam(params, lr=tcfg.lr)
    train_loss, test_auc = [], []
    best_auc, best_epoch, best_state = -math.inf, -1, None

    for epoch in range(tcfg.epochs):
        order = np.random.default_rng((tcfg.seed, fold, epoch)).permutation(len(artifacts.train))
        epoch_loss, n_pred = 0.0, 0
        for b, group in enumerate(batches(artifacts.train, tcfg.batch_size, order)):
            batch = collate(group, cfg)
            rng = np.random.default_rng((tcfg.seed, fold, epoch, b))
            res = model.forward(batch, training=True, epoch=epoch, rng=rng)
            loss = loss_from_forward(res)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss {value} at fold {fold}, epoch {epoch}, batch {b}; "
                    f"prob range [{np.nanmin(res.probs.data)}, {np.nanmax(res.probs.data)}]"
                )
            opt.zero_grad()
            T.backward(loss)
            clip_grad_norm(params, tcfg.clip_norm)
            opt.step()
            epoch_loss += value
            n_pred += int(res.mask.sum())

        probs, labels = predict_all(model, artifacts.test)
        score = auc(probs, labels, context=f"fold {fold}")
        train_loss.append(epoch_loss / n_pred)
        test_auc.append(score)
        if score > best_auc:
            best_auc, best_epoch, best_state = score, epoch, model.state_dict()
        log.info("fold %d epoch %d loss %.5f auc %.5f", fold, epoch, train_loss[-1], score)
        if metrics_file is not None:
            metrics_file.write(json.dumps({"fold": fold, "epoch": epoch, "train_loss": train_loss[-1],
                                           "test_auc": score}) + "\n")
            metrics_file.flush()

    return FoldResult(fold, best_auc, best_epoch, train_loss, test_auc, best_state, model)


@dataclass
class EvalReport:
    fold_best_auc: list
    fold_best_epoch: list
    train_loss: list      # per fold, per epoch
    test_auc: list        # per fold, per epoch
    config: dict
    stats: dict | None = None

    @property
    def mean_best_auc(self):
        return float(np.mean(self.fold_best_auc))

    def to_dict(self):
        return {
            "fold_best_auc": self.fold_best_auc,
            "fold_best_epoch": self.fold_best_epoch,
            "mean_best_auc": self.mean_best_auc,
            "train_loss": self.train_loss,
            "test_auc": self.test_auc,
            "config": self.config,
            "stats": self.stats,
        }


def run_cv(sequences, tcfg, metrics_path=None, report_path=None, keep_results=False):
    """k-fold cross-validation over students; returns an :class:`EvalReport`
    (and the per-fold results when ``keep_results`` is set)."""
    tags = question_kcs(sequences)
    folds = make_folds(sequences, tcfg.folds, tcfg.seed)
    results = []
    fh = open(metrics_path, "w") if metrics_path else None
    try:
        for split in folds:
            arts = prepare_fold(select(sequences, split.train_ids), select(sequences, split.test_ids), tcfg, tags)
            result = train_fold(arts, tcfg, split.fold_index, fh)
            result.artifacts = arts if keep_results else None
            results.append(result)
    finally:
        if fh:
            fh.close()
    report = EvalReport(
        fold_best_auc=[r.best_auc for r in results],
        fold_best_epoch=[r.best_epoch for r in results],
        train_loss=[r.train_loss for r in results],
        test_auc=[r.test_auc for r in results],
        config=tcfg.to_dict(),
    )
    if report_path:
        Path(report_path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return (report, results) if keep_results else report


def run_ablation(sequences, tcfg, variants=VARIANTS):
    """Mean best AUC for each variant under otherwise identical settings."""
    rows = []
    for v in variants:
        report = run_cv(sequences, replace(tcfg, variant=v))
        rows.append({"variant": v, "name": "DAGKT" if v == "full" else f"DAGKT-{v}",
                     "mean_best_auc": report.mean_best_auc, "fold_best_auc": report.fold_best_auc})
    return rows


# ----------------------------------------------------------------------------
# checkpoints

def save_checkpoint(directory, model, state=None, train_config=None, features=None):
    directory = Path(directory)
    meta = {
        "model_config": model.config.to_dict(),
        "vocab": model.vocab.to_dict(),
        "graph_hash": model.graph_hash,
        "train_config": train_config.to_dict() if train_config else None,
        "features": features.to_dict() if features else None,
    }
    save_tensors(directory, state if state is not None else model.state_dict(), meta)


def load_checkpoint(directory, graph):
    """Rebuild a model from ``directory``; refuses a graph other than the one
    it was trained on."""
    arrays, meta = load_tensors(directory)
    expected = meta.get("graph_hash")
    actual = graph.provenance_hash() if graph is not None else None
    if expected != actual:
        raise ProvenanceError(f"checkpoint was built on graph {expected}, got graph {actual}")
    cfg = ModelConfig(**meta["model_config"])
    model = DagktModel(cfg, Vocab.from_dict(meta["vocab"]), graph)
    model.load_state_dict(arrays)
    return model, meta
