"""Ranking metric and the three-part training objective."""
from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from . import tensor as T


class DegenerateLabels(ValueError):
    pass


def auc(scores, labels, context=""):
    """Area under the ROC curve via the Mann-Whitney U statistic.

    Tied scores get average ranks, so a tied positive/negative pair counts 1/2.
    """
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError(f"auc: {scores.size} scores for {labels.size} labels")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        where = f" ({context})" if context else ""
        raise DegenerateLabels(f"auc needs both classes{where}: {n_pos} positive, {n_neg} negative")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def dagkt_loss(probs, labels, mask=None, reconstructions=()):
    """Summed cross-entropy plus summed squared reconstruction errors.

    ``reconstructions`` is an iterable of ``(targets, reconstructed, mask)``
    with ``targets``/``mask`` numpy arrays and ``reconstructed`` a Tensor of
    the same shape; ``None`` entries are skipped.
    """
    labels = np.asarray(labels, dtype=float)
    mask = np.ones(labels.shape, bool) if mask is None else np.asarray(mask, bool)
    if labels.size == 0 or not mask.any():
        raise ValueError("loss: empty batch")
    total = T.sum(T.mul(T.binary_cross_entropy(probs, labels), mask.astype(float)))
    for item in reconstructions:
        if item is None:
            continue
        target, rec, m = item
        m = np.ones(np.shape(target), bool) if m is None else np.asarray(m, bool)
        err = T.square(T.sub(rec, np.asarray(target, dtype=float)))
        total = T.add(total, T.sum(T.mul(err, m.astype(float))))
    return total


def loss_from_forward(result):
    return dagkt_loss(result.probs, result.labels, result.mask, (result.difficulty, result.attempts))
