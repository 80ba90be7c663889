import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dagkt.metrics import DegenerateLabels, auc, dagkt_loss
from dagkt.tensor import Tensor

from oracles import pairwise_auc


def test_auc_perfect():
    assert auc([0.9, 0.1], [1, 0]) == 1.0


def test_auc_all_ties():
    assert auc([0.3] * 6, [1, 0, 1, 0, 0, 1]) == 0.5


def test_auc_hand_case():
    assert auc([0.8, 0.3, 0.5, 0.1], [1, 1, 0, 0]) == 0.75


def test_auc_single_class_names_context():
    with pytest.raises(DegenerateLabels, match="fold 3"):
        auc([0.1, 0.2], [1, 1], context="fold 3")


@pytest.mark.parametrize("n", [2, 10, 100, 1000])
@pytest.mark.parametrize("seed", range(3))
def test_auc_matches_pairwise_enumeration(n, seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n)
    labels[:2] = [0, 1]
    scores = np.round(rng.uniform(size=n), 1)      # coarse grid forces many ties
    assert abs(auc(scores, labels) - pairwise_auc(scores, labels)) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]), st.integers(0, 1)), min_size=2, max_size=60))
def test_auc_property(pairs):
    scores, labels = map(np.array, zip(*pairs))
    if labels.min() == labels.max():
        return
    value = auc(scores, labels)
    assert 0.0 <= value <= 1.0
    assert abs(value - pairwise_auc(scores, labels)) <= 1e-12
    # reversing the ranking mirrors the statistic
    assert abs(auc(-scores, labels) - (1.0 - value)) <= 1e-12


def test_loss_of_half():
    loss = dagkt_loss(Tensor([0.5]), [1])
    assert float(loss.data) == pytest.approx(math.log(2), abs=1e-15)


def test_reconstruction_term_adds_exactly():
    base = float(dagkt_loss(Tensor([0.5]), [1]).data)
    with_d = float(dagkt_loss(Tensor([0.5]), [1], reconstructions=[(np.array([0.3]), Tensor([0.5]), None)]).data)
    assert with_d - base == pytest.approx(0.04, abs=1e-15)


def test_zero_point():
    recs = [(np.array([0.2, 0.7]), Tensor([0.2, 0.7]), None), (np.array([1.0]), Tensor([1.0]), None)]
    loss = dagkt_loss(Tensor([1.0, 0.0, 1.0]), [1, 0, 1], reconstructions=recs)
    assert abs(float(loss.data)) <= 1e-5


def test_mask_excludes_padding():
    loss = dagkt_loss(Tensor([0.5, 0.01]), [1, 1], mask=[True, False])
    assert float(loss.data) == pytest.approx(math.log(2), abs=1e-15)


def test_empty_batch():
    with pytest.raises(ValueError, match="empty batch"):
        dagkt_loss(Tensor(np.zeros(0)), [])
    with pytest.raises(ValueError, match="empty batch"):
        dagkt_loss(Tensor([0.5]), [1], mask=[False])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 0.99), min_size=1, max_size=8), st.floats(0, 1), st.floats(0, 1))
def test_dropping_a_term_never_raises_the_rest(probs, d, d_rec):
    labels = [1] * len(probs)
    full = float(dagkt_loss(Tensor(probs), labels, reconstructions=[(np.array([d]), Tensor([d_rec]), None)]).data)
    bce = float(dagkt_loss(Tensor(probs), labels).data)
    assert bce <= full
    assert full - bce == pytest.approx((d - d_rec) ** 2, abs=1e-12)
