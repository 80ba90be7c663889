import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dagkt.graph import (
    PairCounts,
    QKGraph,
    DifficultyTable,
    accumulate_pair_counts,
    build_graph,
    compute_attempts,
    compute_difficulty,
    f1_directed,
    merge_pair_counts,
    similarity,
)
from dagkt.ingest import InteractionRecord, StudentSequence

from oracles import brute_pair_counts, make_sequences, random_corpus, reference_edges, reference_similarity


def _as_cells(pc):
    return [pc.count_11, pc.count_10, pc.count_01, pc.count_00]


# -- pair counts ----------------------------------------------------------------

def test_single_pair():
    counts = accumulate_pair_counts(make_sequences({"s1": [("q1", 1), ("q2", 1)]}))
    assert counts == {("q1", "q2"): PairCounts(count_11=1)}


def test_two_students_by_hand():
    counts = accumulate_pair_counts(make_sequences({
        "s1": [("q1", 1), ("q2", 0)],
        "s2": [("q2", 1), ("q1", 1)],
    }))
    assert counts[("q1", "q2")] == PairCounts(count_10=1)
    assert counts[("q2", "q1")] == PairCounts(count_11=1)


def test_only_first_occurrence_counts():
    counts = accumulate_pair_counts(make_sequences({"s1": [("q1", 0), ("q1", 1), ("q1", 1), ("q2", 1)]}))
    assert counts == {("q1", "q2"): PairCounts(count_01=1)}


def test_each_student_contributes_one_ordered_pair():
    seqs = make_sequences({"s1": [("a", 1), ("b", 0), ("a", 1), ("b", 1), ("c", 0)]})
    counts = accumulate_pair_counts(seqs)
    assert sum(c.total for c in counts.values()) == 3
    assert ("b", "a") not in counts


@pytest.mark.parametrize("seed", range(30))
def test_pair_counts_match_brute_force(seed):
    seqs = random_corpus(np.random.default_rng(seed))
    fast = {pair: _as_cells(c) for pair, c in accumulate_pair_counts(seqs).items()}
    assert fast == brute_pair_counts(seqs)


def test_merge_of_shards_equals_whole():
    seqs = random_corpus(np.random.default_rng(7), max_students=10)
    halves = accumulate_pair_counts(seqs[::2]), accumulate_pair_counts(seqs[1::2])
    assert merge_pair_counts(*halves) == accumulate_pair_counts(seqs)


# -- F1 and similarity ---------------------------------------------------------

def test_f1_perfect_agreement():
    assert f1_directed(PairCounts(count_11=4)) == pytest.approx(1.0, abs=1e-15)


def test_f1_hand_case():
    c = PairCounts(count_11=3, count_10=2, count_01=1)
    p, r = 3.01 / 4.01, 3.01 / 5.01
    assert p == pytest.approx(0.75062, abs=1e-5)
    assert r == pytest.approx(0.60080, abs=1e-5)
    assert f1_directed(c, 0.01) == pytest.approx(0.6674, abs=1e-4)
    assert f1_directed(c, 0.01) == pytest.approx(2 * p * r / (p + r), abs=1e-15)


def test_f1_all_zero_is_one():
    assert f1_directed(PairCounts()) == pytest.approx(1.0, abs=1e-15)


def test_f1_rejects_nonpositive_smoothing():
    with pytest.raises(ValueError):
        f1_directed(PairCounts(count_11=1), lam=0.0)


def test_similarity_hand_case():
    counts = {("a", "b"): PairCounts(count_11=3, count_10=2, count_01=1), ("b", "a"): PairCounts(count_11=2)}
    assert similarity("a", "b", counts) == pytest.approx(0.8337, abs=1e-4)
    assert similarity("a", "b", counts) == similarity("b", "a", counts)


cells = st.builds(PairCounts, *[st.integers(0, 50)] * 4)


@settings(max_examples=200, deadline=None)
@given(cells, cells, st.floats(1e-4, 1.0))
def test_similarity_symmetric_and_bounded(ab, ba, lam):
    counts = {("a", "b"): ab, ("b", "a"): ba}
    s = similarity("a", "b", counts, lam)
    assert s == similarity("b", "a", counts, lam)
    assert 0.0 < s <= 1.0 + 1e-12


@settings(max_examples=200, deadline=None)
@given(cells, st.integers(1, 20))
def test_f1_monotone_in_agreement(c, extra):
    # adding agreeing (1,1) outcomes cannot lower F1; disagreements cannot raise it
    more = PairCounts(c.count_11 + extra, c.count_10, c.count_01, c.count_00)
    worse = PairCounts(c.count_11, c.count_10 + extra, c.count_01, c.count_00)
    assert f1_directed(more) >= f1_directed(c) - 1e-12
    assert f1_directed(worse) <= f1_directed(c) + 1e-12


@pytest.mark.parametrize("seed", range(30))
def test_similarity_matches_reference(seed):
    seqs = random_corpus(np.random.default_rng(100 + seed))
    counts = accumulate_pair_counts(seqs)
    table = brute_pair_counts(seqs)
    questions = sorted({r.question_id for s in seqs for r in s.records})
    for i, a in enumerate(questions):
        for b in questions[i + 1:]:
            assert abs(similarity(a, b, counts) - reference_similarity(table, a, b, 0.01)) <= 1e-12


# -- graph building -------------------------------------------------------------

def _identical_pair_corpus(n_students=5):
    rng = np.random.default_rng(0)
    students = {}
    for s in range(n_students):
        x = int(rng.integers(2))
        students[f"s{s}"] = [("q1", x), ("q2", x), ("q3", 1 - x), ("q4", int(rng.integers(2)))]
    return make_sequences(students)


def test_omega_one_gives_no_similarity_edges():
    g = build_graph(_identical_pair_corpus(), omega=1.0)
    assert g.qq_edges == {}
    assert g.qk_edges


def test_identical_answers_give_full_similarity_edge():
    seqs = make_sequences({f"s{i}": [("q1", i % 2), ("q2", i % 2)] for i in range(4)})
    g = build_graph(seqs, omega=0.7, c_min=3)
    assert g.edge_set() == {("q1", "q2")}
    assert g.sim("q2", "q1") == pytest.approx(1.0, abs=1e-12)


def test_support_threshold():
    seqs = make_sequences({f"s{i}": [("q1", 1), ("q2", 1)] for i in range(2)})
    assert build_graph(seqs, c_min=3).qq_edges == {}
    assert build_graph(seqs, c_min=2).edge_set() == {("q1", "q2")}


def test_five_question_planted_corpus():
    rng = np.random.default_rng(5)
    students = {}
    for s in range(60):
        x, y = int(rng.integers(2)), int(rng.integers(2))
        items = [("q1", x), ("q2", x), ("q3", y), ("q4", y), ("q5", int(rng.integers(2)))]
        students[f"s{s}"] = [items[i] for i in rng.permutation(5)]
    seqs = make_sequences(students)
    g = build_graph(seqs, omega=0.9, c_min=3)
    assert g.edge_set() == {("q1", "q2"), ("q3", "q4")}
    assert g.edge_set() == reference_edges(seqs, 0.9, 0.01, 3)


@pytest.mark.parametrize("seed", range(20))
def test_edges_match_reference(seed):
    seqs = random_corpus(np.random.default_rng(500 + seed), max_len=20)
    for omega in (0.5, 0.7, 0.9):
        assert build_graph(seqs, omega=omega, c_min=2).edge_set() == reference_edges(seqs, omega, 0.01, 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_higher_threshold_gives_subset(seed, w1, w2):
    seqs = random_corpus(np.random.default_rng(seed))
    lo, hi = sorted((w1, w2))
    assert build_graph(seqs, omega=hi, c_min=1).edge_set() <= build_graph(seqs, omega=lo, c_min=1).edge_set()


@pytest.mark.parametrize("bad", [-0.1, 1.5])
def test_omega_out_of_range(bad):
    with pytest.raises(ValueError):
        build_graph(_identical_pair_corpus(), omega=bad)


def test_graph_tsv_round_trip(tmp_path):
    g = build_graph(_identical_pair_corpus(8), omega=0.5, c_min=1)
    assert g.qq_edges
    g.save(tmp_path / "g.tsv")
    back = QKGraph.load(tmp_path / "g.tsv")
    assert back.qq_edges == g.qq_edges
    assert back.qk_edges == g.qk_edges
    assert (back.omega, back.lam, back.c_min) == (g.omega, g.lam, g.c_min)
    assert back.to_tsv() == g.to_tsv()
    assert back.provenance_hash() == g.provenance_hash()


def test_graph_tsv_is_deterministic():
    seqs = random_corpus(np.random.default_rng(4))
    assert build_graph(seqs, omega=0.5, c_min=1).to_tsv() == build_graph(list(seqs), omega=0.5, c_min=1).to_tsv()


def test_without_similarity_keeps_kc_edges():
    g = build_graph(_identical_pair_corpus(), omega=0.5, c_min=1)
    bare = g.without_similarity()
    assert bare.qq_edges == {} and bare.qk_edges == g.qk_edges


# -- difficulty and attempts ----------------------------------------------------

def _answers(q, outcomes):
    return make_sequences({f"s{i}": [(q, c)] for i, c in enumerate(outcomes)})


def test_difficulty_examples():
    assert compute_difficulty(_answers("q", [1] * 5)).difficulty("q") == 0.0
    assert compute_difficulty(_answers("q", [1] * 7 + [0] * 3)).difficulty("q") == pytest.approx(0.3, abs=1e-15)
    assert compute_difficulty(_answers("q", [0] * 4)).difficulty("q") == 1.0


def test_difficulty_unknown_question():
    with pytest.raises(LookupError):
        compute_difficulty(_answers("q", [1])).difficulty("nope")


def test_difficulty_tsv_round_trip():
    table = compute_difficulty(_answers("q", [1, 0, 0]))
    assert DifficultyTable.from_tsv(table.to_tsv()).accuracy == table.accuracy


def _retries(attempts):
    recs = tuple(InteractionRecord("s", "q", ("k",), 0, m, i) for i, m in enumerate(attempts))
    return [StudentSequence("s", recs)]


def test_attempt_examples():
    assert compute_attempts(_retries([1])).get("s", "q") == 1
    table = compute_attempts(_retries([1, 2, 3]))
    assert [table.get("s", "q", k) for k in (1, 2, 3)] == [1, 2, 3]
    assert table.max_attempts() == 3


def test_derived_attempts_equal_occurrence_index():
    seqs = make_sequences({"s": [("a", 1), ("b", 0), ("a", 0), ("a", 1), ("b", 1)]})
    table = compute_attempts(seqs)
    for (s, q, occ), m in table.entries.items():
        assert m == occ
