import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import ORACLE_TOL
from oracles import oracle_local_ordinality_score, oracle_ordinality_score
from ordino.errors import DataError, ShapeError
from ordino.metrics import (
    SimilarityMatrix,
    load_similarity_csv,
    local_ordinality_score,
    mae_accuracy,
    ordinality_score,
    predict_rank,
    save_similarity_csv,
    similarity_matrix,
)


def monotone_decay_matrix(m: int, rate: float = 0.1) -> np.ndarray:
    idx = np.arange(m)
    return 1.0 - rate * np.abs(idx[:, None] - idx[None, :]) / m


def test_hand_worked_three_rank_case():
    s = np.array([[1.0, 0.5, 0.8], [0.5, 1.0, 0.2], [0.8, 0.2, 1.0]])
    score = ordinality_score(SimilarityMatrix(s))
    assert score == pytest.approx(200.0 / 3.0, abs=1e-9)


def test_monotone_decay_scores_hundred_exactly():
    for m in (2, 3, 7, 12):
        assert ordinality_score(SimilarityMatrix(monotone_decay_matrix(m))) == 100.0


def test_ties_count_as_violations():
    s = np.ones((4, 4))
    assert ordinality_score(SimilarityMatrix(s)) == 0.0


def test_single_adjacent_tie_detected():
    s = monotone_decay_matrix(5)
    s[0, 2] = s[0, 1]  # one tied adjacent pair in row 0
    expected = 100.0 * (10 - 1) / 10
    assert ordinality_score(SimilarityMatrix(s)) == pytest.approx(expected)


def test_os_agrees_with_oracle_on_random_matrices():
    rng = np.random.default_rng(11)
    for _ in range(150):
        m = int(rng.integers(2, 13))
        s = rng.uniform(-1, 1, size=(m, m))
        s = (s + s.T) / 2
        np.fill_diagonal(s, 1.0)
        got = ordinality_score(SimilarityMatrix(s))
        want = oracle_ordinality_score(s)
        assert abs(got - want) <= ORACLE_TOL


def test_los_agrees_with_oracle_on_random_matrices():
    rng = np.random.default_rng(12)
    for _ in range(150):
        m = int(rng.integers(2, 13))
        s = rng.uniform(-1, 1, size=(m, m))
        s = (s + s.T) / 2
        k = int(rng.integers(2, m + 1))
        got = local_ordinality_score(SimilarityMatrix(s), k)
        want = oracle_local_ordinality_score(s, k)
        assert abs(got - want) <= ORACLE_TOL


def test_los_full_window_equals_os():
    rng = np.random.default_rng(13)
    for _ in range(25):
        m = int(rng.integers(2, 10))
        s = rng.uniform(-1, 1, size=(m, m))
        assert local_ordinality_score(SimilarityMatrix(s), m) == ordinality_score(
            SimilarityMatrix(s)
        )


def test_los_window_bounds():
    s = monotone_decay_matrix(5)
    with pytest.raises(ShapeError):
        local_ordinality_score(SimilarityMatrix(s), 1)
    with pytest.raises(ShapeError):
        local_ordinality_score(SimilarityMatrix(s), 6)


def test_similarity_matrix_normalizes_rows():
    rng = np.random.default_rng(5)
    r = rng.normal(size=(6, 9)) * 3.0
    sim = similarity_matrix(r)
    assert np.allclose(np.diag(sim.values), 1.0)
    assert np.allclose(sim.values, sim.values.T)
    assert sim.values.max() <= 1.0 + 1e-12


def test_similarity_matrix_rejects_bad_input():
    with pytest.raises(ShapeError):
        similarity_matrix(np.zeros((3, 2, 2)))
    with pytest.raises(DataError):
        similarity_matrix(np.vstack([np.ones(4), np.zeros(4)]))
    with pytest.raises(ShapeError):
        SimilarityMatrix(np.ones((1, 1)))
    with pytest.raises(DataError):
        SimilarityMatrix(np.full((3, 3), np.nan))


def test_predict_rank_picks_nearest_and_breaks_ties_low():
    r = np.eye(3)
    v = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.5, 0.5, 0.0]])
    pred = predict_rank(v, r)
    assert pred.tolist() == [1, 0, 0]


def test_mae_accuracy_hand_values():
    pred = np.array([0, 2, 1, 3])
    labels = np.array([0, 0, 1, 1])
    mae, acc = mae_accuracy(pred, labels)
    assert mae == pytest.approx(1.0)
    assert acc == pytest.approx(0.5)
    with pytest.raises(DataError):
        mae_accuracy(np.array([], dtype=int), np.array([], dtype=int))


def test_similarity_csv_round_trip(tmp_path):
    rng = np.random.default_rng(21)
    m = 7
    s = rng.uniform(-1, 1, size=(m, m))
    path = str(tmp_path / "sim.csv")
    save_similarity_csv(SimilarityMatrix(s), path)
    with open(path) as fh:
        first = fh.readline().strip()
    assert first == f"m={m}"
    loaded = load_similarity_csv(path)
    assert loaded.num_ranks == m
    # nine significant digits survive the text round trip
    assert np.abs(loaded.values - s).max() < 1e-8
    assert ordinality_score(loaded) == ordinality_score(SimilarityMatrix(s))


def test_similarity_csv_rejects_malformed(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("not-a-header\n1,0\n0,1\n")
    with pytest.raises(DataError):
        load_similarity_csv(str(p))
    p.write_text("m=3\n1,0\n0,1\n")
    with pytest.raises(DataError):
        load_similarity_csv(str(p))
    p.write_text("m=2\n1,x\n0,1\n")
    with pytest.raises(DataError):
        load_similarity_csv(str(p))


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=2, max_value=10), st.integers(min_value=0, max_value=10**6))
def test_os_matches_oracle_property(m, seed):
    rng = np.random.default_rng(seed)
    s = rng.uniform(-1, 1, size=(m, m))
    assert abs(ordinality_score(SimilarityMatrix(s)) - oracle_ordinality_score(s)) <= ORACLE_TOL


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=2, max_value=10), st.data())
def test_os_bounded_and_permutation_sensitive(m, data):
    seed = data.draw(st.integers(min_value=0, max_value=10**6))
    rng = np.random.default_rng(seed)
    s = rng.uniform(-1, 1, size=(m, m))
    score = ordinality_score(SimilarityMatrix(s))
    assert 0.0 <= score <= 100.0
