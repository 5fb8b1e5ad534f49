import numpy as np
import pytest
from hypothesis import given, strategies as st

from quakecast.data import DataError
from quakecast.graph import (
    build_adjacency, level_cut_holds, read_distances_csv, validate_adjacency, write_adjacency_csv,
)

from conftest import random_distances
from oracles import adjacency_oracle


def test_three_station_hand_example():
    d = np.array([[0, 10, 20], [10, 0, 40], [20, 40, 0]], dtype=float)
    pre = build_adjacency(d, threshold_quantile=0.0).weights
    assert np.array_equal(pre, [[1, 1, 0.5], [1, 1, 0.25], [0.5, 0.25, 1]])
    adj = build_adjacency(d)
    assert np.array_equal(adj.weights, [[1, 1, 0], [1, 1, 0], [0, 0, 1]])
    assert adj.threshold == pytest.approx(0.875)


@pytest.mark.parametrize("dist", [0.3, 17.0, 5000.0])
def test_two_stations(dist):
    adj = build_adjacency([[0, dist], [dist, 0]])
    assert np.array_equal(adj.weights, np.ones((2, 2)))


def test_equal_distances_give_full_weights():
    d = np.full((5, 5), 7.0)
    np.fill_diagonal(d, 0)
    assert np.array_equal(build_adjacency(d).weights, np.ones((5, 5)))


@pytest.mark.parametrize("bad", [
    [[0, 1], [2, 0]],
    [[0, -1], [-1, 0]],
    [[0, 0], [0, 0]],
    [[0.0]],
])
def test_invalid_distances(bad):
    with pytest.raises(DataError):
        build_adjacency(bad)


def test_percentile_domain_all_differs():
    d = np.array([[0, 10, 20], [10, 0, 40], [20, 40, 0]], dtype=float)
    a = build_adjacency(d, percentile_domain="all")
    # nine entries: three diagonal ones lift the 75th percentile to 1
    assert a.threshold == 1.0
    assert np.array_equal(a.weights, [[1, 1, 0], [1, 1, 0], [0, 0, 1]])
    with pytest.raises(ValueError):
        build_adjacency(d, percentile_domain="upper")


def test_validate_reports():
    assert validate_adjacency(np.eye(3)).ok
    bad = np.eye(3)
    bad[0, 1] = bad[1, 0] = 1.2
    assert any("outside" in v for v in validate_adjacency(bad).violations)
    asym = np.eye(3)
    asym[0, 1] = 0.5
    assert any("symmetric" in v for v in validate_adjacency(asym).violations)
    assert validate_adjacency("nonsense").violations
    assert validate_adjacency(np.ones((2, 3))).violations


def test_csv_round_trip(tmp_path, rng):
    d = random_distances(rng, 7)
    np.savetxt(tmp_path / "d.csv", d, delimiter=",", fmt="%.17g")
    adj = build_adjacency(read_distances_csv(tmp_path / "d.csv"))
    write_adjacency_csv(tmp_path / "a.csv", adj)
    assert np.array_equal(np.loadtxt(tmp_path / "a.csv", delimiter=","), adj.weights)


def test_missing_distance_file(tmp_path):
    with pytest.raises(DataError, match="missing"):
        read_distances_csv(tmp_path / "nope.csv")


@given(st.integers(3, 20), st.integers(0, 2 ** 32 - 1))
def test_matches_oracle_and_invariants(n, seed):
    d = random_distances(np.random.default_rng(seed), n)
    adj = build_adjacency(d)
    assert np.max(np.abs(adj.weights - np.array(adjacency_oracle(d)))) <= 1e-12
    assert validate_adjacency(adj.weights).ok
    assert level_cut_holds(adj, d)


@given(st.integers(3, 12), st.integers(0, 2 ** 32 - 1), st.integers(-20, 20))
def test_scale_invariance(n, seed, power):
    d = random_distances(np.random.default_rng(seed), n)
    assert np.array_equal(build_adjacency(d).weights, build_adjacency(d * 2.0 ** power).weights)


@given(st.integers(3, 12), st.integers(0, 2 ** 32 - 1))
def test_retained_weights_monotone_in_distance(n, seed):
    d = random_distances(np.random.default_rng(seed), n)
    w = build_adjacency(d).weights
    off = ~np.eye(n, dtype=bool) & (w > 0)
    dk, wk = d[off], w[off]
    order = np.argsort(dk, kind="stable")
    assert np.all(np.diff(wk[order]) <= 1e-15)
