from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_path_cost
from tpvp.paths import ViewPath, held_karp, nearest_neighbor_2opt, path_cost, shortest_hamiltonian_path
from tpvp.registration import so3_exp


def nodes(positions, first_id=0):
    return [SimpleNamespace(id=first_id + i, position=np.asarray(p, float)) for i, p in enumerate(positions)]


def test_line():
    start, a, b = nodes([[0, 0, 0], [1, 0, 0], [2, 0, 0]])
    path = shortest_hamiltonian_path(start, [b, a])
    assert path.order == (0, 1, 2) and path.total_cost == pytest.approx(2.0)


def test_unit_square():
    start, *rest = nodes([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]])
    path = shortest_hamiltonian_path(start, rest)
    assert path.total_cost == pytest.approx(3.0)
    assert path.order == (0, 1, 2, 3)


def test_start_among_views_rejected():
    start, a = nodes([[0, 0, 0], [1, 0, 0]])
    with pytest.raises(ValueError):
        shortest_hamiltonian_path(start, [a, start])


def test_empty_view_set():
    (start,) = nodes([[0, 0, 0]])
    path = shortest_hamiltonian_path(start, [])
    assert path.order == (0,) and path.total_cost == 0.0


def test_matches_permutation_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(1, 10))
        pos = rng.uniform(-0.4, 0.4, size=(n + 1, 3))
        start, *rest = nodes(pos)
        path = shortest_hamiltonian_path(start, rest)
        assert path.total_cost == pytest.approx(brute_path_cost(pos), abs=1e-12)
        assert sorted(path.order) == list(range(n + 1)) and path.order[0] == 0
        assert path.total_cost == pytest.approx(path_cost(pos, path.order), abs=1e-12)


@given(st.integers(0, 10_000))
def test_cost_invariant_under_rigid_motion(seed):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-0.4, 0.4, size=(int(rng.integers(2, 9)), 3))
    R = so3_exp(rng.normal(size=3))
    moved = pos @ R.T + rng.normal(size=3)
    a = shortest_hamiltonian_path(nodes(pos)[0], nodes(pos)[1:])
    b = shortest_hamiltonian_path(nodes(moved)[0], nodes(moved)[1:])
    assert abs(a.total_cost - b.total_cost) < 1e-9


@given(st.integers(0, 10_000))
def test_heuristic_never_beats_exact(seed):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-0.4, 0.4, size=(int(rng.integers(3, 13)), 3))
    dist = np.linalg.norm(pos[:, None] - pos[None], axis=2)
    exact = path_cost(pos, held_karp(dist))
    heur = nearest_neighbor_2opt(dist)
    assert heur[0] == 0 and sorted(heur) == list(range(len(pos)))
    assert path_cost(pos, heur) >= exact - 1e-12


def test_fallback_is_flagged():
    rng = np.random.default_rng(1)
    pos = rng.uniform(-0.4, 0.4, size=(24, 3))
    path = shortest_hamiltonian_path(nodes(pos)[0], nodes(pos)[1:])
    assert path.method == "heuristic" and len(path.order) == 24
    small = shortest_hamiltonian_path(nodes(pos)[0], nodes(pos)[1:6])
    assert small.method == "exact"


def test_ties_give_lexicographically_smallest_order():
    # symmetric: 0 at the middle, 1 and 2 mirror images
    start, a, b = nodes([[0, 0, 0], [1, 0, 0], [-1, 0, 0]])
    assert shortest_hamiltonian_path(start, [a, b]).order == (0, 1, 2)


def test_path_file_round_trip():
    start, *rest = nodes([[0, 0, 0], [1, 0, 0], [1, 1, 0]], first_id=10)
    path = shortest_hamiltonian_path(start, rest)
    ids, cums = ViewPath.read_text(path.to_text())
    assert ids == list(path.order)
    assert cums[-1] == pytest.approx(path.total_cost)
    assert np.allclose(np.diff(cums), path.hops)
