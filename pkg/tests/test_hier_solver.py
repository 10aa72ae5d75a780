import random

import networkx as nx
import pytest

from conftest import atoms_with_levels
from hier_resolve.conflict_scan import ConflictMatrix
from hier_resolve.context_model import HierarchyConfig
from hier_resolve.errors import BaseTooSmall, HierarchyDepthError, MatrixShapeMismatch, TooLarge
from hier_resolve.hier_solver import (
    ObjectiveVector,
    Resolution,
    brute_force_solve,
    check_maximal,
    parse_weighted_cnf,
    solve,
    solve_weighted_cnf,
    to_weighted_cnf,
)


def _instance(n, density, rng):
    graph = nx.gnp_random_graph(n, density, seed=rng.randrange(2**32))
    levels = [rng.randrange(3) for _ in range(n)]
    return atoms_with_levels(levels), ConflictMatrix.from_pairs(n, graph.edges)


def test_ad_resolution(ad_atoms, ad_matrix):
    resolution = solve(ad_atoms, ad_matrix)
    assert resolution.selected == {0, 1, 2, 4}
    assert resolution.rejected == {3}
    assert resolution.objective == ObjectiveVector((2, 1, 1))
    assert resolution.optimal
    assert not resolution.tie_broken
    assert brute_force_solve(ad_atoms, ad_matrix) == Resolution(
        resolution.selected,
        resolution.rejected,
        resolution.objective,
        nodes_explored=32,
    )


def test_no_conflicts_selects_everything():
    atoms = atoms_with_levels([0, 1, 2, 1])
    resolution = solve(atoms, ConflictMatrix.from_pairs(4, []))
    assert resolution.selected == {0, 1, 2, 3}
    assert resolution.rejected == frozenset()


def test_same_level_tie_keeps_lower_id():
    atoms = atoms_with_levels([1, 1])
    matrix = ConflictMatrix.from_pairs(2, [(0, 1)])
    for solver in (solve, brute_force_solve):
        resolution = solver(atoms, matrix)
        assert resolution.selected == {0}
        assert resolution.rejected == {1}
        assert resolution.tie_broken


def test_higher_level_wins():
    atoms = atoms_with_levels([0, 1, 1])
    resolution = solve(atoms, ConflictMatrix.from_pairs(3, [(0, 1)]))
    assert resolution.selected == {0, 2}
    assert resolution.objective.counts == (1, 1, 0)
    assert not resolution.tie_broken


def test_one_high_atom_outweighs_many_low_ones():
    atoms = atoms_with_levels([1, 2, 2, 2, 2])
    matrix = ConflictMatrix.from_pairs(5, [(0, 1), (0, 2), (0, 3), (0, 4)])
    resolution = solve(atoms, matrix)
    assert resolution.selected == {0}
    assert resolution.objective.counts == (0, 1, 0)


def test_tie_break_prefers_keeping_lower_ids():
    # path 0-1-2-3 at one level: {0, 2}, {0, 3} and {1, 3} are co-optimal
    atoms = atoms_with_levels([1, 1, 1, 1])
    matrix = ConflictMatrix.from_pairs(4, [(0, 1), (1, 2), (2, 3)])
    resolution = solve(atoms, matrix)
    assert resolution.selected == {0, 2}
    assert resolution.tie_broken
    assert brute_force_solve(atoms, matrix).selected == {0, 2}


def test_tied_ids_cover_only_components_with_several_optima():
    atoms = atoms_with_levels([1, 1, 1, 1, 1, 0])
    matrix = ConflictMatrix.from_pairs(6, [(0, 1), (2, 3), (3, 4)])
    for solver in (solve, brute_force_solve):
        resolution = solver(atoms, matrix)
        assert resolution.selected == {0, 2, 4, 5}
        assert resolution.tied == {0, 1}
        assert Resolution.from_dict(resolution.to_dict()) == resolution


def test_empty_instance():
    for solver in (solve, brute_force_solve):
        resolution = solver([], ConflictMatrix.from_pairs(0, []))
        assert resolution.selected == resolution.rejected == frozenset()
        assert resolution.objective == ObjectiveVector.zeros(2)


def test_shape_mismatch(ad_atoms):
    with pytest.raises(MatrixShapeMismatch):
        solve(ad_atoms, ConflictMatrix.from_pairs(4, []))


def test_level_deeper_than_hierarchy():
    atoms = atoms_with_levels([0, 2])
    with pytest.raises(HierarchyDepthError):
        solve(atoms, ConflictMatrix.from_pairs(2, []), HierarchyConfig(depth=1))


def test_brute_force_limit():
    atoms = atoms_with_levels([1] * 21)
    with pytest.raises(TooLarge):
        brute_force_solve(atoms, ConflictMatrix.from_pairs(21, []))


def test_random_n12_matches_oracle():
    rng = random.Random(12)
    atoms, matrix = _instance(12, 0.3, rng)
    assert solve(atoms, matrix).selected == brute_force_solve(atoms, matrix).selected


@pytest.mark.parametrize("density", [0.1, 0.3, 0.6])
def test_solver_matches_oracle(density):
    rng = random.Random(f"oracle:{density}")
    for n in range(2, 13):
        for _ in range(500):
            atoms, matrix = _instance(n, density, rng)
            exact = solve(atoms, matrix)
            oracle = brute_force_solve(atoms, matrix)
            assert exact.selected == oracle.selected, (n, matrix.conflicts(), [a.authority.level for a in atoms])
            assert exact.objective == oracle.objective
            assert exact.tie_broken == oracle.tie_broken
            assert exact.tied == oracle.tied


def test_objective_order_matches_weighted_sums():
    rng = random.Random(7)
    for _ in range(200):
        n = rng.randrange(1, 15)
        a = ObjectiveVector(tuple(rng.randrange(n + 1) for _ in range(3)))
        b = ObjectiveVector(tuple(rng.randrange(n + 1) for _ in range(3)))
        if sum(a.counts) > n or sum(b.counts) > n:
            continue
        base = n + 1
        assert (a < b) == (a.weighted_sum(base) < b.weighted_sum(base))
        assert (a == b) == (a.weighted_sum(base) == b.weighted_sum(base))


def test_weighted_sum_with_huge_base():
    vector = ObjectiveVector((1, 0, 3))
    assert vector.weighted_sum(10**30) == 10**60 + 3


def test_unconflicted_atoms_are_always_kept():
    rng = random.Random(3)
    for _ in range(200):
        atoms, matrix = _instance(rng.randrange(2, 12), 0.2, rng)
        resolution = solve(atoms, matrix)
        for i in range(matrix.n):
            if not matrix.neighbors(i):
                assert i in resolution.selected


def test_adding_a_conflict_never_improves_the_optimum():
    rng = random.Random(5)
    for _ in range(200):
        n = rng.randrange(2, 11)
        atoms, matrix = _instance(n, 0.3, rng)
        missing = [(i, j) for i in range(n) for j in range(i + 1, n) if not matrix.has_conflict(i, j)]
        if not missing:
            continue
        denser = ConflictMatrix.from_pairs(n, matrix.conflicts() + [rng.choice(missing)])
        assert solve(atoms, denser).objective <= solve(atoms, matrix).objective


def test_selection_is_conflict_free_and_maximal():
    rng = random.Random(11)
    for _ in range(200):
        atoms, matrix = _instance(rng.randrange(1, 15), 0.4, rng)
        resolution = solve(atoms, matrix)
        assert not any(i in resolution.selected and j in resolution.selected for i, j in matrix.conflicts())
        assert resolution.selected | resolution.rejected == set(range(len(atoms)))
        assert check_maximal(atoms, matrix, resolution) == []


def test_check_maximal_flags_needless_rejection():
    atoms = atoms_with_levels([0, 1])
    resolution = Resolution(frozenset({0}), frozenset({1}), ObjectiveVector((1, 0, 0)))
    assert check_maximal(atoms, ConflictMatrix.from_pairs(2, []), resolution) == [1]


def test_large_sparse_instance_is_solved():
    rng = random.Random(99)
    n = 200
    pairs = {tuple(sorted(rng.sample(range(n), 2))) for _ in range(60)}
    atoms = atoms_with_levels([rng.randrange(3) for _ in range(n)])
    matrix = ConflictMatrix.from_pairs(n, pairs)
    resolution = solve(atoms, matrix)
    assert check_maximal(atoms, matrix, resolution) == []


def test_resolution_document_round_trip(ad_atoms, ad_matrix):
    resolution = solve(ad_atoms, ad_matrix)
    document = resolution.to_dict()
    assert document["selected"] == [0, 1, 2, 4]
    assert document["objective"] == [2, 1, 1]
    assert Resolution.from_dict(document) == resolution


@pytest.mark.parametrize("level, weight", [(1, 4), (0, 16), (2, 1)])
def test_soft_clause_weights(level, weight):
    atoms = atoms_with_levels([level])
    formula = parse_weighted_cnf(to_weighted_cnf(atoms, ConflictMatrix.from_pairs(1, []), base=4))
    assert formula.soft == [[1]]
    assert formula.wght == [weight]


def test_ad_weighted_cnf(ad_atoms, ad_matrix):
    text = to_weighted_cnf(ad_atoms, ad_matrix, base=6)
    formula = parse_weighted_cnf(text)
    assert formula.nv == 5
    assert formula.soft == [[1], [2], [3], [4], [5]]
    assert formula.wght == [36, 36, 6, 6, 1]
    assert formula.hard == [[-2, -4]]
    assert solve_weighted_cnf(text) == solve(ad_atoms, ad_matrix).selected


def test_default_base_is_n_plus_one(ad_atoms, ad_matrix):
    formula = parse_weighted_cnf(to_weighted_cnf(ad_atoms, ad_matrix))
    assert formula.wght == [36, 36, 6, 6, 1]


def test_base_must_exceed_atom_count(ad_atoms, ad_matrix):
    with pytest.raises(BaseTooSmall):
        to_weighted_cnf(ad_atoms, ad_matrix, base=5)


def test_weighted_cnf_agrees_with_solver():
    rng = random.Random(17)
    for _ in range(100):
        atoms, matrix = _instance(rng.randrange(1, 11), 0.35, rng)
        assert solve_weighted_cnf(to_weighted_cnf(atoms, matrix)) == solve(atoms, matrix).selected
