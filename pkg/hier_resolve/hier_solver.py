"""
Exact lexicographic selection of a conflict-free instruction subset.

Selecting z in {0,1}^N to maximise sum(B^(K - level_i) * z_i) under the hard
clauses (not z_i or not z_j) for every conflict pair is the same as
maximising the per-level count vector lexicographically from level 0 down,
for any base B > N. The search works on the count vectors directly, so no
big-integer weights are involved; the weights only appear in the
weighted-CNF export.

Co-optimal selections are broken towards keeping lower ids: the returned
selection has the lexicographically largest indicator vector z_0, z_1, ...
among all optima. Resolution.tied lists the ids of every conflict
component that has more than one optimum.
"""

import io
import logging
from dataclasses import dataclass
from typing import Optional

import networkx as nx
import numpy as np
from pysat.formula import WCNF

from hier_resolve.conflict_scan import ConflictMatrix
from hier_resolve.context_model import AtomicInstruction, HierarchyConfig
from hier_resolve.errors import BaseTooSmall, MatrixShapeMismatch, TooLarge

log = logging.getLogger(__name__)

BRUTE_FORCE_LIMIT = 20


@dataclass(frozen=True, order=True)
class ObjectiveVector:
    counts: tuple[int, ...]

    @classmethod
    def zeros(cls, depth: int) -> "ObjectiveVector":
        return cls((0,) * (depth + 1))

    @classmethod
    def of(cls, levels: list[int], selected, depth: int) -> "ObjectiveVector":
        counts = [0] * (depth + 1)
        for i in selected:
            counts[levels[i]] += 1
        return cls(tuple(counts))

    def weighted_sum(self, base: int) -> int:
        depth = len(self.counts) - 1
        return sum(base ** (depth - k) * count for k, count in enumerate(self.counts))


@dataclass(frozen=True)
class Resolution:
    selected: frozenset[int]
    rejected: frozenset[int]
    objective: ObjectiveVector
    optimal: bool = True
    nodes_explored: int = 0
    tie_broken: bool = False
    tied: frozenset[int] = frozenset()

    def to_dict(self) -> dict:
        return {
            "selected": sorted(self.selected),
            "rejected": sorted(self.rejected),
            "objective": list(self.objective.counts),
            "optimal": self.optimal,
            "nodes_explored": self.nodes_explored,
            "tie_broken": self.tie_broken,
            "tied": sorted(self.tied),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Resolution":
        return cls(
            selected=frozenset(int(i) for i in payload["selected"]),
            rejected=frozenset(int(i) for i in payload["rejected"]),
            objective=ObjectiveVector(tuple(int(c) for c in payload["objective"])),
            optimal=bool(payload.get("optimal", True)),
            nodes_explored=int(payload.get("nodes_explored", 0)),
            tie_broken=bool(payload.get("tie_broken", False)),
            tied=frozenset(int(i) for i in payload.get("tied", [])),
        )


def _check_inputs(atoms: list[AtomicInstruction], matrix: ConflictMatrix, config: HierarchyConfig) -> list[int]:
    if matrix.n != len(atoms):
        raise MatrixShapeMismatch(f"Conflict matrix is {matrix.n}x{matrix.n} but there are {len(atoms)} atoms")
    config.check_levels(atoms)
    return [atom.authority.level for atom in atoms]


class _ComponentSearch:
    """Branch and bound over one connected component, vertices taken in id order."""

    def __init__(self, order: list[int], levels: list[int], neighbors: dict[int, list[int]], depth: int):
        self.order = order
        self.levels = levels
        self.neighbors = neighbors
        self.depth = depth
        self.blocked = {v: 0 for v in order}
        self.counts = [0] * (depth + 1)
        self.chosen: list[int] = []
        self.best: Optional[tuple[int, ...]] = None
        self.best_chosen: list[int] = []
        self.tied = False
        self.nodes = 0

    def _bound(self, pos: int) -> tuple[int, ...]:
        bound = list(self.counts)
        for v in self.order[pos:]:
            if not self.blocked[v]:
                bound[self.levels[v]] += 1
        return tuple(bound)

    def _free_later_neighbor(self, v: int, pos: int) -> bool:
        later = set(self.order[pos + 1:])
        return any(u in later and not self.blocked[u] for u in self.neighbors[v])

    def run(self) -> tuple[list[int], bool]:
        self._search(0)
        return self.best_chosen, self.tied

    def _search(self, pos: int):
        self.nodes += 1
        if self.best is not None:
            bound = self._bound(pos)
            if bound < self.best or (bound == self.best and self.tied):
                return

        if pos == len(self.order):
            current = tuple(self.counts)
            if self.best is None or current > self.best:
                self.best, self.best_chosen, self.tied = current, list(self.chosen), False
            elif current == self.best:
                self.tied = True
            return

        v = self.order[pos]
        if self.blocked[v]:
            self._search(pos + 1)
            return

        # include first so optima are met in decreasing indicator order
        for u in self.neighbors[v]:
            self.blocked[u] += 1
        self.counts[self.levels[v]] += 1
        self.chosen.append(v)
        self._search(pos + 1)
        self.chosen.pop()
        self.counts[self.levels[v]] -= 1
        for u in self.neighbors[v]:
            self.blocked[u] -= 1

        # leaving out a vertex with no free later neighbour is strictly dominated
        if self._free_later_neighbor(v, pos):
            self._search(pos + 1)


def solve(atoms: list[AtomicInstruction], matrix: ConflictMatrix, config: HierarchyConfig = HierarchyConfig()) -> Resolution:
    """
    Lexicographically optimal conflict-free selection.

    Arguments:
        atoms: atomic instructions with contiguous ids.
        matrix: symmetric conflict matrix over the same ids.
        config: hierarchy depth K and tie-break rule.
    Returns:
        Resolution. The empty selection is always feasible, so there is no
        infeasible outcome.
    """
    levels = _check_inputs(atoms, matrix, config)
    graph = matrix.to_graph()

    selected: set[int] = set()
    nodes = 0
    tied: set[int] = set()
    for component in sorted(nx.connected_components(graph), key=min):
        order = sorted(component)
        if len(order) == 1:
            selected.add(order[0])
            nodes += 1
            continue
        neighbors = {v: sorted(graph.neighbors(v)) for v in order}
        search = _ComponentSearch(order, levels, neighbors, config.depth)
        chosen, component_tied = search.run()
        selected.update(chosen)
        nodes += search.nodes
        if component_tied:
            tied.update(order)

    assert all(not (i in selected and j in selected) for i, j in matrix.conflicts()), "selection violates a hard clause"

    resolution = Resolution(
        selected=frozenset(selected),
        rejected=frozenset(range(len(atoms))) - selected,
        objective=ObjectiveVector.of(levels, selected, config.depth),
        optimal=True,
        nodes_explored=nodes,
        tie_broken=bool(tied),
        tied=frozenset(tied),
    )
    log.info(
        f"Selected {len(resolution.selected)}/{len(atoms)} atoms, objective {list(resolution.objective.counts)}, "
        f"{nodes} search nodes"
    )
    return resolution


def _all_assignments(n: int) -> np.ndarray:
    # rows in decreasing lexicographic order of (z_0, ..., z_{n-1})
    values = np.arange(2**n - 1, -1, -1, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((values[:, None] >> shifts[None, :]) & 1).astype(bool)


def brute_force_solve(
    atoms: list[AtomicInstruction], matrix: ConflictMatrix, config: HierarchyConfig = HierarchyConfig()
) -> Resolution:
    """Exhaustive oracle with the same tie-breaking as solve. N <= 20."""
    levels = _check_inputs(atoms, matrix, config)
    n = len(atoms)
    if n > BRUTE_FORCE_LIMIT:
        raise TooLarge(f"Brute force is limited to {BRUTE_FORCE_LIMIT} atoms, got {n}")

    assignments = _all_assignments(n)
    feasible = np.ones(len(assignments), dtype=bool)
    for i, j in matrix.conflicts():
        feasible &= ~(assignments[:, i] & assignments[:, j])

    level_matrix = np.zeros((n, config.depth + 1), dtype=np.int64)
    level_matrix[np.arange(n), levels] = 1
    counts = assignments.astype(np.int64) @ level_matrix

    optimal = feasible.copy()
    for k in range(config.depth + 1):
        optimal &= counts[:, k] == counts[optimal, k].max()

    best = int(np.flatnonzero(optimal)[0])
    optima = assignments[optimal]
    tied: set[int] = set()
    for component in nx.connected_components(matrix.to_graph()):
        columns = sorted(component)
        if len(np.unique(optima[:, columns], axis=0)) > 1:
            tied.update(columns)

    selected = frozenset(int(i) for i in np.flatnonzero(assignments[best]))
    return Resolution(
        selected=selected,
        rejected=frozenset(range(n)) - selected,
        objective=ObjectiveVector(tuple(int(c) for c in counts[best])),
        optimal=True,
        nodes_explored=len(assignments),
        tie_broken=bool(optimal.sum() > 1),
        tied=frozenset(tied),
    )


def soft_weight(level: int, depth: int, base: int) -> int:
    return base ** (depth - level)


def to_weighted_cnf(
    atoms: list[AtomicInstruction], matrix: ConflictMatrix, config: HierarchyConfig = HierarchyConfig(), base: Optional[int] = None
) -> str:
    """
    Weighted-CNF text of the selection problem.

    Variable i+1 stands for atom i. Every atom gets a soft unit clause with
    weight base^(K - level); every conflict pair gets the hard clause
    -(i+1) -(j+1). base defaults to N + 1 and must exceed N.
    """
    levels = _check_inputs(atoms, matrix, config)
    n = len(atoms)
    base = n + 1 if base is None else base
    if base <= n:
        raise BaseTooSmall(f"Base {base} must exceed the number of atoms ({n}) for strict level dominance")

    formula = WCNF()
    for i, level in enumerate(levels):
        formula.append([i + 1], weight=soft_weight(level, config.depth, base))
    for i, j in matrix.conflicts():
        formula.append([-(i + 1), -(j + 1)])

    buffer = io.StringIO()
    formula.to_fp(buffer, comments=[f"c hier-resolve selection problem: {n} atoms, depth {config.depth}, base {base}"])
    return buffer.getvalue()


def parse_weighted_cnf(text: str) -> WCNF:
    return WCNF(from_string=text)


def _satisfied(assignments: np.ndarray, clause: list[int]) -> np.ndarray:
    satisfied = np.zeros(len(assignments), dtype=bool)
    for literal in clause:
        column = assignments[:, abs(literal) - 1]
        satisfied |= column if literal > 0 else ~column
    return satisfied


def solve_weighted_cnf(text: str) -> frozenset[int]:
    """
    Solve an exported weighted-CNF document by enumeration.

    Returns the zero-based ids of the true variables in the best assignment,
    ties broken the same way as solve.
    """
    formula = parse_weighted_cnf(text)
    n = formula.nv
    if n > BRUTE_FORCE_LIMIT:
        raise TooLarge(f"Brute force is limited to {BRUTE_FORCE_LIMIT} variables, got {n}")

    assignments = _all_assignments(n)
    feasible = np.ones(len(assignments), dtype=bool)
    for clause in formula.hard:
        feasible &= _satisfied(assignments, clause)

    scores = np.zeros(len(assignments), dtype=object)
    for clause, weight in zip(formula.soft, formula.wght):
        scores = scores + _satisfied(assignments, clause).astype(object) * int(weight)

    best_score = max(score for score, ok in zip(scores, feasible) if ok)
    best = next(row for row, (score, ok) in enumerate(zip(scores, feasible)) if ok and score == best_score)
    return frozenset(int(i) for i in np.flatnonzero(assignments[best]))


def check_maximal(atoms: list[AtomicInstruction], matrix: ConflictMatrix, resolution: Resolution) -> list[int]:
    """
    Rejected ids lacking a selected conflict partner at the same or a higher
    authority level. Any optimal resolution yields an empty list.
    """
    uncovered = []
    for r in sorted(resolution.rejected):
        level = atoms[r].authority.level
        partners = [j for j in matrix.neighbors(r) if j in resolution.selected and atoms[j].authority.level <= level]
        if not partners:
            uncovered.append(r)
    return uncovered
