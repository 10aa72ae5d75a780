"""
Pairwise conflict scanning over atomic instructions.

A conflict is registered only when a detector returns Contradiction for a
pair, in either direction. The resulting matrix is symmetric with a false
diagonal, since the solver's hard clause (not z_i or not z_j) is symmetric.
"""

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Protocol

import networkx as nx
import numpy as np

from hier_resolve.context_model import AtomicInstruction
from hier_resolve.errors import InvalidConflictMatrix

log = logging.getLogger(__name__)

MAX_PARALLELISM = 32


class Relation(str, Enum):
    ENTAILMENT = "entailment"
    NEUTRAL = "neutral"
    CONTRADICTION = "contradiction"


class DetectorBackend(str, Enum):
    RULE_BASED = "rule"
    EXTERNAL = "external"


class ScanScope(str, Enum):
    CROSS_LEVEL_ONLY = "cross_level"
    ALL_PAIRS = "all_pairs"


@dataclass(frozen=True)
class DetectorSpec:
    backend: DetectorBackend = DetectorBackend.RULE_BASED
    parallelism: int = 1
    scan_scope: ScanScope = ScanScope.ALL_PAIRS

    def __post_init__(self):
        if not 1 <= self.parallelism <= MAX_PARALLELISM:
            raise ValueError(f"parallelism must be within 1..{MAX_PARALLELISM}, got {self.parallelism}")


class Detector(Protocol):
    def detect(self, premise: str, hypothesis: str) -> Relation: ...


# Rule tables for the deterministic detector

_FORMATS = {
    "json": re.compile(r"\bjson\b"),
    "plain_text": re.compile(r"\bplain[\s-]?text\b|\bplaintext\b"),
    "markdown": re.compile(r"\bmarkdown\b"),
}

_LANGUAGE = re.compile(r"\b(?:in|into|using|use|speak)\s+(?:only\s+|the\s+)?(english|chinese|mandarin|spanish)\b")
_LANGUAGE_ALIASES = {"mandarin": "chinese"}

_NEGATION = re.compile(r"\b(?:not|never|no|without|avoid|don't|dont|cannot|can't)\b")

# A format or language mention only counts when one of these comes first in its clause
_DIRECTIVE = re.compile(
    r"^(?:format|output)\b"
    r"|\b(?:respond|reply|answer|write|use|return|provide|produce|translate|speak"
    r"|must|should|shall|please|need to|have to|make sure)\b"
)

_NUMBER_WORDS = {
    "a single": 1, "a": 1, "one": 1, "two": 2, "three": 3, "four": 4, "five": 5,
    "six": 6, "seven": 7, "eight": 8, "nine": 9, "ten": 10,
}
_NUMBER = r"(\d+|a single|one|two|three|four|five|six|seven|eight|nine|ten)"

_COUNT_UNITS = {
    "comma": r"commas?",
    "word": r"words?",
    "sentence": r"sentences?",
    "paragraph": r"paragraphs?",
    "section": r"sections?",
    "bullet": r"bullet points?|bullets?",
}

_TASK_HEAD = re.compile(r"\byour task is (?:to\s+)?([a-z]+)")

_FILLER = re.compile(
    r"^(?:(?:please|you|your response|always|also|only|must|should|shall|will|need to|have to|to)\s+)*"
)
_NEGATED_START = re.compile(r"^(?:do not|don't|dont|never|not|avoid|cannot|can't)\s+")
_CLAUSE_SPLIT = re.compile(r"[,;:.!?]|\b(?:and|but)\b")

INFINITY = float("inf")


def _normalise(text: str) -> str:
    text = text.lower().replace("’", "'").replace("“", '"').replace("”", '"')
    text = re.sub(r"\s+", " ", text).strip()
    return text.strip(" .!?")


def _clauses(text: str) -> list[str]:
    return [clause.strip() for clause in _CLAUSE_SPLIT.split(text) if clause.strip()]


def _directive_sets(clauses: list[str], finder) -> tuple[set, set]:
    required, forbidden = set(), set()
    for clause in clauses:
        directive = _DIRECTIVE.search(clause)
        if directive is None:
            continue
        for name, start in finder(clause):
            if directive.start() > start:
                continue
            negation = _NEGATION.search(clause)
            if negation and negation.start() < start:
                forbidden.add(name)
            else:
                required.add(name)
    return required, forbidden


def _format_mentions(clause: str):
    for name, pattern in _FORMATS.items():
        match = pattern.search(clause)
        if match:
            yield name, match.start()


def _language_mentions(clause: str):
    for match in _LANGUAGE.finditer(clause):
        language = match.group(1)
        yield _LANGUAGE_ALIASES.get(language, language), match.start()


def _exclusive(a: tuple[set, set], b: tuple[set, set]) -> bool:
    a_required, a_forbidden = a
    b_required, b_forbidden = b
    if a_required & b_forbidden or b_required & a_forbidden:
        return True
    return bool(a_required) and bool(b_required) and a_required.isdisjoint(b_required)


def _as_number(token: str) -> int:
    return int(token) if token.isdigit() else _NUMBER_WORDS[token]


def count_bounds(text: str) -> dict[str, tuple[float, float]]:
    """Collect [low, high] count bounds per unit (commas, words, ...) from a directive text."""
    bounds: dict[str, tuple[float, float]] = {}

    def tighten(unit, low, high):
        old_low, old_high = bounds.get(unit, (0, INFINITY))
        bounds[unit] = (max(old_low, low), min(old_high, high))

    for unit, noun in _COUNT_UNITS.items():
        for match in re.finditer(rf"\bexactly {_NUMBER} (?:{noun})\b", text):
            n = _as_number(match.group(1))
            tighten(unit, n, n)
        for match in re.finditer(rf"\b(?:at least|no fewer than|a minimum of|minimum of) {_NUMBER} (?:{noun})\b", text):
            tighten(unit, _as_number(match.group(1)), INFINITY)
        for match in re.finditer(rf"\b(?:at most|no more than|a maximum of|maximum of) {_NUMBER} (?:{noun})\b", text):
            tighten(unit, 0, _as_number(match.group(1)))
        for match in re.finditer(rf"\b(?:fewer than|less than) {_NUMBER} (?:{noun})\b", text):
            tighten(unit, 0, _as_number(match.group(1)) - 1)
        if re.search(rf"\b(?:not contain any|not include any|not use any|no|without any|without|zero) (?:{noun})\b", text):
            tighten(unit, 0, 0)
    return bounds


def _bounds_disjoint(a: dict, b: dict) -> bool:
    for unit in a.keys() & b.keys():
        low = max(a[unit][0], b[unit][0])
        high = min(a[unit][1], b[unit][1])
        if low > high:
            return True
    return False


def _strip_filler(clause: str) -> str:
    return _FILLER.sub("", clause).strip()


def polar_phrases(text: str) -> list[tuple[bool, str]]:
    """(negated, core verb phrase) for every clause of a normalised directive."""
    phrases = []
    for clause in _clauses(text):
        core = _strip_filler(clause)
        negated = _NEGATED_START.match(core)
        if negated:
            core = _strip_filler(core[negated.end():])
        if len(core.split()) >= 2:
            phrases.append((bool(negated), core))
    return phrases


def _polarity_flip(a: list, b: list) -> bool:
    for a_negated, a_core in a:
        for b_negated, b_core in b:
            if a_negated == b_negated:
                continue
            negative, positive = (a_core, b_core) if a_negated else (b_core, a_core)
            if positive == negative or positive.startswith(negative + " "):
                return True
    return False


def explain_conflict(premise: str, hypothesis: str) -> Optional[str]:
    """Name of the first contradiction pattern that fires, or None."""
    a, b = _normalise(premise), _normalise(hypothesis)
    a_clauses, b_clauses = _clauses(a), _clauses(b)

    if _exclusive(_directive_sets(a_clauses, _format_mentions), _directive_sets(b_clauses, _format_mentions)):
        return "format"
    if _exclusive(_directive_sets(a_clauses, _language_mentions), _directive_sets(b_clauses, _language_mentions)):
        return "language"
    if _bounds_disjoint(count_bounds(a), count_bounds(b)):
        return "count_bound"

    a_task, b_task = _TASK_HEAD.search(a), _TASK_HEAD.search(b)
    if a_task and b_task and a_task.group(1) != b_task.group(1):
        return "task_exclusivity"

    if _polarity_flip(polar_phrases(a), polar_phrases(b)):
        return "polarity"
    return None


def rule_based_detect(premise: str, hypothesis: str) -> Relation:
    """
    Deterministic relation classifier over a fixed pattern table.

    Duplicates (after normalisation) are Entailment; any contradiction
    pattern gives Contradiction; everything else is Neutral.
    """
    if _normalise(premise) == _normalise(hypothesis):
        return Relation.ENTAILMENT
    reason = explain_conflict(premise, hypothesis)
    if reason:
        log.debug(f"Contradiction ({reason}): {premise!r} vs {hypothesis!r}")
        return Relation.CONTRADICTION
    return Relation.NEUTRAL


class RuleBasedDetector:
    def detect(self, premise: str, hypothesis: str) -> Relation:
        return rule_based_detect(premise, hypothesis)


def detect_relation(detector: Detector, premise: AtomicInstruction, hypothesis: AtomicInstruction) -> Relation:
    if premise.id == hypothesis.id:
        return Relation.ENTAILMENT
    return detector.detect(premise.content, hypothesis.content)


@dataclass(frozen=True, eq=False)
class ConflictMatrix:
    n: int
    entries: np.ndarray
    relations: tuple[tuple[Optional[Relation], ...], ...]

    def __post_init__(self):
        if self.entries.shape != (self.n, self.n):
            raise InvalidConflictMatrix(f"Expected a {self.n}x{self.n} matrix, got shape {self.entries.shape}")
        if self.entries.diagonal().any():
            raise InvalidConflictMatrix("Conflict matrix diagonal must be false")
        if not np.array_equal(self.entries, self.entries.T):
            raise InvalidConflictMatrix("Conflict matrix must be symmetric")
        for i, j in self.conflicts():
            forward, backward = self.relations[i][j], self.relations[j][i]
            if forward is None and backward is None:
                continue
            if Relation.CONTRADICTION not in (forward, backward):
                raise InvalidConflictMatrix(f"Pair ({i}, {j}) is marked conflicting without a Contradiction relation")

    @classmethod
    def from_pairs(cls, n: int, pairs, relations=None) -> "ConflictMatrix":
        entries = np.zeros((n, n), dtype=bool)
        for i, j in pairs:
            if not (0 <= i < n and 0 <= j < n):
                raise InvalidConflictMatrix(f"Conflict pair ({i}, {j}) out of range for n={n}")
            if i == j:
                raise InvalidConflictMatrix(f"Self-conflict on instruction {i}")
            entries[i, j] = entries[j, i] = True
        if relations is None:
            relations = tuple(tuple(None for _ in range(n)) for _ in range(n))
        return cls(n, entries, relations)

    def has_conflict(self, i: int, j: int) -> bool:
        return bool(self.entries[i, j])

    def conflicts(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(np.triu(self.entries, k=1))
        return [(int(i), int(j)) for i, j in zip(rows, cols)]

    def neighbors(self, i: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.entries[i])]

    def to_graph(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n))
        graph.add_edges_from(self.conflicts())
        return graph

    def to_dict(self) -> dict:
        relations = {
            f"{i},{j}": relation.value
            for i, row in enumerate(self.relations)
            for j, relation in enumerate(row)
            if relation is not None
        }
        return {"n": self.n, "conflicts": [list(pair) for pair in self.conflicts()], "relations": relations}

    @classmethod
    def from_dict(cls, payload: dict) -> "ConflictMatrix":
        try:
            n = int(payload["n"])
            pairs = [(int(i), int(j)) for i, j in payload.get("conflicts", [])]
            grid = [[None] * n for _ in range(n)]
            for key, label in payload.get("relations", {}).items():
                i, j = (int(part) for part in key.split(","))
                grid[i][j] = Relation(label)
        except (KeyError, TypeError, ValueError, IndexError) as e:
            raise InvalidConflictMatrix(f"Invalid conflict matrix document: {e}")
        return cls.from_pairs(n, pairs, tuple(tuple(row) for row in grid))


def _scan_pairs(atoms: list[AtomicInstruction], scope: ScanScope) -> list[tuple[int, int]]:
    pairs = []
    for i, premise in enumerate(atoms):
        for j, hypothesis in enumerate(atoms):
            if i == j:
                continue
            if scope == ScanScope.CROSS_LEVEL_ONLY and premise.authority == hypothesis.authority:
                continue
            pairs.append((i, j))
    return pairs


def build_conflict_matrix(
    detector: Detector,
    atoms: list[AtomicInstruction],
    spec: DetectorSpec = DetectorSpec(),
) -> ConflictMatrix:
    """
    Query every ordered pair in scope and register Contradictions.

    Arguments:
        detector: relation backend.
        atoms: output of one atomization.
        spec: parallelism and scan scope.
    Returns:
        ConflictMatrix. Detector failures propagate; nothing defaults to Neutral.
    """
    n = len(atoms)
    pairs = _scan_pairs(atoms, spec.scan_scope)

    def query(pair):
        i, j = pair
        return detect_relation(detector, atoms[i], atoms[j])

    if spec.parallelism == 1 or len(pairs) < 2:
        results = [query(pair) for pair in pairs]
    else:
        pool = ThreadPoolExecutor(max_workers=spec.parallelism)
        try:
            results = list(pool.map(query, pairs))
        except BaseException:
            pool.shutdown(wait=True, cancel_futures=True)
            raise
        pool.shutdown(wait=True)

    grid: list[list[Optional[Relation]]] = [[None] * n for _ in range(n)]
    conflict_pairs = set()
    for (i, j), relation in zip(pairs, results):
        grid[i][j] = relation
        if relation == Relation.CONTRADICTION:
            conflict_pairs.add((min(i, j), max(i, j)))

    matrix = ConflictMatrix.from_pairs(n, sorted(conflict_pairs), tuple(tuple(row) for row in grid))
    log.info(f"Scanned {len(pairs)} ordered pairs over {n} atoms, {len(conflict_pairs)} conflicts registered")
    return matrix
