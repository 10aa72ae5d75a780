import json
from pathlib import Path

import pytest

from hier_resolve.atomizer import atomize, load_rules
from hier_resolve.conflict_scan import RuleBasedDetector, build_conflict_matrix
from hier_resolve.context_model import (
    AtomicInstruction,
    InstructionKind,
    Role,
    authority_of,
    load_context,
)

FIXTURES = Path(__file__).parent / "fixtures"

_ROLE_FOR_LEVEL = {0: Role.SYSTEM, 1: Role.USER, 2: Role.TOOL}


def atoms_with_levels(levels, kind=InstructionKind.IMPERATIVE):
    """Synthetic atoms, one per level entry, ids in order."""
    atoms = []
    for i, level in enumerate(levels):
        role = _ROLE_FOR_LEVEL[level]
        atoms.append(
            AtomicInstruction(
                id=i,
                content=f"instruction {i}",
                authority=authority_of(role),
                source_role=role,
                source_turn=i,
                kind=kind,
            )
        )
    return atoms


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def rules():
    return load_rules()


@pytest.fixture
def ad_context():
    return load_context((FIXTURES / "diaper_ad.json").read_text(encoding="utf-8"))


@pytest.fixture
def ad_atoms(ad_context, rules):
    return atomize(ad_context, rules)


@pytest.fixture
def ad_matrix(ad_atoms):
    return build_conflict_matrix(RuleBasedDetector(), ad_atoms)


@pytest.fixture
def conflict_record() -> dict:
    return json.loads((FIXTURES / "conflict_record.json").read_text(encoding="utf-8"))
