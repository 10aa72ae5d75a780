import pytest

from hier_resolve.context_model import (
    AtomicInstruction,
    AuthorityLevel,
    HierarchyConfig,
    InstructionKind,
    Role,
    atoms_from_list,
    authority_of,
    dominates,
    load_context,
)
from hier_resolve.errors import ContextFormatError, HierarchyDepthError


def test_role_authority_order():
    assert authority_of(Role.SYSTEM) == AuthorityLevel(0)
    assert authority_of(Role.USER) == AuthorityLevel(1)
    assert authority_of(Role.TOOL) == AuthorityLevel(2)
    assert authority_of(Role.ASSISTANT) == AuthorityLevel(2)


def test_dominance_is_strict():
    system, user, tool = AuthorityLevel(0), AuthorityLevel(1), AuthorityLevel(2)
    assert dominates(system, user)
    assert dominates(user, tool)
    assert dominates(system, tool)
    assert not dominates(user, user)
    assert not dominates(tool, system)
    assert system.dominates(tool)


def test_negative_level_rejected():
    with pytest.raises(ValueError):
        AuthorityLevel(-1)


def test_role_parse_is_case_insensitive():
    assert Role.parse(" System ") == Role.SYSTEM
    with pytest.raises(ContextFormatError):
        Role.parse("moderator")


def test_load_context_assigns_turns(ad_context):
    assert [m.role for m in ad_context.messages] == [Role.SYSTEM, Role.USER, Role.USER, Role.TOOL]
    assert [m.turn_index for m in ad_context.messages] == [0, 1, 2, 3]


def test_load_context_accepts_dict():
    context = load_context({"messages": [{"role": "user", "content": "Hi."}]})
    assert context.messages[0].content == "Hi."
    assert context.to_dict() == {"messages": [{"role": "user", "content": "Hi."}]}


@pytest.mark.parametrize(
    "source",
    [
        "not json",
        '{"msgs": []}',
        '{"messages": [{"content": "no role"}]}',
        '{"messages": [{"role": "user", "content": 3}]}',
        '{"messages": [{"role": "narrator", "content": "x"}]}',
    ],
)
def test_load_context_rejects_malformed(source):
    with pytest.raises(ContextFormatError):
        load_context(source)


def test_empty_context():
    assert load_context('{"messages": []}').messages == ()


def test_atom_authority_must_match_role():
    with pytest.raises(ValueError):
        AtomicInstruction(0, "Do it.", AuthorityLevel(0), Role.USER, 0, InstructionKind.IMPERATIVE)


def test_atom_content_must_not_be_blank():
    with pytest.raises(ValueError):
        AtomicInstruction(0, "   ", AuthorityLevel(1), Role.USER, 0, InstructionKind.IMPERATIVE)


def test_atoms_from_list_round_trip(ad_atoms):
    decoded = atoms_from_list([atom.to_dict() for atom in ad_atoms])
    assert decoded == ad_atoms


def test_atoms_from_list_requires_contiguous_ids(ad_atoms):
    items = [atom.to_dict() for atom in ad_atoms]
    items[1]["id"] = 7
    with pytest.raises(ContextFormatError):
        atoms_from_list(items)


def test_atoms_from_list_rejects_bad_records():
    with pytest.raises(ContextFormatError):
        atoms_from_list([{"id": 0, "content": "x"}])


def test_hierarchy_config_checks_depth(ad_atoms):
    HierarchyConfig(depth=2).check_levels(ad_atoms)
    with pytest.raises(HierarchyDepthError):
        HierarchyConfig(depth=1).check_levels(ad_atoms)


@pytest.mark.parametrize("kwargs", [{"depth": -1}, {"max_instructions": 0}])
def test_hierarchy_config_validation(kwargs):
    with pytest.raises(ValueError):
        HierarchyConfig(**kwargs)
