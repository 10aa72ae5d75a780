"""Messages, roles, authority levels and atomic instructions.

Authority follows a strict order where a lower level index means higher
authority: system (0) over user (1) over tool output, documents and chat
history (2).
"""

import json
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Union

from hier_resolve.errors import ContextFormatError, HierarchyDepthError

log = logging.getLogger(__name__)


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"
    TOOL = "tool"

    @classmethod
    def parse(cls, value: str) -> "Role":
        """Case-insensitive lookup used when ingesting context JSON."""
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ContextFormatError(f"Unknown message role: {value!r}")


class InstructionKind(str, Enum):
    IMPERATIVE = "imperative"
    DECLARATIVE = "declarative"


class TieBreak(str, Enum):
    LOWEST_INDEX_FIRST = "lowest_index_first"


@dataclass(frozen=True, order=True)
class AuthorityLevel:
    level: int

    def __post_init__(self):
        if self.level < 0:
            raise ValueError(f"Authority level must be non-negative, got {self.level}")

    def dominates(self, other: "AuthorityLevel") -> bool:
        return self.level < other.level

    @property
    def label(self) -> str:
        return LEVEL_LABELS.get(self.level, f"level {self.level}")


LEVEL_LABELS = {0: "system", 1: "user", 2: "tool/history"}

_ROLE_AUTHORITY = {
    Role.SYSTEM: AuthorityLevel(0),
    Role.USER: AuthorityLevel(1),
    Role.TOOL: AuthorityLevel(2),
    # chat history folds into the lowest tier
    Role.ASSISTANT: AuthorityLevel(2),
}


def authority_of(role: Role) -> AuthorityLevel:
    """Return the fixed authority level of a message role."""
    return _ROLE_AUTHORITY[role]


def dominates(a: AuthorityLevel, b: AuthorityLevel) -> bool:
    """True iff level a has strictly higher authority than level b."""
    return a.level < b.level


@dataclass(frozen=True)
class Message:
    role: Role
    content: str
    turn_index: int

    def to_dict(self) -> dict:
        return {"role": self.role.value, "content": self.content}


@dataclass(frozen=True)
class Context:
    messages: tuple[Message, ...] = ()

    def __post_init__(self):
        previous = -1
        for message in self.messages:
            if message.turn_index <= previous:
                raise ContextFormatError(
                    f"turn_index must be strictly increasing, got {message.turn_index} after {previous}"
                )
            previous = message.turn_index

    @classmethod
    def from_dict(cls, payload: dict) -> "Context":
        if not isinstance(payload, dict) or not isinstance(payload.get("messages"), list):
            raise ContextFormatError('Context JSON must be an object with a "messages" list')
        messages = []
        for index, item in enumerate(payload["messages"]):
            if not isinstance(item, dict) or "role" not in item:
                raise ContextFormatError(f"Message {index} has no role")
            content = item.get("content", "")
            if not isinstance(content, str):
                raise ContextFormatError(f"Message {index} content must be a string")
            messages.append(Message(Role.parse(item["role"]), content, index))
        return cls(tuple(messages))

    def to_dict(self) -> dict:
        return {"messages": [message.to_dict() for message in self.messages]}


def load_context(source: Union[str, bytes, dict]) -> Context:
    """
    Parse the context ingestion format.

    Arguments:
        source: JSON text or an already decoded object of the form
            {"messages": [{"role": "system", "content": "..."}]}
    Returns:
        Context with turn indexes assigned in document order.
    """
    if isinstance(source, dict):
        return Context.from_dict(source)
    try:
        payload = json.loads(source)
    except json.JSONDecodeError as e:
        raise ContextFormatError(f"Context is not valid JSON: {e}")
    context = Context.from_dict(payload)
    log.debug(f"Loaded context with {len(context.messages)} messages")
    return context


@dataclass(frozen=True)
class AtomicInstruction:
    id: int
    content: str
    authority: AuthorityLevel
    source_role: Role
    source_turn: int
    kind: InstructionKind

    def __post_init__(self):
        if not self.content.strip():
            raise ValueError(f"Atom {self.id} has empty content")
        if self.authority != authority_of(self.source_role):
            raise ValueError(
                f"Atom {self.id} authority {self.authority.level} does not match role {self.source_role.value}"
            )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "content": self.content,
            "authority": self.authority.level,
            "source_role": self.source_role.value,
            "source_turn": self.source_turn,
            "kind": self.kind.value,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "AtomicInstruction":
        try:
            return cls(
                id=int(payload["id"]),
                content=payload["content"],
                authority=AuthorityLevel(int(payload["authority"])),
                source_role=Role.parse(payload["source_role"]),
                source_turn=int(payload["source_turn"]),
                kind=InstructionKind(payload["kind"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ContextFormatError(f"Invalid atom record {payload!r}: {e}")


def atoms_from_list(items: list[dict]) -> list[AtomicInstruction]:
    """Decode an atom list and check the ids are contiguous from zero."""
    atoms = [AtomicInstruction.from_dict(item) for item in items]
    for position, atom in enumerate(atoms):
        if atom.id != position:
            raise ContextFormatError(f"Atom ids must be contiguous from 0, found {atom.id} at {position}")
    return atoms


@dataclass(frozen=True)
class HierarchyConfig:
    """
    Parameters:
        depth: K, the number of authority levels minus one.
        tie_break: rule used to pick among co-optimal selections.
        max_instructions: hard cap on atoms per context.
    """

    depth: int = 2
    tie_break: TieBreak = TieBreak.LOWEST_INDEX_FIRST
    max_instructions: int = 512

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError(f"Hierarchy depth must be >= 0, got {self.depth}")
        if self.max_instructions < 1:
            raise ValueError(f"max_instructions must be >= 1, got {self.max_instructions}")

    def check_levels(self, atoms: list[AtomicInstruction]) -> None:
        for atom in atoms:
            if atom.authority.level > self.depth:
                raise HierarchyDepthError(
                    f"Atom {atom.id} has authority {atom.authority.level} but hierarchy depth is {self.depth}"
                )
