"""
Rule-based decomposition of a conversation context into atomic instructions.

The pipeline is fixed:
    1. split the context by message, each message inheriting its role's authority
    2. split each message into sentence units on the delimiters (and newlines)
    3. classify every unit as imperative or declarative with the marker table
    4. optionally merge consecutive units of the same kind within a message
    5. number the atoms 0..N-1 in document order

Sentences are only split at a delimiter that is followed by whitespace, so
tokens such as "3.5" or "e.g.x" survive intact. Abbreviations are not handled.
"""

import json
import logging
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Union

import yaml

from hier_resolve.context_model import (
    AtomicInstruction,
    Context,
    HierarchyConfig,
    InstructionKind,
    Message,
    Role,
    authority_of,
)
from hier_resolve.errors import CapExceeded, ConfigError

log = logging.getLogger(__name__)

DEFAULT_RULES_RESOURCE = "atomizer_rules_v1.yaml"


@dataclass(frozen=True)
class ImperativeMarker:
    phrase: str
    anchored: bool
    pattern: re.Pattern = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        body = r"\s+".join(re.escape(word) for word in self.phrase.lower().split())
        prefix = r"^" if self.anchored else r"\b"
        object.__setattr__(self, "pattern", re.compile(prefix + body + r"\b", re.IGNORECASE))

    def matches(self, sentence: str) -> bool:
        return self.pattern.search(sentence) is not None


@dataclass(frozen=True)
class AtomizerRules:
    imperative_markers: tuple[ImperativeMarker, ...]
    sentence_delimiters: str = ".!?"
    merge_adjacent: bool = True
    splitter: re.Pattern = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.imperative_markers:
            raise ConfigError("Atomizer rules need at least one imperative marker")
        if not self.sentence_delimiters:
            raise ConfigError("Atomizer rules need at least one sentence delimiter")
        delimiters = re.escape(self.sentence_delimiters)
        object.__setattr__(self, "splitter", re.compile(rf"(?<=[{delimiters}])\s+"))

    @classmethod
    def from_dict(cls, payload: dict) -> "AtomizerRules":
        markers = [ImperativeMarker(verb, anchored=True) for verb in payload.get("leading_verbs", [])]
        markers += [ImperativeMarker(marker, anchored=False) for marker in payload.get("obligation_markers", [])]
        return cls(
            imperative_markers=tuple(markers),
            sentence_delimiters=str(payload.get("sentence_delimiters", ".!?")),
            merge_adjacent=bool(payload.get("merge_adjacent", True)),
        )


def load_rules(path: Optional[Union[str, Path]] = None) -> AtomizerRules:
    """
    Load an atomizer rule table.

    Arguments:
        path: YAML rule file. None loads the versioned table shipped with
            the package.
    Returns:
        AtomizerRules
    """
    if path is None:
        text = resources.files("hier_resolve").joinpath("data", DEFAULT_RULES_RESOURCE).read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    payload = yaml.safe_load(text) or {}
    if not isinstance(payload, dict):
        raise ConfigError(f"Atomizer rule file must be a mapping: {path}")
    return AtomizerRules.from_dict(payload)


def _normalise_sentence(sentence: str) -> str:
    # drop list bullets and opening quotes so anchored verbs still see the start
    return re.sub(r"^[\s\-\*•>\"'(\[]+", "", sentence).strip()


def classify_kind(sentence: str, rules: AtomizerRules) -> InstructionKind:
    """Imperative iff any marker fires on the sentence."""
    text = _normalise_sentence(sentence)
    if any(marker.matches(text) for marker in rules.imperative_markers):
        return InstructionKind.IMPERATIVE
    return InstructionKind.DECLARATIVE


def split_sentences(content: str, rules: AtomizerRules) -> list[str]:
    units = []
    for line in content.splitlines():
        for piece in rules.splitter.split(line):
            piece = piece.strip()
            if piece:
                units.append(piece)
    return units


def is_structured(content: str) -> bool:
    """True when the content parses as a JSON object/array or as XML."""
    text = content.strip()
    if not text:
        return False
    if text[0] in "[{":
        try:
            return isinstance(json.loads(text), (dict, list))
        except json.JSONDecodeError:
            return False
    if text.startswith("<") and text.endswith(">"):
        try:
            ET.fromstring(text)
            return True
        except ET.ParseError:
            return False
    return False


def _message_units(message: Message, rules: AtomizerRules) -> list[tuple[str, InstructionKind]]:
    if message.role == Role.TOOL and is_structured(message.content):
        return [(message.content.strip(), InstructionKind.DECLARATIVE)]

    units = [(sentence, classify_kind(sentence, rules)) for sentence in split_sentences(message.content, rules)]
    if not rules.merge_adjacent:
        return units

    merged: list[tuple[str, InstructionKind]] = []
    for sentence, kind in units:
        if merged and merged[-1][1] == kind:
            merged[-1] = (f"{merged[-1][0]} {sentence}", kind)
        else:
            merged.append((sentence, kind))
    return merged


def atomize(
    context: Context,
    rules: AtomizerRules,
    config: HierarchyConfig = HierarchyConfig(),
    skip_assistant: bool = False,
) -> list[AtomicInstruction]:
    """
    Decompose a context into atomic instructions.

    Arguments:
        context: the ordered conversation.
        rules: marker table and splitting options.
        config: hierarchy settings; max_instructions caps the atom count.
        skip_assistant: leave assistant (history) messages out entirely.
    Returns:
        Atoms with contiguous ids in document order. An empty context gives
        an empty list.
    """
    atoms: list[AtomicInstruction] = []
    for message in context.messages:
        if skip_assistant and message.role == Role.ASSISTANT:
            continue
        authority = authority_of(message.role)
        for content, kind in _message_units(message, rules):
            if len(atoms) >= config.max_instructions:
                raise CapExceeded(
                    f"Context yields more than {config.max_instructions} atomic instructions"
                )
            atoms.append(
                AtomicInstruction(
                    id=len(atoms),
                    content=content,
                    authority=authority,
                    source_role=message.role,
                    source_turn=message.turn_index,
                    kind=kind,
                )
            )

    log.info(f"Atomized {len(context.messages)} messages into {len(atoms)} atoms")
    return atoms
