"""
Render a solver selection into a refined prompt.

The text rendering has up to three sections:

    ## Active Instructions   every selected atom, grouped by level
    ## Overruled             one notice per rejected atom (omitted when empty)
    ## Context Data          selected declarative atoms, verbatim (omitted when empty)

A JSON twin with the same content is produced by RefinedContext.to_dict().
"""

import logging
from dataclasses import dataclass
from enum import Enum

from hier_resolve.conflict_scan import ConflictMatrix
from hier_resolve.context_model import LEVEL_LABELS, AtomicInstruction, InstructionKind
from hier_resolve.errors import InconsistentResolution
from hier_resolve.hier_solver import Resolution

log = logging.getLogger(__name__)

ACTIVE_HEADER = "## Active Instructions"
OVERRULED_HEADER = "## Overruled"
CONTEXT_HEADER = "## Context Data"
RENDER_VERSION = 1


class ReasonCode(str, Enum):
    HIGHER_AUTHORITY = "higher_authority"
    SAME_LEVEL = "same_level"
    TIE_BREAK = "tie_break"


def _bullet(text: str) -> str:
    # continuation lines stay indented under their bullet
    return "- " + "\n  ".join(text.split("\n"))


@dataclass(frozen=True)
class RejectionNotice:
    instruction_id: int
    text: str
    overruled_by_id: int
    overruled_by: str
    reason: ReasonCode

    def render(self) -> str:
        return _bullet(f"{self.text} — overruled by: {self.overruled_by}")


@dataclass(frozen=True)
class RefinedContext:
    active_blocks: tuple[tuple[int, str], ...]
    rejection_notices: tuple[RejectionNotice, ...]
    context_data: tuple[str, ...]
    rendered: str

    def to_dict(self) -> dict:
        return {
            "version": RENDER_VERSION,
            "active_blocks": [
                {"level": level, "label": LEVEL_LABELS.get(level, f"level {level}"), "text": text}
                for level, text in self.active_blocks
            ],
            "rejection_notices": [
                {
                    "id": notice.instruction_id,
                    "text": notice.text,
                    "overruled_by_id": notice.overruled_by_id,
                    "overruled_by": notice.overruled_by,
                    "reason": notice.reason.value,
                }
                for notice in self.rejection_notices
            ],
            "context_data": list(self.context_data),
            "rendered": self.rendered,
        }


def _check_consistency(atoms: list[AtomicInstruction], resolution: Resolution, matrix: ConflictMatrix):
    ids = set(range(len(atoms)))
    if resolution.selected & resolution.rejected:
        raise InconsistentResolution("An instruction is both selected and rejected")
    if resolution.selected | resolution.rejected != ids:
        raise InconsistentResolution("Selected and rejected ids do not cover the atoms")
    if matrix.n != len(atoms):
        raise InconsistentResolution(f"Conflict matrix covers {matrix.n} ids, atoms {len(atoms)}")
    for i, j in matrix.conflicts():
        if i in resolution.selected and j in resolution.selected:
            raise InconsistentResolution(f"Selected instructions {i} and {j} conflict")


def _notice(atoms: list[AtomicInstruction], resolution: Resolution, matrix: ConflictMatrix, r: int) -> RejectionNotice:
    rejected = atoms[r]
    partners = [j for j in matrix.neighbors(r) if j in resolution.selected]
    if not partners:
        raise InconsistentResolution(f"Rejected instruction {r} has no conflicting selected instruction")
    partner = atoms[min(partners, key=lambda j: (atoms[j].authority.level, j))]

    if partner.authority.dominates(rejected.authority):
        reason = ReasonCode.HIGHER_AUTHORITY
    elif partner.authority == rejected.authority:
        reason = ReasonCode.TIE_BREAK if r in resolution.tied else ReasonCode.SAME_LEVEL
    else:
        raise InconsistentResolution(
            f"Rejected instruction {r} only conflicts with lower-authority selections"
        )
    return RejectionNotice(r, rejected.content, partner.id, partner.content, reason)


def render(active_blocks, notices, context_data) -> str:
    lines = [ACTIVE_HEADER]
    current_level = None
    for level, text in active_blocks:
        if level != current_level:
            lines.append(f"### Level {level} ({LEVEL_LABELS.get(level, f'level {level}')})")
            current_level = level
        lines.append(_bullet(text))

    if notices:
        lines += ["", OVERRULED_HEADER]
        lines += [notice.render() for notice in notices]

    if context_data:
        lines += ["", CONTEXT_HEADER]
        for index, text in enumerate(context_data):
            if index:
                lines.append("")
            lines.append(text)
    return "\n".join(lines) + "\n"


def refine(atoms: list[AtomicInstruction], resolution: Resolution, matrix: ConflictMatrix) -> RefinedContext:
    """
    Build the refined context for a resolution.

    Arguments:
        atoms: the atomized context.
        resolution: output of hier_solver.solve over the same atoms.
        matrix: the conflict matrix the resolution was computed from.
    Returns:
        RefinedContext. Each rejected atom is paired with its
        highest-authority conflicting selected atom (lowest id on ties).
    """
    _check_consistency(atoms, resolution, matrix)

    selected = [atom for atom in atoms if atom.id in resolution.selected]
    active = sorted(selected, key=lambda atom: (atom.authority.level, atom.id))
    active_blocks = tuple((atom.authority.level, atom.content) for atom in active)
    context_data = tuple(atom.content for atom in selected if atom.kind == InstructionKind.DECLARATIVE)
    notices = tuple(_notice(atoms, resolution, matrix, r) for r in sorted(resolution.rejected))

    rendered = render(active_blocks, notices, context_data)
    log.debug(f"Refined context: {len(active_blocks)} active, {len(notices)} overruled, {len(context_data)} data")
    return RefinedContext(active_blocks, notices, context_data, rendered)


def parse_active_section(rendered: str) -> list[str]:
    """Instruction texts listed under the Active Instructions header, in order."""
    texts = []
    inside = False
    for line in rendered.split("\n"):
        if line.startswith("## "):
            if inside:
                break
            inside = line.strip() == ACTIVE_HEADER
        elif not inside:
            continue
        elif line.startswith("- "):
            texts.append(line[2:])
        elif line.startswith("  ") and texts:
            texts[-1] += "\n" + line[2:]
    return texts
