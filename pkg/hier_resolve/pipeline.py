import logging
from dataclasses import dataclass
from typing import Optional

from hier_resolve.atomizer import AtomizerRules, atomize
from hier_resolve.config import AppConfig, build_detector, load_atomizer_rules
from hier_resolve.conflict_scan import ConflictMatrix, Detector, build_conflict_matrix
from hier_resolve.context_model import AtomicInstruction, Context
from hier_resolve.hier_solver import Resolution, solve
from hier_resolve.refiner import RefinedContext, refine

# Instantiate logger
log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ResolutionReport:
    atoms: list[AtomicInstruction]
    matrix: ConflictMatrix
    resolution: Resolution
    refined: RefinedContext

    def to_dict(self) -> dict:
        return {
            "atoms": [atom.to_dict() for atom in self.atoms],
            "matrix": self.matrix.to_dict(),
            "resolution": self.resolution.to_dict(),
            "refined": self.refined.to_dict(),
        }


def resolve_context(
    context: Context,
    detector: Optional[Detector] = None,
    config: AppConfig = AppConfig(),
    rules: Optional[AtomizerRules] = None,
    skip_assistant: bool = False,
) -> ResolutionReport:
    """
    Arguments:
        context: the conversation to resolve.
        detector: conflict detector; built from config when omitted.
        config: detector spec and hierarchy settings.
        rules: atomizer rule table; loaded from config when omitted.
        skip_assistant: leave chat history out of the atoms.
    Returns:
        ResolutionReport with the atoms, the conflict matrix, the solver
        resolution and the refined context.
    """
    rules = rules or load_atomizer_rules(config)
    detector = detector or build_detector(config)

    atoms = atomize(context, rules, config.hierarchy, skip_assistant=skip_assistant)
    config.hierarchy.check_levels(atoms)

    matrix = build_conflict_matrix(detector, atoms, config.detector)
    resolution = solve(atoms, matrix, config.hierarchy)
    refined = refine(atoms, resolution, matrix)

    log.info(f"Resolved context: {len(resolution.selected)} selected, {len(resolution.rejected)} overruled")
    return ResolutionReport(atoms, matrix, resolution, refined)
