"""Hierarchical instruction resolution package."""

import os
from hier_resolve.context_model import Context, AtomicInstruction, HierarchyConfig, load_context
from hier_resolve.atomizer import atomize, load_rules
from hier_resolve.conflict_scan import ConflictMatrix, DetectorSpec, RuleBasedDetector, build_conflict_matrix
from hier_resolve.hier_solver import brute_force_solve, solve, to_weighted_cnf
from hier_resolve.refiner import refine
from hier_resolve.verifier import evaluate
from hier_resolve.hcal_loss import LossParams, PreferenceScores, hcal
from hier_resolve.dataset_builder import assemble_record, build_corpus, validate_case
from hier_resolve.pipeline import resolve_context

package_root = os.path.dirname(os.path.abspath(__file__))
