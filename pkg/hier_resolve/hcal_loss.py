"""
Hierarchy-consistent alignment loss on length-normalised log-likelihoods.

With d = s_w - s_l (accepted minus rejected score):

    l_pref = softplus(-d / tau)                 logistic preference term
    l_sl   = softplus(-d) = -log q(y_w)         two-candidate semantic term
    l_kl   = KL(q_theta || q_ref)                over the same two candidates
    total  = l_pref + gamma * l_sl + beta * l_kl

q(y_w) = sigmoid(d). Every logistic quantity goes through softplus so no
large exponentials are evaluated. Gradients are analytic; grad_check
compares them with central finite differences.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from hier_resolve.errors import DegenerateReference, InvalidScores

log = logging.getLogger(__name__)


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return np.exp(-softplus(-x))


@dataclass(frozen=True)
class PreferenceScores:
    s_w: float
    s_l: float
    s_w_ref: Optional[float] = None
    s_l_ref: Optional[float] = None

    def __post_init__(self):
        if not (math.isfinite(self.s_w) and math.isfinite(self.s_l)):
            raise InvalidScores(f"Policy scores must be finite, got s_w={self.s_w}, s_l={self.s_l}")
        if (self.s_w_ref is None) != (self.s_l_ref is None):
            raise InvalidScores("Reference scores must be given for both responses or for neither")
        if self.has_reference and (math.isnan(self.s_w_ref) or math.isnan(self.s_l_ref)):
            raise InvalidScores("Reference scores must not be NaN")

    @property
    def has_reference(self) -> bool:
        return self.s_w_ref is not None

    @property
    def gap(self) -> float:
        return self.s_w - self.s_l

    @property
    def reference_gap(self) -> float:
        gap = self.s_w_ref - self.s_l_ref
        if not math.isfinite(gap):
            raise DegenerateReference(
                f"Reference distribution is degenerate (score gap {gap}); q_ref would be exactly 0 or 1"
            )
        return gap


@dataclass(frozen=True)
class LossParams:
    tau: float = 0.1
    gamma: float = 1.0
    beta: float = 0.1

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.gamma < 0 or self.beta < 0:
            raise ValueError(f"gamma and beta must be non-negative, got gamma={self.gamma}, beta={self.beta}")


@dataclass(frozen=True)
class LossBreakdown:
    l_pref: float
    l_sl: float
    l_kl: float
    total: float
    grad_s_w: float
    grad_s_l: float

    def to_dict(self) -> dict:
        return asdict(self)


def preference_loss(scores: PreferenceScores, tau: float) -> float:
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    return float(softplus(-scores.gap / tau))


def semantic_loss(scores: PreferenceScores) -> float:
    return float(softplus(-scores.gap))


def _kl_from_gaps(d, d_ref):
    q = sigmoid(d)
    kl = q * (softplus(-d_ref) - softplus(-d)) + (1.0 - q) * (softplus(d_ref) - softplus(d))
    return np.maximum(kl, 0.0)


def kl_term(scores: PreferenceScores) -> float:
    """Two-candidate divergence KL(q_theta || q_ref); 0 without reference scores."""
    if not scores.has_reference:
        return 0.0
    return float(_kl_from_gaps(scores.gap, scores.reference_gap))


def _gap_gradient(d: float, d_ref: Optional[float], params: LossParams) -> float:
    grad = -sigmoid(-d / params.tau) / params.tau
    grad += params.gamma * -sigmoid(-d)
    if d_ref is not None:
        q = sigmoid(d)
        grad += params.beta * q * (1.0 - q) * (d - d_ref)
    return float(grad)


def hcal(scores: PreferenceScores, params: LossParams = LossParams()) -> LossBreakdown:
    """
    Assemble all loss terms and the analytic gradients.

    Arguments:
        scores: accepted/rejected scores, optionally with reference scores.
        params: tau, gamma and beta.
    Returns:
        LossBreakdown where total is exactly l_pref + gamma*l_sl + beta*l_kl.
        grad_s_l is always -grad_s_w since every term depends on s_w - s_l only.
    """
    l_pref = preference_loss(scores, params.tau)
    l_sl = semantic_loss(scores)
    l_kl = kl_term(scores)
    total = l_pref + params.gamma * l_sl + params.beta * l_kl

    d_ref = scores.reference_gap if scores.has_reference else None
    grad = _gap_gradient(scores.gap, d_ref, params)
    return LossBreakdown(l_pref, l_sl, l_kl, total, grad, -grad)


def grad_check(scores: PreferenceScores, params: LossParams, epsilon: float = 1e-6) -> float:
    """
    Max relative error between central differences of total and the
    analytic gradients, relative to max(|numeric|, |analytic|, 1).
    """
    if not 0 < epsilon <= 1e-3:
        raise ValueError(f"epsilon must be in (0, 1e-3], got {epsilon}")
    analytic = hcal(scores, params)

    def total(s_w, s_l):
        return hcal(PreferenceScores(s_w, s_l, scores.s_w_ref, scores.s_l_ref), params).total

    numeric_w = (total(scores.s_w + epsilon, scores.s_l) - total(scores.s_w - epsilon, scores.s_l)) / (2 * epsilon)
    numeric_l = (total(scores.s_w, scores.s_l + epsilon) - total(scores.s_w, scores.s_l - epsilon)) / (2 * epsilon)

    errors = [
        abs(numeric - exact) / max(abs(numeric), abs(exact), 1.0)
        for numeric, exact in ((numeric_w, analytic.grad_s_w), (numeric_l, analytic.grad_s_l))
    ]
    return max(errors)


def batch_hcal(batch: Sequence[PreferenceScores], params: LossParams = LossParams()) -> LossBreakdown:
    """Mean of every LossBreakdown field over a batch, evaluated with numpy arrays."""
    if not batch:
        raise InvalidScores("batch_hcal needs at least one example")
    d = np.array([scores.gap for scores in batch], dtype=float)
    has_ref = np.array([scores.has_reference for scores in batch])
    d_ref = np.array([scores.reference_gap if scores.has_reference else 0.0 for scores in batch], dtype=float)

    l_pref = softplus(-d / params.tau)
    l_sl = softplus(-d)
    l_kl = np.where(has_ref, _kl_from_gaps(d, d_ref), 0.0)
    total = l_pref + params.gamma * l_sl + params.beta * l_kl

    q = sigmoid(d)
    grad = -sigmoid(-d / params.tau) / params.tau - params.gamma * sigmoid(-d)
    grad = grad + np.where(has_ref, params.beta * q * (1.0 - q) * (d - d_ref), 0.0)

    log.debug(f"Evaluated HCAL over a batch of {len(batch)}")
    return LossBreakdown(
        l_pref=float(l_pref.mean()),
        l_sl=float(l_sl.mean()),
        l_kl=float(l_kl.mean()),
        total=float(total.mean()),
        grad_s_w=float(grad.mean()),
        grad_s_l=float(-grad.mean()),
    )


def dpo_loss(scores: PreferenceScores, beta: float = 0.1) -> float:
    """Reference-anchored logistic preference loss: softplus(-beta * ((s_w - s_w_ref) - (s_l - s_l_ref)))."""
    if not scores.has_reference:
        raise InvalidScores("dpo_loss requires reference scores")
    margin = scores.gap - scores.reference_gap
    return float(softplus(-beta * margin))


def _score(record: dict, scalar_key: str, tokens_key: str) -> Optional[float]:
    if scalar_key in record and record[scalar_key] is not None:
        try:
            return float(record[scalar_key])
        except (TypeError, ValueError):
            raise InvalidScores(f"{scalar_key} must be a number, got {record[scalar_key]!r}")
    if tokens_key in record and record[tokens_key] is not None:
        try:
            logps = np.asarray(record[tokens_key], dtype=float)
        except (TypeError, ValueError):
            raise InvalidScores(f"{tokens_key} must be a list of numbers")
        if logps.ndim != 1 or logps.size == 0:
            raise InvalidScores(f"{tokens_key} must be a non-empty list of token log-probabilities")
        # length normalisation: mean over tokens
        return float(logps.mean())
    return None


def scores_from_record(record: dict) -> PreferenceScores:
    """
    Read one loss input line: either scalar scores (s_w, s_l, s_w_ref, s_l_ref)
    or per-token log-probabilities (logp_w, logp_l, logp_w_ref, logp_l_ref).
    """
    s_w = _score(record, "s_w", "logp_w")
    s_l = _score(record, "s_l", "logp_l")
    if s_w is None or s_l is None:
        raise InvalidScores("Each record needs s_w/s_l or logp_w/logp_l")
    return PreferenceScores(
        s_w=s_w,
        s_l=s_l,
        s_w_ref=_score(record, "s_w_ref", "logp_w_ref"),
        s_l_ref=_score(record, "s_l_ref", "logp_l_ref"),
    )
