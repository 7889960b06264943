"""Token-distribution arithmetic: softmax, divergences, and derived gates.

All vector math runs on one-dimensional float64 numpy arrays indexed by
token id. Probabilities are floored at ``PROB_EPS`` before every logarithm
so that zero entries never produce NaNs, and every divergence is clamped to
be non-negative on return so that floating-point cancellation cannot leak a
tiny negative value into downstream gates.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ParameterError

# Floor applied to probabilities before every log.
PROB_EPS = 1e-12

# A probability vector must sum to one within this tolerance.
PROB_SUM_TOL = 1e-9

JS_MIXTURE = "mixture"
JS_SYMMETRIZED = "symmetrized"


class Kind(enum.Enum):
    """What the values of a :class:`TokenDistribution` mean."""

    LOGITS = "logits"
    PROBS = "probs"


class DivergenceKind(enum.Enum):
    """Supported measures of disparity between two probability vectors."""

    FKL = "fkl"
    RKL = "rkl"
    JS = "js"
    TVD = "tvd"
    EMD = "emd"

    @classmethod
    def parse(cls, name: str) -> "DivergenceKind":
        try:
            return cls(name.strip().lower())
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise ParameterError(
                f"unknown divergence {name!r} (choices: {choices})"
            ) from None


@dataclass(frozen=True)
class TokenDistribution:
    """A vector over the vocabulary, tagged as logits or probabilities."""

    values: np.ndarray
    kind: Kind

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1:
            raise ParameterError(f"values must be 1-D, got shape {arr.shape}")
        if arr.size < 1:
            raise ParameterError("values must not be empty")
        if self.kind is Kind.PROBS:
            if not np.all(np.isfinite(arr)):
                raise ParameterError("probabilities must be finite")
            if np.any(arr < 0.0):
                raise ParameterError("probabilities must be non-negative")
            total = float(arr.sum())
            if abs(total - 1.0) > PROB_SUM_TOL:
                raise ParameterError(
                    f"probabilities sum to {total!r}, expected 1 within {PROB_SUM_TOL}"
                )
        elif self.kind is Kind.LOGITS:
            if not np.all(np.isfinite(arr)):
                raise ParameterError("logits must be finite")
        else:
            raise ParameterError(f"unknown distribution kind: {self.kind!r}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def vocab_size(self) -> int:
        return int(self.values.size)


def softmax(logits: Sequence[float] | np.ndarray, temperature: float = 1.0) -> TokenDistribution:
    """Temperature-scaled softmax over a finite logit vector.

    Computed as ``exp((l - max(l/t)) / t)`` normalized, which is exact up to
    rounding and immune to overflow for any finite input.
    """
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 1:
        raise ParameterError(f"logits must be 1-D, got shape {arr.shape}")
    if arr.size < 2:
        raise ParameterError("softmax needs a vocabulary of at least 2 tokens")
    if not np.all(np.isfinite(arr)):
        raise ParameterError("logits must be finite")
    if not (isinstance(temperature, (int, float)) and math.isfinite(temperature)) or temperature <= 0:
        raise ParameterError(f"temperature must be a positive finite real, got {temperature!r}")
    scaled = arr / float(temperature)
    scaled -= scaled.max()
    exps = np.exp(scaled)
    probs = exps / exps.sum()
    return TokenDistribution(probs, Kind.PROBS)


def _check_pair(p: TokenDistribution, q: TokenDistribution) -> tuple[np.ndarray, np.ndarray]:
    if not isinstance(p, TokenDistribution) or not isinstance(q, TokenDistribution):
        raise ParameterError("divergence operands must be TokenDistribution instances")
    if p.kind is not Kind.PROBS or q.kind is not Kind.PROBS:
        raise ParameterError("divergence operands must be probability distributions")
    if p.vocab_size != q.vocab_size:
        raise ParameterError(
            f"vocabulary sizes differ: {p.vocab_size} vs {q.vocab_size}"
        )
    return p.values, q.values


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    logp = np.log(np.maximum(p, PROB_EPS))
    logq = np.log(np.maximum(q, PROB_EPS))
    return float(np.sum(p * (logp - logq)))


def divergence(
    kind: DivergenceKind,
    p: TokenDistribution,
    q: TokenDistribution,
    *,
    js_form: str = JS_MIXTURE,
) -> float:
    """Disparity between two probability vectors of equal length.

    ``FKL`` is KL(p||q), ``RKL`` is KL(q||p). ``JS`` defaults to the
    mixture form ``0.5*(KL(p||m) + KL(q||m))`` with ``m = (p+q)/2``, which
    is bounded by ln 2; ``js_form="symmetrized"`` selects the unbounded
    symmetrized sum ``0.5*(KL(p||q) + KL(q||p))`` instead. ``TVD`` is half
    the L1 distance. ``EMD`` is earth mover's distance on the token line
    with unit spacing, computed as the L1 distance between the CDFs.
    """
    pa, qa = _check_pair(p, q)
    if kind is DivergenceKind.FKL:
        val = _kl(pa, qa)
    elif kind is DivergenceKind.RKL:
        val = _kl(qa, pa)
    elif kind is DivergenceKind.JS:
        if js_form == JS_MIXTURE:
            m = 0.5 * (pa + qa)
            val = 0.5 * (_kl(pa, m) + _kl(qa, m))
        elif js_form == JS_SYMMETRIZED:
            val = 0.5 * (_kl(pa, qa) + _kl(qa, pa))
        else:
            raise ParameterError(
                f"js_form must be {JS_MIXTURE!r} or {JS_SYMMETRIZED!r}, got {js_form!r}"
            )
    elif kind is DivergenceKind.TVD:
        val = 0.5 * float(np.abs(pa - qa).sum())
    elif kind is DivergenceKind.EMD:
        val = float(np.abs(np.cumsum(pa - qa)).sum())
    else:
        raise ParameterError(f"unknown divergence kind: {kind!r}")
    return max(0.0, val)


def alpha_from_delta(delta: float) -> float:
    """Map a divergence value to a suppression strength in [0, 1).

    ``alpha = ln(1 + delta) / (1 + ln(1 + delta))``: zero exactly at
    ``delta = 0``, strictly increasing, and below one for every finite
    ``delta``.
    """
    if not isinstance(delta, (int, float)) or math.isnan(delta):
        raise ParameterError(f"delta must be a real number, got {delta!r}")
    if math.isinf(delta):
        raise ParameterError("delta must be finite")
    if delta < 0.0:
        # Divergences are clamped at zero, so anything below is a caller bug.
        raise ParameterError(f"delta must be non-negative, got {delta!r}")
    grown = math.log1p(delta)
    return grown / (1.0 + grown)


def log_prob_diff(
    p_toxic: TokenDistribution,
    p_base: TokenDistribution,
    *,
    eps: float = PROB_EPS,
) -> np.ndarray:
    """Per-token log-probability advantage of the toxic distribution.

    Returns ``log(p_toxic) - log(p_base)`` where the toxic side is strictly
    more probable (after flooring both at ``eps``), and ``-inf`` everywhere
    else, so downstream top-k selection can only ever pick tokens the toxic
    model genuinely prefers.
    """
    ta, ba = _check_pair(p_toxic, p_base)
    if not (0.0 < eps <= 1e-6):
        raise ParameterError(f"eps must lie in (0, 1e-6], got {eps!r}")
    diff = np.log(np.maximum(ta, eps)) - np.log(np.maximum(ba, eps))
    return np.where(diff > 0.0, diff, -np.inf)
