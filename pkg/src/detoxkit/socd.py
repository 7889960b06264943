"""Decoding-time logit intervention and the sampling loop built on it.

The core step compares next-token distributions from a base model and a
deliberately toxic model, turns their divergence into an adaptive strength
``alpha``, picks the ``k`` tokens the toxic model most prefers, and pushes
those logits down by ``alpha`` times the magnitude of the toxic logit. A
plain contrastive step and a pass-through mode share the same sampling loop
so ablations differ only in the logit transform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Literal, Sequence

import numpy as np

from .distributions import (
    DivergenceKind,
    alpha_from_delta,
    divergence,
    log_prob_diff,
    softmax,
)
from .errors import ConfigError, ParameterError, ProviderError

if TYPE_CHECKING:  # pragma: no cover
    from .providers import DistributionProvider

DecodeMode = Literal["socd", "vanilla-cd", "prompt-only"]
DECODE_MODES = ("socd", "vanilla-cd", "prompt-only")


@dataclass(frozen=True)
class SoCDConfig:
    """Free parameters of the suppression step and the decode loop.

    ``k_max=None`` means "half the vocabulary", resolved per call as
    ``floor(V / 2)``. ``eos_token=None`` disables both early stopping and
    the rule that keeps the end-of-sequence token out of the suppressed
    set. ``epsilon_floor`` is the probability floor used when computing the
    per-token log-probability advantage.
    """

    divergence: DivergenceKind = DivergenceKind.EMD
    k_min: int = 10
    k_max: int | None = None
    epsilon_floor: float = 1e-12
    max_new_tokens: int = 256
    eos_token: int | None = None
    js_form: str = "mixture"
    temperature_mode: Literal["shared", "final"] = "shared"

    def __post_init__(self):
        if not isinstance(self.divergence, DivergenceKind):
            raise ConfigError(f"divergence must be a DivergenceKind, got {self.divergence!r}")
        if not isinstance(self.k_min, int) or self.k_min < 1:
            raise ConfigError(f"k_min must be a positive integer, got {self.k_min!r}")
        if self.k_max is not None:
            if not isinstance(self.k_max, int) or self.k_max < 1:
                raise ConfigError(f"k_max must be a positive integer or None, got {self.k_max!r}")
            if self.k_max < self.k_min:
                raise ConfigError(f"k_max ({self.k_max}) must be >= k_min ({self.k_min})")
        if not (0.0 < self.epsilon_floor <= 1e-6):
            raise ConfigError(
                f"epsilon_floor must lie in (0, 1e-6], got {self.epsilon_floor!r}"
            )
        if not isinstance(self.max_new_tokens, int) or self.max_new_tokens < 1:
            raise ConfigError(
                f"max_new_tokens must be a positive integer, got {self.max_new_tokens!r}"
            )
        if self.eos_token is not None and (not isinstance(self.eos_token, int) or self.eos_token < 0):
            raise ConfigError(f"eos_token must be a non-negative integer or None, got {self.eos_token!r}")
        if self.temperature_mode not in ("shared", "final"):
            raise ConfigError(f"temperature_mode must be 'shared' or 'final', got {self.temperature_mode!r}")

    def resolve_k(self, vocab_size: int) -> tuple[int, int]:
        """Effective (k_min, k_max) for a concrete vocabulary size."""
        k_max = vocab_size // 2 if self.k_max is None else self.k_max
        if not (1 <= self.k_min <= k_max <= vocab_size):
            raise ConfigError(
                f"need 1 <= k_min <= k_max <= V, got k_min={self.k_min}, "
                f"k_max={k_max}, V={vocab_size}"
            )
        return self.k_min, k_max


@dataclass(frozen=True)
class SoCDStepTrace:
    """Intermediate quantities of one suppression step, for inspection."""

    delta: float
    alpha: float
    k: int
    selected_indices: frozenset[int]
    suppressed_logits: np.ndarray


def _as_logit_array(logits, name: str) -> np.ndarray:
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 1:
        raise ParameterError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} must be finite (no NaN or infinity)")
    return arr


def socd_step(
    base_logits,
    toxic_logits,
    temperature: float,
    cfg: SoCDConfig,
) -> tuple[np.ndarray, SoCDStepTrace]:
    """One adaptive suppression step over a pair of logit vectors.

    Returns the adjusted logits (same scale as ``base_logits``) and a trace.
    Tokens outside the selected set keep their base logits bit for bit, so
    when the two inputs induce identical distributions the output equals
    the base logits exactly.
    """
    base = _as_logit_array(base_logits, "base_logits")
    toxic = _as_logit_array(toxic_logits, "toxic_logits")
    if base.size != toxic.size:
        raise ParameterError(
            f"logit vectors disagree on vocabulary size: {base.size} vs {toxic.size}"
        )
    vocab = base.size
    k_min, k_max = cfg.resolve_k(vocab)
    if cfg.eos_token is not None and cfg.eos_token >= vocab:
        raise ConfigError(f"eos_token {cfg.eos_token} out of range for V={vocab}")

    p_base = softmax(base, temperature)
    p_toxic = softmax(toxic, temperature)
    delta = divergence(cfg.divergence, p_base, p_toxic, js_form=cfg.js_form)
    alpha = alpha_from_delta(delta)
    k = int(min(max(math.ceil(alpha * vocab), k_min), k_max))

    diff = log_prob_diff(p_toxic, p_base, eps=cfg.epsilon_floor)
    if cfg.eos_token is not None:
        # The stop token is never suppressed; excluding it before selection
        # keeps |selected| = min(k, #finite) exact.
        diff[cfg.eos_token] = -np.inf

    finite = int(np.isfinite(diff).sum())
    take = min(k, finite)
    if take > 0:
        # Stable sort on (-diff, index): largest advantage first, ties by
        # lowest token id.
        order = np.argsort(-diff, kind="stable")[:take]
        selected = frozenset(int(i) for i in order)
    else:
        order = np.empty(0, dtype=np.intp)
        selected = frozenset()

    suppression = np.zeros(vocab, dtype=np.float64)
    if take > 0:
        suppression[order] = alpha * np.abs(toxic[order])
    adjusted = base.copy()
    if take > 0:
        adjusted[order] = base[order] - suppression[order]

    trace = SoCDStepTrace(
        delta=delta,
        alpha=alpha,
        k=k,
        selected_indices=selected,
        suppressed_logits=suppression,
    )
    return adjusted, trace


@dataclass(frozen=True)
class VanillaCDConfig:
    """Parameters of the plain contrastive step used for ablations."""

    alpha_mask: float = 0.1
    beta: float = 0.5

    def __post_init__(self):
        if not (isinstance(self.alpha_mask, (int, float)) and 0.0 < self.alpha_mask <= 1.0):
            raise ConfigError(f"alpha_mask must lie in (0, 1], got {self.alpha_mask!r}")
        if not (isinstance(self.beta, (int, float)) and math.isfinite(self.beta) and self.beta >= 0.0):
            raise ConfigError(f"beta must be a non-negative finite real, got {self.beta!r}")


def vanilla_cd_step(expert_logits, amateur_logits, cfg: VanillaCDConfig) -> np.ndarray:
    """Plain contrastive step: amplify expert-amateur gaps on a head mask.

    Tokens whose expert logit falls below ``max(expert) + ln(alpha_mask)``
    are sent to ``-inf``; the rest become ``(1 + beta) * expert - beta *
    amateur``.
    """
    expert = _as_logit_array(expert_logits, "expert_logits")
    amateur = _as_logit_array(amateur_logits, "amateur_logits")
    if expert.size != amateur.size:
        raise ParameterError(
            f"logit vectors disagree on vocabulary size: {expert.size} vs {amateur.size}"
        )
    threshold = expert.max() + math.log(cfg.alpha_mask)
    valid = expert >= threshold
    combined = (1.0 + cfg.beta) * expert - cfg.beta * amateur
    return np.where(valid, combined, -np.inf)


def _sampling_probs(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Softmax for sampling, tolerating -inf entries (masked-out tokens)."""
    finite = np.isfinite(logits)
    if not finite.any():
        raise ParameterError("all logits are -inf; nothing to sample")
    scaled = logits / temperature
    shifted = scaled - scaled[finite].max()
    exps = np.exp(shifted)
    return exps / exps.sum()


def decode(
    provider_base: "DistributionProvider",
    provider_toxic: "DistributionProvider | None",
    prompt_tokens: Sequence[int],
    temperature: float,
    cfg: SoCDConfig,
    seed,
    *,
    mode: DecodeMode = "socd",
    vanilla_cfg: VanillaCDConfig | None = None,
) -> list[int]:
    """Autoregressive sampling with a per-step logit transform.

    ``seed`` may be an integer or a ``numpy.random.SeedSequence``. Stops
    after ``cfg.max_new_tokens`` tokens or as soon as ``cfg.eos_token`` is
    drawn (the stop token itself is not returned).
    """
    if mode not in DECODE_MODES:
        raise ParameterError(f"mode must be one of {DECODE_MODES}, got {mode!r}")
    if mode != "prompt-only" and provider_toxic is None:
        raise ConfigError(f"mode {mode!r} needs a toxic-side provider")
    if not (isinstance(temperature, (int, float)) and math.isfinite(temperature) and temperature > 0):
        raise ParameterError(f"temperature must be a positive finite real, got {temperature!r}")
    prompt = [int(t) for t in prompt_tokens]
    if not prompt:
        raise ParameterError("prompt_tokens must not be empty")
    vocab = provider_base.vocab_size
    if provider_toxic is not None:
        if provider_toxic.vocab_size != vocab:
            raise ConfigError(
                "providers disagree on vocabulary size: "
                f"{vocab} vs {provider_toxic.vocab_size}"
            )
        if provider_base.tokenizer_id != provider_toxic.tokenizer_id:
            raise ConfigError(
                "providers disagree on tokenizer: "
                f"{provider_base.tokenizer_id!r} vs {provider_toxic.tokenizer_id!r}"
            )
    if any(t < 0 or t >= vocab for t in prompt):
        raise ParameterError("prompt contains token ids outside the vocabulary")
    if isinstance(seed, (int, np.integer)):
        if seed < 0:
            raise ParameterError(f"seed must be non-negative, got {seed!r}")
        rng = np.random.default_rng(int(seed))
    elif isinstance(seed, np.random.SeedSequence):
        rng = np.random.default_rng(seed)
    else:
        raise ParameterError(f"seed must be an int or SeedSequence, got {type(seed).__name__}")

    step_temperature = temperature if cfg.temperature_mode == "shared" else 1.0
    context = list(prompt)
    out: list[int] = []
    for step in range(cfg.max_new_tokens):
        try:
            base_logits = np.asarray(provider_base.next_logits(context), dtype=np.float64)
            if mode == "prompt-only":
                toxic_logits = None
            else:
                toxic_logits = np.asarray(provider_toxic.next_logits(context), dtype=np.float64)
        except Exception as exc:
            raise ProviderError(
                f"provider failed at decode step {step}: {exc}", step=step
            ) from exc

        if mode == "socd":
            adjusted, _ = socd_step(base_logits, toxic_logits, step_temperature, cfg)
        elif mode == "vanilla-cd":
            adjusted = vanilla_cd_step(base_logits, toxic_logits, vanilla_cfg or VanillaCDConfig())
        else:
            adjusted = base_logits

        probs = _sampling_probs(adjusted, temperature)
        token = int(rng.choice(vocab, p=probs))
        if cfg.eos_token is not None and token == cfg.eos_token:
            break
        out.append(token)
        context.append(token)
    return out
