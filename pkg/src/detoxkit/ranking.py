"""Candidate scoring and fusion re-ranking across sampling temperatures.

Each rewrite candidate gets a toxicity score in [0, 1] (lower is better)
and a cosine similarity to the original text; the fusion score blends the
two as ``lambda * (1 - toxicity) + (1 - lambda) * similarity`` and the
highest-scoring candidate wins. Scorer and embedder are interfaces so that
a desk-scale lexicon scorer, a hashed bag-of-words embedder, or a remote
model bridge can slot in interchangeably.
"""

from __future__ import annotations

import abc
import hashlib
import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ParameterError, PipelineError, TransportError
from .protocol import BridgeClient
from .words import count_stem_tokens, word_tokens

DEFAULT_TEMPERATURES = (0.6, 0.8, 1.0, 1.2, 1.3, 1.5)
DEFAULT_LEXICON_GAIN = 5.0


@dataclass(frozen=True)
class Candidate:
    """One rewrite draft, progressively annotated by the fusion stage.

    ``origin`` records whether the text came out of the answer markers or
    fell back to the raw generation. ``failure`` is set instead of scores
    when the scorer or embedder rejected this candidate.
    """

    text: str
    temperature: float
    toxicity: float | None = None
    similarity: float | None = None
    fusion_score: float | None = None
    origin: str = "extracted"
    failure: str | None = None


@dataclass(frozen=True)
class FusionConfig:
    """Weights and sampling plan for candidate generation and selection."""

    lambda_weight: float = 0.5
    temperatures: tuple[float, ...] = DEFAULT_TEMPERATURES
    samples_per_temperature: int = 3

    def __post_init__(self):
        if not (isinstance(self.lambda_weight, (int, float)) and 0.0 <= self.lambda_weight <= 1.0):
            raise ConfigError(f"lambda_weight must lie in [0, 1], got {self.lambda_weight!r}")
        temps = tuple(float(t) for t in self.temperatures)
        if not temps:
            raise ConfigError("temperatures must not be empty")
        if any(not math.isfinite(t) or t <= 0 for t in temps):
            raise ConfigError(f"temperatures must be positive finite reals, got {temps}")
        object.__setattr__(self, "temperatures", temps)
        if not isinstance(self.samples_per_temperature, int) or self.samples_per_temperature < 1:
            raise ConfigError(
                f"samples_per_temperature must be a positive integer, got {self.samples_per_temperature!r}"
            )


class ToxicityScorer(abc.ABC):
    """Maps a text to a toxicity score in [0, 1]; higher is more toxic."""

    name: str = "scorer"

    @abc.abstractmethod
    def score(self, text: str) -> float: ...

    def clone_for_worker(self) -> "ToxicityScorer":
        return self


class TextEmbedder(abc.ABC):
    """Maps a text to a fixed-dimension vector for similarity comparison."""

    name: str = "embedder"

    @property
    @abc.abstractmethod
    def dim(self) -> int: ...

    @abc.abstractmethod
    def embed(self, text: str) -> np.ndarray: ...

    def clone_for_worker(self) -> "TextEmbedder":
        return self


def load_lexicon(path: str | Path) -> frozenset[str]:
    """Read a lexicon file: UTF-8, one stem per line, # comments allowed."""
    stems = set()
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        stems.add(line.casefold())
    if not stems:
        raise ParameterError(f"lexicon {path} holds no stems")
    return frozenset(stems)


def lexicon_toxicity(text: str, lexicon: Iterable[str], gain: float = DEFAULT_LEXICON_GAIN) -> float:
    """Share of lexicon-matching tokens, amplified by ``gain`` and capped at 1.

    The gain makes sparse hits visible: with the default of 5, one flagged
    token in twenty is enough to score 0.25. Empty text scores 0.
    """
    stems = tuple(lexicon)
    if not stems:
        raise ParameterError("lexicon must not be empty")
    if not (isinstance(gain, (int, float)) and math.isfinite(gain) and gain > 0):
        raise ParameterError(f"gain must be a positive real, got {gain!r}")
    tokens = word_tokens(text)
    if not tokens:
        return 0.0
    hits = count_stem_tokens(tokens, stems)
    return min(1.0, gain * hits / len(tokens))


class LexiconToxicityScorer(ToxicityScorer):
    """Deterministic stem-lexicon scorer for desk-scale runs and tests."""

    def __init__(self, stems: Iterable[str], gain: float = DEFAULT_LEXICON_GAIN):
        self._stems = frozenset(s.casefold() for s in stems if s)
        if not self._stems:
            raise ParameterError("lexicon must not be empty")
        self._gain = float(gain)
        self.name = "lexicon"

    @property
    def stems(self) -> frozenset[str]:
        return self._stems

    def score(self, text: str) -> float:
        return lexicon_toxicity(text, self._stems, self._gain)


def hashed_bow_embed(text: str, dim: int) -> np.ndarray:
    """Signed hashed bag-of-words vector, L2-normalized.

    Each word token hashes to a bucket and a sign, so sharing vocabulary
    raises cosine similarity while hash collisions stay unbiased. The zero
    vector comes back only for texts with no word tokens.
    """
    if not isinstance(dim, int) or dim < 8:
        raise ParameterError(f"dim must be an integer >= 8, got {dim!r}")
    vec = np.zeros(dim, dtype=np.float64)
    for tok in word_tokens(text):
        h = int.from_bytes(hashlib.sha1(tok.encode("utf-8")).digest()[:8], "big")
        sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
        vec[h % dim] += sign
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return vec


class HashedBowEmbedder(TextEmbedder):
    """Hash-bucketed bag-of-words embedder; deterministic across platforms."""

    def __init__(self, dim: int = 256):
        if not isinstance(dim, int) or dim < 8:
            raise ParameterError(f"dim must be an integer >= 8, got {dim!r}")
        self._dim = dim
        self.name = f"bow-{dim}"

    @property
    def dim(self) -> int:
        return self._dim

    def embed(self, text: str) -> np.ndarray:
        return hashed_bow_embed(text, self._dim)


class RemoteToxicityScorer(ToxicityScorer):
    """Toxicity scoring delegated to a model bridge."""

    def __init__(self, address: str, *, timeout: float = 30.0, max_attempts: int = 3):
        self._address = address
        self._timeout = timeout
        self._max_attempts = max_attempts
        self._client = BridgeClient(address, timeout=timeout, max_attempts=max_attempts)
        self.name = f"bridge:{address}"

    def score(self, text: str) -> float:
        reply = self._client.request({"type": "toxicity", "text": text})
        value = reply.get("score")
        if not isinstance(value, (int, float)) or not (0.0 <= float(value) <= 1.0):
            raise TransportError(f"bridge returned a toxicity score outside [0, 1]: {value!r}")
        return float(value)

    def clone_for_worker(self) -> "RemoteToxicityScorer":
        return RemoteToxicityScorer(
            self._address, timeout=self._timeout, max_attempts=self._max_attempts
        )

    def close(self) -> None:
        self._client.close()


class RemoteTextEmbedder(TextEmbedder):
    """Text embedding delegated to a model bridge."""

    def __init__(self, address: str, *, timeout: float = 30.0, max_attempts: int = 3):
        self._address = address
        self._timeout = timeout
        self._max_attempts = max_attempts
        self._client = BridgeClient(address, timeout=timeout, max_attempts=max_attempts)
        self._dim = self._client.handshake.embed_dim
        self.name = f"bridge:{address}"

    @property
    def dim(self) -> int:
        return self._dim

    def embed(self, text: str) -> np.ndarray:
        reply = self._client.request({"type": "embed", "text": text})
        vec = np.asarray(reply.get("vector", []), dtype=np.float64)
        if vec.shape != (self._dim,):
            raise TransportError(f"bridge returned {vec.shape} embedding, expected ({self._dim},)")
        return vec

    def clone_for_worker(self) -> "RemoteTextEmbedder":
        return RemoteTextEmbedder(
            self._address, timeout=self._timeout, max_attempts=self._max_attempts
        )

    def close(self) -> None:
        self._client.close()


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine of the angle between two vectors; 0 when either has zero norm."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ParameterError(f"vectors must share one dimension, got {u.shape} and {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        warnings.warn("zero-norm embedding; cosine similarity defined as 0", RuntimeWarning)
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def fusion_score(toxicity: float, similarity: float, lambda_weight: float) -> float:
    """Blend of detoxification and meaning preservation, higher is better."""
    if not (0.0 <= lambda_weight <= 1.0):
        raise ParameterError(f"lambda_weight must lie in [0, 1], got {lambda_weight!r}")
    return lambda_weight * (1.0 - toxicity) + (1.0 - lambda_weight) * similarity


def fuse_and_select(
    original: str,
    candidates: Sequence[Candidate],
    scorer: ToxicityScorer,
    embedder: TextEmbedder,
    cfg: FusionConfig,
) -> tuple[Candidate, list[Candidate]]:
    """Score every candidate and pick the fusion-optimal one.

    Returns ``(best, scored)`` where ``scored`` preserves input order and
    carries per-candidate scores or a failure reason. A scorer or embedder
    rejection excludes that candidate; a transport failure aborts. Ties on
    the fusion score break toward higher similarity, then lower sampling
    temperature, then earlier position.
    """
    if not candidates:
        raise ParameterError("candidates must not be empty")
    original_vec = embedder.embed(original)
    scored: list[Candidate] = []
    for cand in candidates:
        try:
            tox = float(scorer.score(cand.text))
            if not (0.0 <= tox <= 1.0) or not math.isfinite(tox):
                raise ParameterError(f"scorer returned {tox!r}, expected a value in [0, 1]")
            vec = embedder.embed(cand.text)
            sim = cosine_similarity(original_vec, vec)
            fused = fusion_score(tox, sim, cfg.lambda_weight)
        except TransportError:
            raise
        except Exception as exc:
            scored.append(replace(cand, failure=f"{type(exc).__name__}: {exc}"))
            continue
        scored.append(replace(cand, toxicity=tox, similarity=sim, fusion_score=fused))
    usable = [(i, c) for i, c in enumerate(scored) if c.failure is None]
    if not usable:
        raise PipelineError("every candidate was rejected during scoring")
    best_i, best = min(
        usable,
        key=lambda pair: (
            -pair[1].fusion_score,
            -pair[1].similarity,
            pair[1].temperature,
            pair[0],
        ),
    )
    return best, scored
