"""Next-token distribution providers and the n-gram model used for tests.

A provider answers "given this token context, what are the next-token
logits?" and optionally carries a text codec. Three implementations: a
lookup table for unit tests, an add-k smoothed n-gram model with backoff,
and a thin client for a remote model bridge.
"""

from __future__ import annotations

import abc
import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, ParameterError, TransportError
from .protocol import BridgeClient

EOS_TOKEN = "<eos>"
UNK_TOKEN = "<unk>"

NGRAM_FORMAT = "detoxkit-ngram"
NGRAM_FORMAT_VERSION = 1

TOKENIZER_MODES = ("whitespace", "char")


class DistributionProvider(abc.ABC):
    """Source of next-token logits over a fixed vocabulary."""

    @property
    @abc.abstractmethod
    def vocab_size(self) -> int: ...

    @property
    @abc.abstractmethod
    def tokenizer_id(self) -> str:
        """Fingerprint of the token space; providers that are combined in
        one decode must agree on it."""

    @property
    def eos_token_id(self) -> int | None:
        return None

    @abc.abstractmethod
    def next_logits(self, context: Sequence[int]) -> np.ndarray:
        """Logits over the vocabulary given ``context`` (most recent last).

        Must be pure: same context, same vector, no internal state change.
        """

    def encode(self, text: str) -> list[int]:
        raise ConfigError(f"{type(self).__name__} has no text codec")

    def decode_tokens(self, tokens: Sequence[int]) -> str:
        raise ConfigError(f"{type(self).__name__} has no text codec")

    def clone_for_worker(self) -> "DistributionProvider":
        """A handle safe to use from another worker thread.

        In-process providers are immutable and return themselves; remote
        providers return a fresh connection.
        """
        return self

    def _check_context(self, context: Sequence[int]) -> tuple[int, ...]:
        ctx = tuple(int(t) for t in context)
        vocab = self.vocab_size
        if any(t < 0 or t >= vocab for t in ctx):
            raise ParameterError("context contains token ids outside the vocabulary")
        return ctx


class TableProvider(DistributionProvider):
    """Fixed logit rows keyed by context suffix; the longest match wins.

    ``rows`` maps context-suffix tuples to logit vectors; ``default_row``
    serves any context with no matching suffix. Intended for tests where
    exact distributions must be dictated.
    """

    def __init__(
        self,
        vocab_size: int,
        rows: Mapping[tuple[int, ...], Sequence[float]] | None = None,
        default_row: Sequence[float] | None = None,
        *,
        tokenizer_id: str = "table",
        eos_token_id: int | None = None,
    ):
        if vocab_size < 2:
            raise ConfigError(f"vocab_size must be at least 2, got {vocab_size}")
        self._vocab_size = int(vocab_size)
        self._tokenizer_id = tokenizer_id
        self._eos = eos_token_id
        self._rows: dict[tuple[int, ...], np.ndarray] = {}
        for key, row in (rows or {}).items():
            self._rows[tuple(int(t) for t in key)] = self._freeze_row(row)
        if default_row is None:
            default_row = np.zeros(vocab_size)
        self._default = self._freeze_row(default_row)
        self._suffix_lengths = sorted({len(k) for k in self._rows}, reverse=True)

    def _freeze_row(self, row) -> np.ndarray:
        arr = np.asarray(row, dtype=np.float64)
        if arr.shape != (self._vocab_size,):
            raise ConfigError(
                f"row has shape {arr.shape}, expected ({self._vocab_size},)"
            )
        if not np.all(np.isfinite(arr)):
            raise ConfigError("table rows must be finite")
        arr = arr.copy()
        arr.flags.writeable = False
        return arr

    @property
    def vocab_size(self) -> int:
        return self._vocab_size

    @property
    def tokenizer_id(self) -> str:
        return self._tokenizer_id

    @property
    def eos_token_id(self) -> int | None:
        return self._eos

    def next_logits(self, context: Sequence[int]) -> np.ndarray:
        ctx = self._check_context(context)
        for length in self._suffix_lengths:
            if length <= len(ctx):
                row = self._rows.get(ctx[len(ctx) - length:])
                if row is not None:
                    return row.copy()
        return self._default.copy()


def _fingerprint_vocab(tokenizer: str, vocab: Sequence[str]) -> str:
    digest = hashlib.sha1()
    digest.update(tokenizer.encode("utf-8"))
    for tok in vocab:
        digest.update(b"\x00")
        digest.update(tok.encode("utf-8"))
    return f"{tokenizer}-{digest.hexdigest()[:12]}"


def _tokenize_line(line: str, tokenizer: str) -> list[str]:
    if tokenizer == "whitespace":
        return line.split()
    if tokenizer == "char":
        return list(line)
    raise ParameterError(f"tokenizer must be one of {TOKENIZER_MODES}, got {tokenizer!r}")


class NgramModel(DistributionProvider):
    """Add-k smoothed n-gram language model with backoff to shorter contexts.

    ``counts`` holds observed counts for every context length from ``n-1``
    down to the empty context; a query backs off to the longest stored
    context that has been seen, and an entirely unseen model degenerates to
    the uniform distribution. Logits are ``ln((count + k) / (total + k*V))``.
    """

    def __init__(
        self,
        order: int,
        vocab: Sequence[str],
        counts: Mapping[tuple[int, ...], Mapping[int, int]],
        smoothing_k: float = 1.0,
        tokenizer: str = "whitespace",
    ):
        if not isinstance(order, int) or not (1 <= order <= 5):
            raise ParameterError(f"order must be an integer in [1, 5], got {order!r}")
        if not (isinstance(smoothing_k, (int, float)) and smoothing_k > 0 and math.isfinite(smoothing_k)):
            raise ParameterError(f"smoothing_k must be a positive real, got {smoothing_k!r}")
        if tokenizer not in TOKENIZER_MODES:
            raise ParameterError(f"tokenizer must be one of {TOKENIZER_MODES}, got {tokenizer!r}")
        vocab = list(vocab)
        if len(vocab) != len(set(vocab)):
            raise ParameterError("vocab contains duplicate tokens")
        for reserved in (EOS_TOKEN, UNK_TOKEN):
            if reserved not in vocab:
                raise ParameterError(f"vocab must contain the reserved token {reserved!r}")
        if len(vocab) < 2:
            raise ParameterError("vocab must hold at least 2 tokens")
        self.order = order
        self.smoothing_k = float(smoothing_k)
        self.tokenizer = tokenizer
        self.vocab = vocab
        self._ids = {tok: i for i, tok in enumerate(vocab)}
        self._eos_id = self._ids[EOS_TOKEN]
        self._unk_id = self._ids[UNK_TOKEN]
        self._counts: dict[tuple[int, ...], dict[int, int]] = {}
        self._totals: dict[tuple[int, ...], int] = {}
        vocab_size = len(vocab)
        for ctx, table in counts.items():
            ctx = tuple(int(t) for t in ctx)
            if len(ctx) > order - 1:
                raise ParameterError(f"context {ctx} longer than order-1={order - 1}")
            if any(t < 0 or t >= vocab_size for t in ctx):
                raise ParameterError(f"context {ctx} holds out-of-vocabulary ids")
            clean: dict[int, int] = {}
            for tok, cnt in table.items():
                tok, cnt = int(tok), int(cnt)
                if tok < 0 or tok >= vocab_size:
                    raise ParameterError(f"count table for {ctx} holds out-of-vocabulary id {tok}")
                if cnt < 1:
                    raise ParameterError(f"stored counts must be >= 1, got {cnt} for {ctx}")
                clean[tok] = cnt
            if clean:
                self._counts[ctx] = clean
                self._totals[ctx] = sum(clean.values())
        self._tokenizer_id = _fingerprint_vocab(tokenizer, vocab)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def tokenizer_id(self) -> str:
        return self._tokenizer_id

    @property
    def eos_token_id(self) -> int:
        return self._eos_id

    @property
    def unk_token_id(self) -> int:
        return self._unk_id

    def encode(self, text: str) -> list[int]:
        ids = []
        for line in text.splitlines() or [""]:
            for tok in _tokenize_line(line, self.tokenizer):
                ids.append(self._ids.get(tok, self._unk_id))
        return ids

    def decode_tokens(self, tokens: Sequence[int]) -> str:
        vocab_size = len(self.vocab)
        words = []
        for t in tokens:
            t = int(t)
            if t < 0 or t >= vocab_size:
                raise ParameterError(f"token id {t} outside the vocabulary")
            words.append(self.vocab[t])
        sep = " " if self.tokenizer == "whitespace" else ""
        return sep.join(words)

    def next_logits(self, context: Sequence[int]) -> np.ndarray:
        ctx = self._check_context(context)
        vocab_size = len(self.vocab)
        k = self.smoothing_k
        longest = min(self.order - 1, len(ctx))
        for length in range(longest, -1, -1):
            key = ctx[len(ctx) - length:] if length else ()
            table = self._counts.get(key)
            if table is not None:
                total = self._totals[key]
                probs = np.full(vocab_size, k / (total + k * vocab_size))
                for tok, cnt in table.items():
                    probs[tok] = (cnt + k) / (total + k * vocab_size)
                return np.log(probs)
        # Nothing observed at any order: uniform.
        return np.full(vocab_size, -math.log(vocab_size))


def train_ngram(
    corpus_path: str | Path,
    order: int,
    smoothing_k: float = 1.0,
    tokenizer: str = "whitespace",
    *,
    vocab_corpora: Iterable[str | Path] = (),
) -> NgramModel:
    """Count n-grams of every order up to ``order`` from a line-per-document
    text file.

    Each line is one document; an end-of-sequence token is appended to it,
    and contexts never cross line boundaries. ``vocab_corpora`` lists extra
    files whose tokens are folded into the vocabulary without contributing
    counts, so two models trained on different corpora can share one token
    space.
    """
    if not isinstance(order, int) or not (1 <= order <= 5):
        raise ParameterError(f"order must be an integer in [1, 5], got {order!r}")
    if tokenizer not in TOKENIZER_MODES:
        raise ParameterError(f"tokenizer must be one of {TOKENIZER_MODES}, got {tokenizer!r}")

    def read_lines(path: str | Path) -> list[list[str]]:
        text = Path(path).read_text(encoding="utf-8")
        docs = []
        for line in text.splitlines():
            toks = _tokenize_line(line, tokenizer)
            if toks:
                docs.append(toks)
        return docs

    docs = read_lines(corpus_path)
    if not docs:
        raise ParameterError(f"corpus {corpus_path} holds no tokens")

    observed: set[str] = set()
    for doc in docs:
        observed.update(doc)
    for extra in vocab_corpora:
        for doc in read_lines(extra):
            observed.update(doc)
    observed.discard(EOS_TOKEN)
    observed.discard(UNK_TOKEN)
    vocab = [EOS_TOKEN, UNK_TOKEN] + sorted(observed)
    ids = {tok: i for i, tok in enumerate(vocab)}
    eos_id = ids[EOS_TOKEN]

    counts: dict[tuple[int, ...], dict[int, int]] = {}
    for doc in docs:
        seq = [ids[tok] for tok in doc] + [eos_id]
        for i, target in enumerate(seq):
            for length in range(0, order):
                if length > i:
                    break
                ctx = tuple(seq[i - length:i])
                table = counts.setdefault(ctx, {})
                table[target] = table.get(target, 0) + 1
    return NgramModel(order, vocab, counts, smoothing_k, tokenizer)


def save_ngram(model: NgramModel, path: str | Path) -> None:
    """Serialize a model to a deterministic line-oriented JSON file.

    Line 1 is a header object; each following line is one context with its
    count table. Contexts are sorted, count keys are sorted numerically, so
    equal models produce byte-identical files.
    """
    header = {
        "format": NGRAM_FORMAT,
        "version": NGRAM_FORMAT_VERSION,
        "order": model.order,
        "smoothing_k": model.smoothing_k,
        "tokenizer": model.tokenizer,
        "vocab": model.vocab,
    }
    lines = [json.dumps(header, ensure_ascii=False, sort_keys=True, separators=(",", ":"))]
    for ctx in sorted(model._counts):
        table = model._counts[ctx]
        row = {
            "context": list(ctx),
            "counts": {str(tok): table[tok] for tok in sorted(table)},
        }
        lines.append(json.dumps(row, ensure_ascii=False, separators=(",", ":"), sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_ngram(path: str | Path) -> NgramModel:
    """Load a model written by :func:`save_ngram`."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ParameterError(f"{path} is empty")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParameterError(f"{path} is not a model file: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != NGRAM_FORMAT:
        raise ParameterError(f"{path} is not a {NGRAM_FORMAT} file")
    if header.get("version") != NGRAM_FORMAT_VERSION:
        raise ParameterError(
            f"unsupported model file version {header.get('version')!r}"
        )
    counts: dict[tuple[int, ...], dict[int, int]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParameterError(f"{path}:{lineno}: bad JSON: {exc}") from exc
        ctx = tuple(int(t) for t in row["context"])
        counts[ctx] = {int(tok): int(cnt) for tok, cnt in row["counts"].items()}
    return NgramModel(
        order=int(header["order"]),
        vocab=list(header["vocab"]),
        counts=counts,
        smoothing_k=float(header["smoothing_k"]),
        tokenizer=str(header["tokenizer"]),
    )


class RemoteProvider(DistributionProvider):
    """Distribution provider backed by a model bridge over the wire protocol.

    ``role`` selects which of the bridge's models answers (``"base"`` or
    ``"toxic"``). Each instance owns one connection; ``clone_for_worker``
    opens a fresh one so worker threads never share a socket.
    """

    def __init__(self, address: str, role: str, *, timeout: float = 30.0, max_attempts: int = 3):
        if role not in ("base", "toxic"):
            raise ConfigError(f"role must be 'base' or 'toxic', got {role!r}")
        self._address = address
        self._role = role
        self._timeout = timeout
        self._max_attempts = max_attempts
        self._client = BridgeClient(address, timeout=timeout, max_attempts=max_attempts)
        hello = self._client.handshake
        self._vocab_size = hello.vocab_size
        self._tokenizer_id = hello.tokenizer_id
        self._eos = hello.eos_token_id

    @property
    def vocab_size(self) -> int:
        return self._vocab_size

    @property
    def tokenizer_id(self) -> str:
        return self._tokenizer_id

    @property
    def eos_token_id(self) -> int | None:
        return self._eos

    def next_logits(self, context: Sequence[int]) -> np.ndarray:
        ctx = self._check_context(context)
        reply = self._client.request({"type": "logits", "role": self._role, "context": list(ctx)})
        logits = np.asarray(reply.get("logits", []), dtype=np.float64)
        if logits.shape != (self._vocab_size,):
            raise TransportError(
                f"bridge returned {logits.shape} logits, expected ({self._vocab_size},)"
            )
        return logits

    def encode(self, text: str) -> list[int]:
        reply = self._client.request({"type": "tokenize", "text": text})
        return [int(t) for t in reply.get("tokens", [])]

    def decode_tokens(self, tokens: Sequence[int]) -> str:
        reply = self._client.request({"type": "detokenize", "tokens": [int(t) for t in tokens]})
        return str(reply.get("text", ""))

    def clone_for_worker(self) -> "RemoteProvider":
        return RemoteProvider(
            self._address, self._role, timeout=self._timeout, max_attempts=self._max_attempts
        )

    def close(self) -> None:
        self._client.close()
