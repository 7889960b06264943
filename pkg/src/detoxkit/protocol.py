"""Client side of the model-bridge wire protocol.

The protocol is line-delimited JSON over TCP. On connect the server speaks
first, sending one handshake line describing its models; after that the
client sends one request object per line and reads exactly one reply line
per request, in order. A connection carries one request at a time.

Handshake (server -> client):
    {"type": "hello", "protocol_version": 1, "vocab_size": V,
     "tokenizer_id": "...", "embed_dim": D, "eos_token_id": N | null}

Requests (client -> server), one of:
    {"type": "logits", "role": "base" | "toxic", "context": [int, ...]}
    {"type": "toxicity", "text": "..."}
    {"type": "embed", "text": "..."}
    {"type": "tokenize", "text": "..."}
    {"type": "detokenize", "tokens": [int, ...]}

Replies mirror the request type and carry the payload field ("logits",
"score", "vector", "tokens", "text"), or are structured errors:
    {"type": "error", "code": "...", "message": "..."}

Connection-level failures (refused, reset, EOF, malformed framing) are
retried with exponential backoff and surface as :class:`TransportError`
once the attempt budget is spent. Structured error replies surface as
:class:`BridgeRequestError` and are not retried.
"""

from __future__ import annotations

import json
import socket
import threading
import time
from dataclasses import dataclass

from .errors import BridgeRequestError, ConfigError, TransportError

PROTOCOL_VERSION = 1

_MAX_LINE_BYTES = 64 * 1024 * 1024


@dataclass(frozen=True)
class Handshake:
    protocol_version: int
    vocab_size: int
    tokenizer_id: str
    embed_dim: int
    eos_token_id: int | None


def parse_address(address: str) -> tuple[str, int]:
    """Split ``host:port``; a bare ``:port`` means localhost."""
    if not isinstance(address, str) or ":" not in address:
        raise ConfigError(f"address must look like host:port, got {address!r}")
    host, _, port_text = address.rpartition(":")
    host = host or "127.0.0.1"
    try:
        port = int(port_text)
    except ValueError:
        raise ConfigError(f"bad port in address {address!r}") from None
    if not (0 < port < 65536):
        raise ConfigError(f"port out of range in address {address!r}")
    return host, port


class BridgeClient:
    """One TCP connection to a model bridge, with reconnect-and-retry.

    Thread-safe in the narrow sense that a lock serializes requests; for
    parallel work, open one client per worker instead.
    """

    def __init__(
        self,
        address: str,
        *,
        timeout: float = 30.0,
        max_attempts: int = 3,
        backoff_base: float = 0.1,
    ):
        if max_attempts < 1:
            raise ConfigError(f"max_attempts must be >= 1, got {max_attempts}")
        self._host, self._port = parse_address(address)
        self._timeout = timeout
        self._max_attempts = max_attempts
        self._backoff_base = backoff_base
        self._lock = threading.Lock()
        self._sock: socket.socket | None = None
        self._rfile = None
        self._handshake: Handshake | None = None
        with self._lock:
            self._retrying(self._ensure_connected, "connect")

    @property
    def handshake(self) -> Handshake:
        assert self._handshake is not None
        return self._handshake

    @property
    def address(self) -> str:
        return f"{self._host}:{self._port}"

    def _drop(self) -> None:
        if self._rfile is not None:
            try:
                self._rfile.close()
            except OSError:
                pass
            self._rfile = None
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None

    def _read_line(self) -> dict:
        line = self._rfile.readline(_MAX_LINE_BYTES)
        if not line:
            raise ConnectionError("connection closed by peer")
        if not line.endswith("\n"):
            raise ConnectionError("oversized or truncated protocol line")
        obj = json.loads(line)
        if not isinstance(obj, dict):
            raise ValueError(f"protocol lines must be JSON objects, got {type(obj).__name__}")
        return obj

    def _ensure_connected(self) -> None:
        if self._sock is not None:
            return
        sock = socket.create_connection((self._host, self._port), timeout=self._timeout)
        try:
            sock.settimeout(self._timeout)
            self._sock = sock
            self._rfile = sock.makefile("r", encoding="utf-8", newline="\n")
            hello = self._read_line()
            self._handshake = self._parse_handshake(hello)
        except BaseException:
            self._drop()
            raise

    @staticmethod
    def _parse_handshake(obj: dict) -> Handshake:
        if obj.get("type") != "hello":
            raise ValueError(f"expected hello, got {obj.get('type')!r}")
        version = obj.get("protocol_version")
        if version != PROTOCOL_VERSION:
            # A version skew is permanent; retrying will not fix it.
            raise TransportError(
                f"bridge speaks protocol version {version!r}, this client needs {PROTOCOL_VERSION}"
            )
        vocab_size = obj.get("vocab_size")
        embed_dim = obj.get("embed_dim")
        tokenizer_id = obj.get("tokenizer_id")
        eos = obj.get("eos_token_id")
        if not isinstance(vocab_size, int) or vocab_size < 2:
            raise ValueError(f"bad vocab_size in handshake: {vocab_size!r}")
        if not isinstance(embed_dim, int) or embed_dim < 1:
            raise ValueError(f"bad embed_dim in handshake: {embed_dim!r}")
        if not isinstance(tokenizer_id, str) or not tokenizer_id:
            raise ValueError(f"bad tokenizer_id in handshake: {tokenizer_id!r}")
        if eos is not None and (not isinstance(eos, int) or eos < 0 or eos >= vocab_size):
            raise ValueError(f"bad eos_token_id in handshake: {eos!r}")
        return Handshake(
            protocol_version=version,
            vocab_size=vocab_size,
            tokenizer_id=tokenizer_id,
            embed_dim=embed_dim,
            eos_token_id=eos,
        )

    def _retrying(self, action, what: str):
        last_exc: Exception | None = None
        for attempt in range(self._max_attempts):
            if attempt:
                time.sleep(self._backoff_base * (2 ** (attempt - 1)))
            try:
                return action()
            except TransportError:
                raise
            except (OSError, ValueError, ConnectionError) as exc:
                last_exc = exc
                self._drop()
        raise TransportError(
            f"bridge at {self.address}: {what} failed after "
            f"{self._max_attempts} attempts: {last_exc}"
        ) from last_exc

    def request(self, payload: dict) -> dict:
        """Send one request object, return the reply object.

        Requests are pure model queries, so a retry after a connection
        failure cannot change observable state.
        """
        data = json.dumps(payload, ensure_ascii=False) + "\n"
        raw = data.encode("utf-8")

        def attempt() -> dict:
            self._ensure_connected()
            self._sock.sendall(raw)
            return self._read_line()

        with self._lock:
            reply = self._retrying(attempt, payload.get("type", "request"))
        if reply.get("type") == "error":
            raise BridgeRequestError(
                str(reply.get("code", "unknown")), str(reply.get("message", ""))
            )
        return reply

    def close(self) -> None:
        with self._lock:
            self._drop()

    def __enter__(self) -> "BridgeClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
