"""The bridge TCP service: handshake, request dispatch, model access.

Connections are handled on one thread each; within a connection the
request/reply cycle is strictly sequential (per-connection FIFO). Model
access across connections is serialized behind one lock so inference
stays deterministic regardless of client concurrency.
"""

from __future__ import annotations

import socketserver
import threading

from . import wire
from .errors import BridgeConfigError


class BridgeService:
    """Validates the model set once, then answers decoded requests.

    ``handle`` never raises: every incoming object maps to exactly one
    reply object, with failures expressed as structured error replies.
    """

    def __init__(self, base, toxic, scorer, embedder):
        if base.tokenizer_id != toxic.tokenizer_id:
            raise BridgeConfigError(
                "base and toxic models use different tokenizers "
                f"({base.tokenizer_id} vs {toxic.tokenizer_id}); refusing to serve"
            )
        if base.vocab_size != toxic.vocab_size:
            raise BridgeConfigError(
                f"vocab size mismatch: base {base.vocab_size}, toxic {toxic.vocab_size}"
            )
        self._base = base
        self._toxic = toxic
        self._scorer = scorer
        self._embedder = embedder
        self._lock = threading.Lock()
        for role, model in (("base", base), ("toxic", toxic)):
            probe = model.next_logits([0])
            if len(probe) != base.vocab_size:
                raise BridgeConfigError(
                    f"{role} model returns {len(probe)} logits for an advertised "
                    f"vocab of {base.vocab_size}"
                )

    def handshake(self) -> dict:
        return {
            "type": "hello",
            "protocol_version": wire.PROTOCOL_VERSION,
            "vocab_size": self._base.vocab_size,
            "tokenizer_id": self._base.tokenizer_id,
            "embed_dim": self._embedder.dim,
            "eos_token_id": self._base.eos_token_id,
        }

    def handle(self, obj: dict) -> dict:
        kind = obj.get("type")
        if kind not in wire.REQUEST_TYPES:
            return wire.error_reply(wire.ERROR_UNKNOWN_TYPE, f"unknown request type {kind!r}")
        try:
            return getattr(self, f"_handle_{kind}")(obj)
        except ValueError as exc:
            return wire.error_reply(wire.ERROR_BAD_REQUEST, str(exc))
        except Exception as exc:
            return wire.error_reply(wire.ERROR_MODEL, f"{type(exc).__name__}: {exc}")

    def _handle_logits(self, obj: dict) -> dict:
        role = obj.get("role")
        if role not in ("base", "toxic"):
            raise ValueError(f"role must be 'base' or 'toxic', got {role!r}")
        context = obj.get("context")
        if not isinstance(context, list) or not context:
            raise ValueError("context must be a non-empty list of token ids")
        vocab = self._base.vocab_size
        ids = []
        for token in context:
            if not isinstance(token, int) or isinstance(token, bool) or not (0 <= token < vocab):
                raise ValueError(f"token id {token!r} outside [0, {vocab})")
            ids.append(token)
        model = self._base if role == "base" else self._toxic
        with self._lock:
            logits = model.next_logits(ids)
        return {"type": "logits", "logits": logits}

    def _handle_toxicity(self, obj: dict) -> dict:
        text = obj.get("text")
        if not isinstance(text, str):
            raise ValueError("toxicity request needs a 'text' string")
        with self._lock:
            score, labels = self._scorer.score(text)
        return {"type": "toxicity", "score": score, "labels": labels}

    def _handle_embed(self, obj: dict) -> dict:
        text = obj.get("text")
        if not isinstance(text, str):
            raise ValueError("embed request needs a 'text' string")
        with self._lock:
            vector = self._embedder.embed(text)
        return {"type": "embed", "vector": vector}

    def _handle_tokenize(self, obj: dict) -> dict:
        text = obj.get("text")
        if not isinstance(text, str):
            raise ValueError("tokenize request needs a 'text' string")
        with self._lock:
            tokens = self._base.encode(text)
        return {"type": "tokenize", "tokens": tokens}

    def _handle_detokenize(self, obj: dict) -> dict:
        tokens = obj.get("tokens")
        if not isinstance(tokens, list):
            raise ValueError("detokenize request needs a 'tokens' list")
        vocab = self._base.vocab_size
        ids = []
        for token in tokens:
            if not isinstance(token, int) or isinstance(token, bool) or not (0 <= token < vocab):
                raise ValueError(f"token id {token!r} outside [0, {vocab})")
            ids.append(token)
        with self._lock:
            text = self._base.decode(ids)
        return {"type": "detokenize", "text": text}


class _ConnectionHandler(socketserver.StreamRequestHandler):
    def handle(self):
        service = self.server.service
        self._send(service.handshake())
        while True:
            raw = self.rfile.readline(wire.MAX_LINE_BYTES)
            if not raw:
                return
            if not raw.endswith(b"\n"):
                # Framing is broken (oversized or truncated); answer once
                # and drop the connection rather than guess at boundaries.
                self._send(wire.error_reply(
                    wire.ERROR_BAD_REQUEST, "unterminated or oversized line"))
                return
            try:
                obj = wire.decode_line(raw)
            except ValueError as exc:
                self._send(wire.error_reply(wire.ERROR_BAD_REQUEST, str(exc)))
                continue
            self._send(service.handle(obj))

    def _send(self, obj: dict) -> None:
        self.wfile.write(wire.encode_line(obj))
        self.wfile.flush()


class _ThreadingServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class BridgeServer:
    """Bind, serve, and shut down the service on a host:port."""

    def __init__(self, service: BridgeService, host: str = "127.0.0.1", port: int = 0):
        self._server = _ThreadingServer((host, port), _ConnectionHandler)
        self._server.service = service
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    @property
    def port(self) -> int:
        return int(self._server.server_address[1])

    def start(self) -> "BridgeServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def shutdown(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    def __enter__(self) -> "BridgeServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.shutdown()
