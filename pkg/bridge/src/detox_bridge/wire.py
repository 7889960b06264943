"""Framing and message shapes for the bridge wire protocol.

The protocol is line-delimited JSON over TCP, one object per line. On
connect the server speaks first with a handshake line; afterwards the
client sends one request per line and receives exactly one reply per
request, in order. A connection carries one request at a time.

Handshake (server -> client):
    {"type": "hello", "protocol_version": 1, "vocab_size": V,
     "tokenizer_id": "...", "embed_dim": D, "eos_token_id": N | null}

Requests (client -> server), one of:
    {"type": "logits", "role": "base" | "toxic", "context": [int, ...]}
    {"type": "toxicity", "text": "..."}
    {"type": "embed", "text": "..."}
    {"type": "tokenize", "text": "..."}
    {"type": "detokenize", "tokens": [int, ...]}

A logits request may carry a "temperature_hint" number; the reply
always holds raw logits and the hint is ignored, so scaling stays the
caller's job. Replies mirror the request type and carry the payload
field ("logits", "score" plus "labels", "vector", "tokens", "text").
Every request line produces exactly one reply line; anything the
server cannot serve becomes a structured error reply, never silence:
    {"type": "error", "code": "...", "message": "..."}

Floats are serialized at full precision (shortest round-trip decimal),
so a float64 survives the wire bit-exactly.
"""

from __future__ import annotations

import json

PROTOCOL_VERSION = 1

MAX_LINE_BYTES = 64 * 1024 * 1024

REQUEST_TYPES = ("logits", "toxicity", "embed", "tokenize", "detokenize")

ERROR_BAD_REQUEST = "bad_request"
ERROR_UNKNOWN_TYPE = "unknown_type"
ERROR_MODEL = "model_error"


def encode_line(obj: dict) -> bytes:
    return (json.dumps(obj, ensure_ascii=False) + "\n").encode("utf-8")


def decode_line(raw: bytes) -> dict:
    try:
        obj = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"malformed protocol line: {exc}") from exc
    if not isinstance(obj, dict):
        raise ValueError(f"protocol lines must be JSON objects, got {type(obj).__name__}")
    return obj


def error_reply(code: str, message: str) -> dict:
    return {"type": "error", "code": code, "message": message}
