"""Command line: serve models over the wire protocol, or self-test a
running bridge.

Exit codes: 0 on success, 1 on a failed self-test or runtime error,
2 for bad arguments or unloadable models.
"""

from __future__ import annotations

import argparse
import json
import math
import random
import socket
import sys

from . import wire
from .errors import BridgeConfigError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bridge",
        description="Serve LM logits, toxicity scores, and embeddings as line-delimited JSON over TCP.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="load models and serve until interrupted")
    serve.add_argument("--base", required=True, help="causal LM checkpoint (hub name or directory)")
    serve.add_argument("--toxic", required=True, help="causal LM checkpoint sharing the base tokenizer")
    serve.add_argument("--scorer", required=True, help="sequence-classification checkpoint for toxicity")
    serve.add_argument("--embedder", required=True, help="encoder checkpoint for sentence embeddings")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=7310)
    serve.add_argument("--device", default="cpu", help="torch device string, e.g. cpu or cuda:0")

    selftest = sub.add_parser("selftest", help="probe a running bridge for protocol conformance")
    selftest.add_argument("--address", required=True, help="host:port of the bridge to probe")
    selftest.add_argument("--samples", type=int, default=100,
                          help="random texts for the toxicity/embed sweep")
    selftest.add_argument("--seed", type=int, default=0)

    return parser


def _cmd_serve(args: argparse.Namespace) -> int:
    from .backends import CausalLMBackend, EmbeddingBackend, ToxicityBackend
    from .server import BridgeServer, BridgeService

    service = BridgeService(
        base=CausalLMBackend(args.base, args.device),
        toxic=CausalLMBackend(args.toxic, args.device),
        scorer=ToxicityBackend(args.scorer, args.device),
        embedder=EmbeddingBackend(args.embedder, args.device),
    )
    server = BridgeServer(service, host=args.host, port=args.port)
    hello = service.handshake()
    print(json.dumps({"serving": server.address, **hello}), flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return 0


class _Probe:
    """Minimal raw-socket client used only for self-testing."""

    def __init__(self, address: str, timeout: float = 30.0):
        host, _, port_text = address.rpartition(":")
        self._sock = socket.create_connection((host or "127.0.0.1", int(port_text)), timeout=timeout)
        self._sock.settimeout(timeout)
        self._rfile = self._sock.makefile("r", encoding="utf-8", newline="\n")
        self.hello = self._read()

    def _read(self) -> dict:
        line = self._rfile.readline(wire.MAX_LINE_BYTES)
        if not line:
            raise ConnectionError("bridge closed the connection")
        return json.loads(line)

    def request(self, payload: dict) -> dict:
        self._sock.sendall(wire.encode_line(payload))
        return self._read()

    def send_raw(self, data: bytes) -> dict:
        self._sock.sendall(data)
        return self._read()

    def close(self) -> None:
        self._rfile.close()
        self._sock.close()


def _random_text(rng: random.Random) -> str:
    words = ["river", "stone", "quiet", "meadow", "walk", "storm", "light",
             "harbor", "late", "summer", "wind", "gravel", "slow", "red"]
    return " ".join(rng.choice(words) for _ in range(rng.randint(1, 12)))


def _normalized_sum(logits: list[float], top: float) -> float:
    exps = [math.exp(v - top) for v in logits]
    total = math.fsum(exps)
    return math.fsum(e / total for e in exps)


def _cmd_selftest(args: argparse.Namespace) -> int:
    rng = random.Random(args.seed)
    failures = 0

    def check(name: str, ok: bool, detail: str = "") -> None:
        nonlocal failures
        status = "ok" if ok else "FAIL"
        suffix = f" ({detail})" if detail else ""
        print(f"{status:4s} {name}{suffix}")
        if not ok:
            failures += 1

    probe = _Probe(args.address)
    hello = probe.hello
    vocab = hello.get("vocab_size", 0)
    check(
        "handshake",
        hello.get("type") == "hello"
        and hello.get("protocol_version") == wire.PROTOCOL_VERSION
        and isinstance(vocab, int) and vocab >= 2
        and isinstance(hello.get("embed_dim"), int) and hello["embed_dim"] >= 1
        and isinstance(hello.get("tokenizer_id"), str) and hello["tokenizer_id"],
        f"vocab_size={vocab} embed_dim={hello.get('embed_dim')}",
    )

    context = [rng.randrange(vocab) for _ in range(rng.randint(1, 16))]
    first = probe.request({"type": "logits", "role": "base", "context": context})
    second = probe.request({"type": "logits", "role": "base", "context": context})
    logits = first.get("logits", [])
    check(
        "logits shape and determinism",
        first.get("type") == "logits" and len(logits) == vocab and first == second,
        f"len={len(logits)}",
    )
    check(
        "logits finite and softmax-normalizable",
        all(math.isfinite(v) for v in logits)
        and abs(_normalized_sum(logits, max(logits)) - 1.0) <= 1e-6,
    )
    toxic = probe.request({"type": "logits", "role": "toxic", "context": context})
    check(
        "toxic role answers with the same shape",
        toxic.get("type") == "logits" and len(toxic.get("logits", [])) == vocab,
    )

    sweep_ok = True
    detail = ""
    for i in range(args.samples):
        text = _random_text(rng)
        tox = probe.request({"type": "toxicity", "text": text})
        emb = probe.request({"type": "embed", "text": text})
        score = tox.get("score")
        vector = emb.get("vector", [])
        if not (
            tox.get("type") == "toxicity"
            and isinstance(score, (int, float)) and 0.0 <= score <= 1.0
            and emb.get("type") == "embed"
            and len(vector) == hello["embed_dim"]
            and all(math.isfinite(v) for v in vector)
        ):
            sweep_ok = False
            detail = f"text {i}: {text!r}"
            break
    check(f"toxicity and embed over {args.samples} random texts", sweep_ok, detail)

    tokens = probe.request({"type": "tokenize", "text": _random_text(rng)})
    round_trip = probe.request({"type": "detokenize", "tokens": tokens.get("tokens", [])})
    check(
        "tokenize/detokenize round trip",
        tokens.get("type") == "tokenize" and isinstance(round_trip.get("text"), str),
    )

    garbage = probe.send_raw(b"this is not json\n")
    followup = probe.request({"type": "logits", "role": "base", "context": context})
    check(
        "malformed line yields an error reply and the connection survives",
        garbage.get("type") == "error" and followup == first,
        f"code={garbage.get('code')}",
    )
    unknown = probe.request({"type": "teleport", "to": "anywhere"})
    check("unknown request type yields an error reply", unknown.get("type") == "error")

    probe.close()
    print("selftest:", "all checks passed" if failures == 0 else f"{failures} check(s) failed")
    return 0 if failures == 0 else 1


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "serve":
            return _cmd_serve(args)
        return _cmd_selftest(args)
    except BridgeConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ConnectionError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
