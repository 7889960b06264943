"""Command-line entry points: corpus rewriting, model training, evaluation.

Exit codes: 0 on success, 2 for invalid flags/config/input data, 3 for
filesystem errors, 4 for remote-bridge failures, 1 for anything else.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .distributions import JS_MIXTURE, JS_SYMMETRIZED, DivergenceKind
from .errors import ConfigError, DetoxError, ParameterError, TransportError
from .metrics import DIST_SCOPES, evaluate_generations
from .pipeline import detoxify_corpus
from .providers import (
    RemoteProvider,
    TOKENIZER_MODES,
    load_ngram,
    save_ngram,
    train_ngram,
)
from .ranking import (
    FusionConfig,
    HashedBowEmbedder,
    LexiconToxicityScorer,
    RemoteTextEmbedder,
    RemoteToxicityScorer,
    load_lexicon,
)
from .socd import DECODE_MODES, SoCDConfig

RUN_DEFAULTS = {
    "divergence": "emd",
    "lambda_weight": 0.5,
    "temperatures": "0.6,0.8,1.0,1.2,1.3,1.5",
    "samples_per_temp": 3,
    "k_min": 10,
    "k_max": "half-vocab",
    "seed": 0,
    "workers": 1,
    "embedder": "bow:256",
    "mode": "socd",
    "max_new_tokens": 256,
    "js_form": JS_MIXTURE,
}

RUN_REQUIRED = ("input", "output", "base_model", "scorer")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="detox",
        description="Detoxify a text corpus with contrastive decoding and fusion re-ranking.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="rewrite a JSONL corpus")
    run.add_argument("--config", help="JSON file of flag values; explicit flags win")
    run.add_argument("--input", help="input corpus (JSONL with a \"text\" field)")
    run.add_argument("--output", help="output path (JSONL)")
    run.add_argument("--base-model", help="base provider: ngram:PATH or bridge:HOST:PORT")
    run.add_argument("--toxic-model", help="toxic provider: ngram:PATH or bridge:HOST:PORT")
    run.add_argument("--divergence", choices=[k.value for k in DivergenceKind])
    run.add_argument("--lambda", dest="lambda_weight", type=float,
                     help="fusion weight on detoxification vs. similarity")
    run.add_argument("--temperatures", help="comma-separated sampling temperatures")
    run.add_argument("--samples-per-temp", type=int)
    run.add_argument("--k-min", type=int)
    run.add_argument("--k-max", help="integer or 'half-vocab'")
    run.add_argument("--seed", type=int)
    run.add_argument("--workers", type=int)
    run.add_argument("--scorer", help="lexicon:PATH or bridge:HOST:PORT")
    run.add_argument("--embedder", help="bow:DIM or bridge:HOST:PORT")
    run.add_argument("--mode", choices=list(DECODE_MODES))
    run.add_argument("--max-new-tokens", type=int)
    run.add_argument("--js-form", choices=[JS_MIXTURE, JS_SYMMETRIZED])

    train = sub.add_parser("train-ngram", help="train and save an n-gram model")
    train.add_argument("--corpus", required=True)
    train.add_argument("--order", required=True, type=int)
    train.add_argument("--out", required=True)
    train.add_argument("--smoothing-k", type=float, default=1.0)
    train.add_argument("--tokenizer", choices=list(TOKENIZER_MODES), default="whitespace")
    train.add_argument("--vocab-corpus", action="append", default=[],
                       help="extra corpus whose tokens join the vocabulary (repeatable)")

    ev = sub.add_parser("eval", help="score a generations file and write a report")
    ev.add_argument("--generations", required=True,
                    help="JSONL with \"id\" (prompt) and \"text\" (generation)")
    ev.add_argument("--scores", required=True, help="lexicon:PATH or bridge:HOST:PORT")
    ev.add_argument("--report", required=True, help="where to write the JSON report")
    ev.add_argument("--threshold", type=float, default=0.5)
    ev.add_argument("--dist-scope", choices=list(DIST_SCOPES), default="per_prompt")
    ev.add_argument("--stems", help="lexicon file for stem frequency (defaults to --scores lexicon)")

    return parser


def _load_config_file(path: str) -> dict:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path}: bad JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"config {path}: top level must be an object")
    known = set(RUN_DEFAULTS) | set(RUN_REQUIRED) | {"toxic_model", "mode"}
    merged = {}
    for key, value in obj.items():
        norm = key.replace("-", "_")
        if norm not in known:
            raise ConfigError(f"config {path}: unknown key {key!r}")
        merged[norm] = value
    return merged


def _merge_run_settings(args: argparse.Namespace) -> dict:
    settings = dict(RUN_DEFAULTS)
    settings.update({k: None for k in RUN_REQUIRED})
    settings["toxic_model"] = None
    if args.config:
        settings.update(_load_config_file(args.config))
    for key in list(settings):
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    missing = [k for k in RUN_REQUIRED if not settings.get(k)]
    if missing:
        raise ConfigError("missing required settings: " + ", ".join(sorted(missing)))
    if settings["mode"] != "prompt-only" and not settings.get("toxic_model"):
        raise ConfigError(f"mode {settings['mode']!r} needs --toxic-model")
    return settings


def _parse_temperatures(value) -> tuple[float, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(float(t) for t in value)
    try:
        return tuple(float(part) for part in str(value).split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"bad temperature list: {value!r}") from None


def _parse_k_max(value) -> int | None:
    if value in (None, "half-vocab"):
        return None
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"--k-max must be an integer or 'half-vocab', got {value!r}") from None


def _make_provider(spec: str, role: str):
    kind, _, rest = str(spec).partition(":")
    if kind == "ngram" and rest:
        return load_ngram(rest)
    if kind == "bridge" and rest:
        return RemoteProvider(rest, role)
    raise ConfigError(f"model spec must be ngram:PATH or bridge:HOST:PORT, got {spec!r}")


def _make_scorer(spec: str):
    kind, _, rest = str(spec).partition(":")
    if kind == "lexicon" and rest:
        return LexiconToxicityScorer(load_lexicon(rest))
    if kind == "bridge" and rest:
        return RemoteToxicityScorer(rest)
    raise ConfigError(f"scorer spec must be lexicon:PATH or bridge:HOST:PORT, got {spec!r}")


def _make_embedder(spec: str):
    kind, _, rest = str(spec).partition(":")
    if kind == "bow" and rest:
        try:
            dim = int(rest)
        except ValueError:
            raise ConfigError(f"bow embedder needs an integer dimension, got {spec!r}") from None
        return HashedBowEmbedder(dim)
    if kind == "bridge" and rest:
        return RemoteTextEmbedder(rest)
    raise ConfigError(f"embedder spec must be bow:DIM or bridge:HOST:PORT, got {spec!r}")


def _cmd_run(args: argparse.Namespace) -> int:
    settings = _merge_run_settings(args)
    mode = settings["mode"]
    base = _make_provider(settings["base_model"], "base")
    toxic = None if mode == "prompt-only" else _make_provider(settings["toxic_model"], "toxic")
    scorer = _make_scorer(settings["scorer"])
    embedder = _make_embedder(settings["embedder"])
    socd_cfg = SoCDConfig(
        divergence=DivergenceKind.parse(str(settings["divergence"])),
        k_min=int(settings["k_min"]),
        k_max=_parse_k_max(settings["k_max"]),
        max_new_tokens=int(settings["max_new_tokens"]),
        eos_token=base.eos_token_id,
        js_form=str(settings["js_form"]),
    )
    fusion_cfg = FusionConfig(
        lambda_weight=float(settings["lambda_weight"]),
        temperatures=_parse_temperatures(settings["temperatures"]),
        samples_per_temperature=int(settings["samples_per_temp"]),
    )
    report = detoxify_corpus(
        settings["input"],
        settings["output"],
        (base, toxic),
        scorer,
        embedder,
        socd_cfg,
        fusion_cfg,
        seed=int(settings["seed"]),
        workers=int(settings["workers"]),
        mode=mode,
    )
    print(json.dumps(report.to_json_obj(), ensure_ascii=False, indent=2))
    return 0


def _cmd_train_ngram(args: argparse.Namespace) -> int:
    model = train_ngram(
        args.corpus,
        args.order,
        args.smoothing_k,
        args.tokenizer,
        vocab_corpora=args.vocab_corpus,
    )
    save_ngram(model, args.out)
    print(json.dumps({
        "out": str(args.out),
        "order": model.order,
        "vocab_size": model.vocab_size,
        "tokenizer": model.tokenizer,
    }))
    return 0


def _read_generations(path: str) -> list[tuple[str, list[str]]]:
    grouped: dict[str, list[str]] = {}
    order: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParameterError(f"{path}:{lineno}: bad JSON: {exc}") from exc
            if not isinstance(obj, dict) or not isinstance(obj.get("text"), str):
                raise ParameterError(f"{path}:{lineno}: need an object with a \"text\" string")
            raw_id = obj.get("id")
            item_id = str(raw_id) if raw_id is not None else f"prompt-{lineno:06d}"
            if item_id not in grouped:
                grouped[item_id] = []
                order.append(item_id)
            grouped[item_id].append(obj["text"])
    return [(item_id, grouped[item_id]) for item_id in order]


def _cmd_eval(args: argparse.Namespace) -> int:
    grouped = _read_generations(args.generations)
    scorer = _make_scorer(args.scores)
    stems = None
    if args.stems:
        stems = load_lexicon(args.stems)
    elif isinstance(scorer, LexiconToxicityScorer):
        stems = scorer.stems
    report = evaluate_generations(
        grouped,
        scorer,
        threshold=args.threshold,
        stems=stems,
        dist_scope=args.dist_scope,
    )
    payload = json.dumps(report.to_json_obj(), ensure_ascii=False, indent=2)
    Path(args.report).write_text(payload + "\n", encoding="utf-8")
    print(payload)
    return 0


def _exit_code_for(exc: BaseException) -> int:
    seen: set[int] = set()
    node: BaseException | None = exc
    while node is not None and id(node) not in seen:
        seen.add(id(node))
        if isinstance(node, TransportError):
            return 4
        node = node.__cause__ or node.__context__
    if isinstance(exc, (ConfigError, ParameterError)):
        return 2
    if isinstance(exc, OSError):
        return 3
    return 1


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "train-ngram": _cmd_train_ngram,
        "eval": _cmd_eval,
    }
    try:
        return handlers[args.command](args)
    except (DetoxError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
