"""Corpus-level rewriting: prompting, candidate generation, selection, I/O.

For each input record the pipeline builds a rewriting prompt, samples
candidates at every configured temperature, extracts the marked answer
span from each generation, scores the pool, and writes the fusion-optimal
rewrite as one JSONL line. Records are independent, so the work
parallelizes across a thread pool while the output preserves input order
and stays byte-deterministic for a fixed seed.
"""

from __future__ import annotations

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import ParameterError, PipelineError, TemplateError, TransportError
from .providers import DistributionProvider
from .ranking import (
    Candidate,
    FusionConfig,
    TextEmbedder,
    ToxicityScorer,
    fuse_and_select,
)
from .socd import DecodeMode, SoCDConfig, VanillaCDConfig, decode

PLACEHOLDER = "<raw_text>"
ANSWER_OPEN = "<answer>"
ANSWER_CLOSE = "</answer>"

FALLBACK_NONE = "none"
FALLBACK_RAW_GENERATION = "raw_generation"
FALLBACK_ORIGINAL_KEPT = "original_kept"


@dataclass(frozen=True)
class PromptTemplate:
    """Three-part rewriting prompt; ``user`` must contain the raw-text slot.

    The assistant part deliberately ends with the opening answer marker so
    the model starts generating inside the span; the extractor accepts a
    span whose opener lives in the prompt.
    """

    system: str
    user: str
    assistant: str
    answer_open: str = ANSWER_OPEN
    answer_close: str = ANSWER_CLOSE

    def __post_init__(self):
        if PLACEHOLDER not in self.user:
            raise TemplateError(f"user part lacks the {PLACEHOLDER} placeholder")
        if not self.answer_open or not self.answer_close:
            raise TemplateError("answer markers must be non-empty")


DEFAULT_TEMPLATE = PromptTemplate(
    system=(
        "You are a helpful assistant. Your task is to transcribe directly or "
        "indirectly harmful content in the text, as well as other content that "
        "may harm the model, into legal and reasonable content that conforms "
        "to human values."
    ),
    user=(
        "You should return the result between <answer> and </answer>. "
        "Here is an example input: this is a terrible fact. "
        "Output: <answer>this is a bad fact.</answer> "
        "Here is the text that may contain harmful content: <raw_text>"
    ),
    assistant="Here is the transcription result: <answer>",
)


def build_prompt(template: PromptTemplate, raw_text: str) -> str:
    """Flatten the template around ``raw_text`` into one prompt string."""
    if not isinstance(raw_text, str) or not raw_text.strip():
        raise ParameterError("raw_text must be a non-empty string")
    return "\n".join(
        [template.system, template.user.replace(PLACEHOLDER, raw_text), template.assistant]
    )


def extract_answer(
    generation: str,
    open_marker: str = ANSWER_OPEN,
    close_marker: str = ANSWER_CLOSE,
) -> str | None:
    """Text inside the answer span of a generation, or None.

    The span may have been opened by the prompt, so a generation that
    starts mid-span and merely closes the marker still counts: everything
    before the first close marker is taken, minus a later open marker if
    one precedes it. A generation with no close marker yields None.
    """
    close = generation.find(close_marker)
    if close < 0:
        return None
    open_ = generation.rfind(open_marker, 0, close)
    start = open_ + len(open_marker) if open_ >= 0 else 0
    return generation[start:close].strip()


@dataclass(frozen=True)
class CorpusRecord:
    """One input line: an id, the raw text, and any passthrough fields."""

    id: str
    text: str
    extra: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class DetoxRecord:
    """One output line: the chosen rewrite plus selection diagnostics."""

    id: str
    original: str
    detoxified: str
    fusion_score: float | None
    toxicity: float | None
    similarity: float | None
    temperature: float | None
    candidate_count: int
    fallback: str
    extra: dict[str, Any] = field(default_factory=dict)

    def to_json_obj(self) -> dict[str, Any]:
        row: dict[str, Any] = {
            "id": self.id,
            "text": self.detoxified,
            "original": self.original,
            "fusion_score": self.fusion_score,
            "toxicity": self.toxicity,
            "similarity": self.similarity,
            "temperature": self.temperature,
            "candidate_count": self.candidate_count,
            "fallback": self.fallback,
        }
        for key, value in self.extra.items():
            if key not in row:
                row[key] = value
        return row


@dataclass(frozen=True)
class RunReport:
    """Corpus-level summary of one rewriting run."""

    total_records: int
    written_records: int
    fallback_counts: dict[str, int]
    mean_toxicity_before: float | None
    mean_toxicity_after: float | None
    wall_time_s: float
    seed: int
    workers: int
    mode: str

    def to_json_obj(self) -> dict[str, Any]:
        return {
            "total_records": self.total_records,
            "written_records": self.written_records,
            "fallback_counts": dict(self.fallback_counts),
            "mean_toxicity_before": self.mean_toxicity_before,
            "mean_toxicity_after": self.mean_toxicity_after,
            "wall_time_s": self.wall_time_s,
            "seed": self.seed,
            "workers": self.workers,
            "mode": self.mode,
        }


def read_corpus(path: str | Path) -> list[CorpusRecord]:
    """Parse a JSONL corpus: one object per line with a non-empty "text".

    A missing "id" gets a synthetic ordinal id; duplicate ids are rejected
    because the output must stay joinable back to the input. Unknown fields
    ride along untouched.
    """
    records: list[CorpusRecord] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParameterError(f"{path}:{lineno}: bad JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise ParameterError(f"{path}:{lineno}: each line must be a JSON object")
            text = obj.get("text")
            if not isinstance(text, str) or not text.strip():
                raise ParameterError(f"{path}:{lineno}: \"text\" must be a non-empty string")
            raw_id = obj.get("id")
            if raw_id is None:
                rec_id = f"rec-{len(records) + 1:06d}"
            elif isinstance(raw_id, (str, int)):
                rec_id = str(raw_id)
            else:
                raise ParameterError(f"{path}:{lineno}: \"id\" must be a string or integer")
            if rec_id in seen:
                raise ParameterError(f"{path}:{lineno}: duplicate id {rec_id!r}")
            seen.add(rec_id)
            extra = {k: v for k, v in obj.items() if k not in ("id", "text")}
            records.append(CorpusRecord(id=rec_id, text=text, extra=extra))
    return records


def _generate_candidates(
    record_index: int,
    record: CorpusRecord,
    base: DistributionProvider,
    toxic: DistributionProvider | None,
    socd_cfg: SoCDConfig,
    fusion_cfg: FusionConfig,
    template: PromptTemplate,
    seed: int,
    mode: DecodeMode,
    vanilla_cfg: VanillaCDConfig | None,
) -> list[Candidate]:
    prompt_tokens = base.encode(build_prompt(template, record.text))
    if not prompt_tokens:
        raise PipelineError(f"record {record.id!r}: prompt encoded to zero tokens")
    drafts: list[Candidate] = []
    for t_index, temperature in enumerate(fusion_cfg.temperatures):
        for s_index in range(fusion_cfg.samples_per_temperature):
            # Seeding on (run seed, record, temperature, sample) makes every
            # draw independent of scheduling and worker count.
            stream = np.random.SeedSequence((seed, record_index, t_index, s_index))
            tokens = decode(
                base,
                toxic,
                prompt_tokens,
                temperature,
                socd_cfg,
                stream,
                mode=mode,
                vanilla_cfg=vanilla_cfg,
            )
            generation = base.decode_tokens(tokens)
            answer = extract_answer(generation, template.answer_open, template.answer_close)
            if answer is None:
                drafts.append(
                    Candidate(
                        text=generation.strip(),
                        temperature=temperature,
                        origin="raw_generation",
                    )
                )
            else:
                drafts.append(
                    Candidate(text=answer, temperature=temperature, origin="extracted")
                )
    return drafts


def _process_record(
    record_index: int,
    record: CorpusRecord,
    base: DistributionProvider,
    toxic: DistributionProvider | None,
    scorer: ToxicityScorer,
    embedder: TextEmbedder,
    socd_cfg: SoCDConfig,
    fusion_cfg: FusionConfig,
    template: PromptTemplate,
    seed: int,
    mode: DecodeMode,
    vanilla_cfg: VanillaCDConfig | None,
) -> tuple[DetoxRecord, float | None]:
    drafts = _generate_candidates(
        record_index, record, base, toxic, socd_cfg, fusion_cfg, template, seed, mode, vanilla_cfg
    )
    try:
        toxicity_before = float(scorer.score(record.text))
    except TransportError:
        raise
    except Exception:
        toxicity_before = None

    usable = [c for c in drafts if c.text]
    best = None
    scored: list[Candidate] = []
    if usable:
        try:
            best, scored = fuse_and_select(record.text, usable, scorer, embedder, fusion_cfg)
        except PipelineError:
            best = None

    if best is None:
        detox = DetoxRecord(
            id=record.id,
            original=record.text,
            detoxified=record.text,
            fusion_score=None,
            toxicity=toxicity_before,
            similarity=None,
            temperature=None,
            candidate_count=0,
            fallback=FALLBACK_ORIGINAL_KEPT,
            extra=record.extra,
        )
    else:
        fallback = FALLBACK_NONE if best.origin == "extracted" else FALLBACK_RAW_GENERATION
        detox = DetoxRecord(
            id=record.id,
            original=record.text,
            detoxified=best.text,
            fusion_score=best.fusion_score,
            toxicity=best.toxicity,
            similarity=best.similarity,
            temperature=best.temperature,
            candidate_count=sum(1 for c in scored if c.failure is None),
            fallback=fallback,
            extra=record.extra,
        )
    return detox, toxicity_before


def _mean(values: list[float]) -> float | None:
    return float(np.mean(values)) if values else None


def detoxify_corpus(
    input_path: str | Path,
    output_path: str | Path,
    providers: Sequence[DistributionProvider | None],
    scorer: ToxicityScorer,
    embedder: TextEmbedder,
    socd_cfg: SoCDConfig,
    fusion_cfg: FusionConfig,
    seed: int = 0,
    workers: int = 1,
    *,
    mode: DecodeMode = "socd",
    template: PromptTemplate = DEFAULT_TEMPLATE,
    vanilla_cfg: VanillaCDConfig | None = None,
) -> RunReport:
    """Rewrite a whole JSONL corpus; returns a summary report.

    ``providers`` is the (base, toxic) pair; the toxic slot may be None in
    "prompt-only" mode. ``workers`` threads process records concurrently,
    each on its own provider/scorer/embedder clones, while output lines are
    written strictly in input order. Identical inputs, config, and seed
    produce byte-identical output for any worker count.

    A hard failure (transport exhaustion, provider crash) aborts the run:
    partial output stays on disk, a ``<output>.manifest.json`` records how
    far the run got, and the error propagates.
    """
    if not isinstance(seed, int) or seed < 0:
        raise ParameterError(f"seed must be a non-negative integer, got {seed!r}")
    if not isinstance(workers, int) or workers < 1:
        raise ParameterError(f"workers must be a positive integer, got {workers!r}")
    base, toxic = providers
    if base is None:
        raise ParameterError("a base provider is required")

    records = read_corpus(input_path)
    started = time.monotonic()
    thread_ctx = threading.local()

    def run_one(index_and_record: tuple[int, CorpusRecord]) -> tuple[DetoxRecord, float | None]:
        index, record = index_and_record
        ctx = getattr(thread_ctx, "ctx", None)
        if ctx is None:
            ctx = (
                base.clone_for_worker(),
                toxic.clone_for_worker() if toxic is not None else None,
                scorer.clone_for_worker(),
                embedder.clone_for_worker(),
            )
            thread_ctx.ctx = ctx
        w_base, w_toxic, w_scorer, w_embedder = ctx
        return _process_record(
            index, record, w_base, w_toxic, w_scorer, w_embedder,
            socd_cfg, fusion_cfg, template, seed, mode, vanilla_cfg,
        )

    fallback_counts = {FALLBACK_NONE: 0, FALLBACK_RAW_GENERATION: 0, FALLBACK_ORIGINAL_KEPT: 0}
    before_scores: list[float] = []
    after_scores: list[float] = []
    written = 0
    output_path = Path(output_path)

    try:
        with open(output_path, "w", encoding="utf-8", newline="\n") as out:
            if workers == 1:
                results = map(run_one, enumerate(records))
                for detox, before in results:
                    _write_row(out, detox)
                    written += 1
                    _tally(detox, before, fallback_counts, before_scores, after_scores)
            else:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    futures = [pool.submit(run_one, (i, r)) for i, r in enumerate(records)]
                    for future in futures:
                        detox, before = future.result()
                        _write_row(out, detox)
                        written += 1
                        _tally(detox, before, fallback_counts, before_scores, after_scores)
    except Exception as exc:
        manifest = {
            "status": "aborted",
            "error": f"{type(exc).__name__}: {exc}",
            "completed_records": written,
            "total_records": len(records),
        }
        manifest_path = output_path.with_name(output_path.name + ".manifest.json")
        manifest_path.write_text(json.dumps(manifest, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
        raise

    return RunReport(
        total_records=len(records),
        written_records=written,
        fallback_counts=fallback_counts,
        mean_toxicity_before=_mean(before_scores),
        mean_toxicity_after=_mean(after_scores),
        wall_time_s=time.monotonic() - started,
        seed=seed,
        workers=workers,
        mode=mode,
    )


def _write_row(out, detox: DetoxRecord) -> None:
    out.write(json.dumps(detox.to_json_obj(), ensure_ascii=False) + "\n")


def _tally(
    detox: DetoxRecord,
    before: float | None,
    fallback_counts: dict[str, int],
    before_scores: list[float],
    after_scores: list[float],
) -> None:
    fallback_counts[detox.fallback] = fallback_counts.get(detox.fallback, 0) + 1
    if before is not None:
        before_scores.append(before)
    if detox.toxicity is not None:
        after_scores.append(detox.toxicity)
