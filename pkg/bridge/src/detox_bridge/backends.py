"""Model backends: causal LM logits, toxicity scoring, text embedding.

Each backend wraps a locally available transformers checkpoint (a hub
name or a directory produced by ``save_pretrained``). All inference
runs under ``torch.inference_mode`` with the model in eval mode, so
repeated calls with the same input return identical outputs.
"""

from __future__ import annotations

import hashlib

import torch
from transformers import (
    AutoModel,
    AutoModelForCausalLM,
    AutoModelForSequenceClassification,
    AutoTokenizer,
)

from .errors import BridgeConfigError

# Classifier labels that count toward the toxicity score, matched
# case-insensitively against label names unless negated by a non-/not-
# prefix.
TOXIC_LABEL_MARKERS = ("toxic", "offensive", "hate", "insult", "threat", "obscene")


def tokenizer_fingerprint(tokenizer) -> str:
    """Stable identity for a tokenizer: a hash over its sorted vocab.

    Two connections (or two processes) loading the same tokenizer files
    advertise the same id, which is how the client decides that token
    ids from different endpoints live in one space.
    """
    digest = hashlib.sha1()
    for token, idx in sorted(tokenizer.get_vocab().items()):
        digest.update(f"{token}\x00{idx}\x00".encode("utf-8"))
    return f"hf-{digest.hexdigest()[:12]}"


def _context_window(config) -> int | None:
    for attr in ("n_positions", "max_position_embeddings"):
        value = getattr(config, attr, None)
        if isinstance(value, int) and value > 0:
            return value
    return None


class CausalLMBackend:
    """Next-token logits from a causal language model.

    Contexts longer than the model window are left-truncated: the most
    recent tokens win, which is what an autoregressive decode loop
    needs.
    """

    def __init__(self, ref: str, device: str = "cpu"):
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(ref)
            self.model = AutoModelForCausalLM.from_pretrained(ref).to(device).eval()
        except (OSError, ValueError) as exc:
            raise BridgeConfigError(f"cannot load causal LM from {ref!r}: {exc}") from exc
        self.device = device
        self.vocab_size = int(self.model.config.vocab_size)
        self.window = _context_window(self.model.config)
        eos = self.model.config.eos_token_id
        if eos is None:
            eos = self.tokenizer.eos_token_id
        self.eos_token_id = int(eos) if eos is not None else None
        self.tokenizer_id = tokenizer_fingerprint(self.tokenizer)

    @torch.inference_mode()
    def next_logits(self, context: list[int]) -> list[float]:
        if self.window is not None and len(context) > self.window:
            context = context[-self.window:]
        ids = torch.tensor([context], dtype=torch.long, device=self.device)
        row = self.model(input_ids=ids).logits[0, -1, :]
        return row.double().tolist()

    def encode(self, text: str) -> list[int]:
        return [int(t) for t in self.tokenizer.encode(text, add_special_tokens=False)]

    def decode(self, tokens: list[int]) -> str:
        return self.tokenizer.decode(tokens, skip_special_tokens=True)


class ToxicityBackend:
    """Score in [0, 1] from a sequence-classification checkpoint.

    Scoring rule, chosen by the checkpoint's own config:
      - one label: sigmoid of its logit;
      - multi-label config: sigmoid per label, score = max over labels
        whose name marks toxicity (all labels when none do);
      - otherwise: softmax, score = summed probability of the
        toxicity-marked labels, falling back to class index 1.
    Empty or whitespace-only text scores exactly 0 without touching the
    model, so the boundary is defined and fast.
    """

    def __init__(self, ref: str, device: str = "cpu"):
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(ref)
            self.model = (
                AutoModelForSequenceClassification.from_pretrained(ref).to(device).eval()
            )
        except (OSError, ValueError) as exc:
            raise BridgeConfigError(f"cannot load classifier from {ref!r}: {exc}") from exc
        self.device = device
        self.window = _context_window(self.model.config)
        config = self.model.config
        self.labels = [str(config.id2label[i]) for i in range(config.num_labels)]
        self.multi_label = config.problem_type == "multi_label_classification"
        self.toxic_indices = [
            i for i, name in enumerate(self.labels) if self._marks_toxicity(name)
        ]

    @staticmethod
    def _marks_toxicity(name: str) -> bool:
        folded = name.casefold().strip()
        if folded.startswith(("non", "not")):
            return False
        return any(marker in folded for marker in TOXIC_LABEL_MARKERS)

    @torch.inference_mode()
    def score(self, text: str) -> tuple[float, dict[str, float]]:
        if not text.strip():
            return 0.0, {}
        encoded = self.tokenizer(
            text, return_tensors="pt", truncation=True, max_length=self.window
        ).to(self.device)
        logits = self.model(**encoded).logits[0].double()
        if len(self.labels) == 1:
            probs = torch.sigmoid(logits)
            score = float(probs[0])
        elif self.multi_label:
            probs = torch.sigmoid(logits)
            pool = self.toxic_indices or range(len(self.labels))
            score = max(float(probs[i]) for i in pool)
        else:
            probs = torch.softmax(logits, dim=-1)
            pool = self.toxic_indices or [1]
            score = float(sum(float(probs[i]) for i in pool))
        per_label = {name: float(probs[i]) for i, name in enumerate(self.labels)}
        return min(max(score, 0.0), 1.0), per_label


class EmbeddingBackend:
    """L2-normalized mean-pooled hidden states as a sentence vector.

    Empty or whitespace-only text embeds to the zero vector (documented
    degenerate case; downstream cosine treats it as similarity 0).
    """

    def __init__(self, ref: str, device: str = "cpu"):
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(ref)
            self.model = AutoModel.from_pretrained(ref).to(device).eval()
        except (OSError, ValueError) as exc:
            raise BridgeConfigError(f"cannot load embedder from {ref!r}: {exc}") from exc
        self.device = device
        self.window = _context_window(self.model.config)
        self.dim = int(self.model.config.hidden_size)

    @torch.inference_mode()
    def embed(self, text: str) -> list[float]:
        if not text.strip():
            return [0.0] * self.dim
        encoded = self.tokenizer(
            text, return_tensors="pt", truncation=True, max_length=self.window
        ).to(self.device)
        hidden = self.model(**encoded).last_hidden_state[0].double()
        mask = encoded["attention_mask"][0].double().unsqueeze(-1)
        pooled = (hidden * mask).sum(dim=0) / mask.sum().clamp(min=1.0)
        norm = float(pooled.norm())
        if norm > 0.0:
            pooled = pooled / norm
        return pooled.tolist()
