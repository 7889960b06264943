"""Word-level text normalization shared by the scorer, embedder, and metrics.

Every surface that looks at words (lexicon matching, bag-of-words hashing,
distinct-n, stem frequency) must agree on what a "word" is, so the rule
lives in one place: case-folded whitespace tokens with leading and trailing
ASCII punctuation stripped.
"""

from __future__ import annotations

import string
from typing import Iterable, Sequence

_STRIP = string.punctuation


def word_tokens(text: str) -> list[str]:
    """Split ``text`` into normalized word tokens.

    Tokens that are pure punctuation vanish; everything else is kept
    verbatim apart from case folding and edge punctuation.
    """
    out = []
    for raw in text.casefold().split():
        tok = raw.strip(_STRIP)
        if tok:
            out.append(tok)
    return out


def matches_stem(token: str, stems: Iterable[str]) -> bool:
    """True when ``token`` equals a stem or extends one as a prefix.

    Stems are matched as word prefixes ("poison" hits "poisonous") because
    lexicons typically list root forms, not every inflection.
    """
    for stem in stems:
        if stem and token.startswith(stem):
            return True
    return False


def count_stem_tokens(tokens: Sequence[str], stems: Iterable[str]) -> int:
    """Number of tokens in ``tokens`` that match any stem."""
    stems = tuple(stems)
    return sum(1 for tok in tokens if matches_stem(tok, stems))
