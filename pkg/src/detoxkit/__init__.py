"""Corpus-level text detoxification toolkit.

Rewrites toxic text by prompting a base language model, suppressing the
tokens a deliberately toxic model prefers (with strength adapted to how far
the two models disagree), sampling candidates across a temperature ladder,
and keeping the candidate that best trades toxicity against meaning
preservation. Ships with evaluation metrics and a wire protocol for
plugging in remote models.
"""

from .distributions import (
    DivergenceKind,
    Kind,
    TokenDistribution,
    alpha_from_delta,
    divergence,
    log_prob_diff,
    softmax,
)
from .errors import (
    BridgeRequestError,
    ConfigError,
    DetoxError,
    ParameterError,
    PipelineError,
    ProviderError,
    TemplateError,
    TransportError,
)
from .metrics import (
    EvalReport,
    dist_n,
    dist_n_grouped,
    evaluate_generations,
    expected_max_toxicity,
    find_template_responses,
    stem_frequency,
    toxicity_probability,
)
from .pipeline import (
    DEFAULT_TEMPLATE,
    CorpusRecord,
    DetoxRecord,
    PromptTemplate,
    RunReport,
    build_prompt,
    detoxify_corpus,
    extract_answer,
    read_corpus,
)
from .providers import (
    DistributionProvider,
    NgramModel,
    RemoteProvider,
    TableProvider,
    load_ngram,
    save_ngram,
    train_ngram,
)
from .protocol import BridgeClient, Handshake, PROTOCOL_VERSION
from .ranking import (
    Candidate,
    FusionConfig,
    HashedBowEmbedder,
    LexiconToxicityScorer,
    RemoteTextEmbedder,
    RemoteToxicityScorer,
    TextEmbedder,
    ToxicityScorer,
    cosine_similarity,
    fuse_and_select,
    fusion_score,
    hashed_bow_embed,
    lexicon_toxicity,
    load_lexicon,
)
from .socd import (
    SoCDConfig,
    SoCDStepTrace,
    VanillaCDConfig,
    decode,
    socd_step,
    vanilla_cd_step,
)

__version__ = "0.1.0"

__all__ = [
    "BridgeClient",
    "BridgeRequestError",
    "Candidate",
    "ConfigError",
    "CorpusRecord",
    "DEFAULT_TEMPLATE",
    "DetoxError",
    "DetoxRecord",
    "DistributionProvider",
    "DivergenceKind",
    "EvalReport",
    "FusionConfig",
    "Handshake",
    "HashedBowEmbedder",
    "Kind",
    "LexiconToxicityScorer",
    "NgramModel",
    "PROTOCOL_VERSION",
    "ParameterError",
    "PipelineError",
    "PromptTemplate",
    "ProviderError",
    "RemoteProvider",
    "RemoteTextEmbedder",
    "RemoteToxicityScorer",
    "RunReport",
    "SoCDConfig",
    "SoCDStepTrace",
    "TableProvider",
    "TemplateError",
    "TextEmbedder",
    "TokenDistribution",
    "ToxicityScorer",
    "TransportError",
    "VanillaCDConfig",
    "alpha_from_delta",
    "build_prompt",
    "cosine_similarity",
    "decode",
    "detoxify_corpus",
    "dist_n",
    "dist_n_grouped",
    "divergence",
    "evaluate_generations",
    "expected_max_toxicity",
    "extract_answer",
    "find_template_responses",
    "fuse_and_select",
    "fusion_score",
    "hashed_bow_embed",
    "lexicon_toxicity",
    "load_lexicon",
    "log_prob_diff",
    "read_corpus",
    "save_ngram",
    "socd_step",
    "softmax",
    "stem_frequency",
    "toxicity_probability",
    "train_ngram",
    "vanilla_cd_step",
]
