"""TCP bridge exposing causal-LM logits, toxicity scores, and text
embeddings as line-delimited JSON, for decoders that steer generation
by comparing two models' next-token distributions."""

from .backends import CausalLMBackend, EmbeddingBackend, ToxicityBackend, tokenizer_fingerprint
from .errors import BridgeConfigError, BridgeError
from .server import BridgeServer, BridgeService
from .wire import PROTOCOL_VERSION

__version__ = "0.1.0"

__all__ = [
    "BridgeConfigError",
    "BridgeError",
    "BridgeServer",
    "BridgeService",
    "CausalLMBackend",
    "EmbeddingBackend",
    "PROTOCOL_VERSION",
    "ToxicityBackend",
    "tokenizer_fingerprint",
    "__version__",
]
