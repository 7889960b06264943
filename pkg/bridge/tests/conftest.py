"""Shared fixtures: a tiny offline model set and a live bridge server.

The models are built in-process from seeded random weights and saved
with save_pretrained, so the tests never touch a network or a model
hub. All four checkpoints share one word-level tokenizer.
"""

import shutil
import warnings

import pytest
import torch
from tokenizers import Tokenizer, decoders
from tokenizers.models import WordLevel
from tokenizers.pre_tokenizers import WhitespaceSplit
from transformers import (
    GPT2Config,
    GPT2ForSequenceClassification,
    GPT2LMHeadModel,
    GPT2Model,
    PreTrainedTokenizerFast,
)
from transformers.utils import logging as hf_logging

from detox_bridge.backends import CausalLMBackend, EmbeddingBackend, ToxicityBackend
from detox_bridge.server import BridgeServer, BridgeService

hf_logging.set_verbosity_error()
hf_logging.disable_progress_bar()
warnings.filterwarnings("ignore", module="transformers")

WORDS = [
    "river", "stone", "quiet", "meadow", "walk", "storm", "light", "harbor",
    "late", "summer", "wind", "gravel", "slow", "red", "blue", "path",
    "morning", "cold", "bright", "field", "rain", "dust", "bridge", "lamp",
    "north", "garden", "tide", "cloud", "grass", "shore",
]

EOS_ID = 1


def build_tokenizer():
    vocab = {"<unk>": 0, "</s>": EOS_ID}
    for word in WORDS:
        vocab[word] = len(vocab)
    core = Tokenizer(WordLevel(vocab, unk_token="<unk>"))
    core.pre_tokenizer = WhitespaceSplit()
    core.decoder = decoders.WordPiece(prefix="##", cleanup=False)
    return PreTrainedTokenizerFast(
        tokenizer_object=core, unk_token="<unk>", eos_token="</s>", pad_token="</s>",
    )


def lm_config(vocab_size):
    return GPT2Config(
        vocab_size=vocab_size, n_positions=64, n_embd=32, n_layer=2, n_head=2,
        bos_token_id=EOS_ID, eos_token_id=EOS_ID, pad_token_id=EOS_ID,
    )


@pytest.fixture(scope="session")
def model_dirs(tmp_path_factory):
    root = tmp_path_factory.mktemp("checkpoints")
    tokenizer = build_tokenizer()
    vocab_size = len(tokenizer)
    dirs = {name: root / name for name in ("base", "toxic", "scorer", "embedder")}

    torch.manual_seed(11)
    GPT2LMHeadModel(lm_config(vocab_size)).save_pretrained(dirs["base"])
    torch.manual_seed(22)
    GPT2LMHeadModel(lm_config(vocab_size)).save_pretrained(dirs["toxic"])

    clf_config = lm_config(vocab_size)
    clf_config.n_layer = 1
    clf_config.num_labels = 2
    clf_config.id2label = {0: "non_toxic", 1: "toxic"}
    clf_config.label2id = {"non_toxic": 0, "toxic": 1}
    torch.manual_seed(33)
    GPT2ForSequenceClassification(clf_config).save_pretrained(dirs["scorer"])

    emb_config = lm_config(vocab_size)
    emb_config.n_layer = 1
    torch.manual_seed(44)
    GPT2Model(emb_config).save_pretrained(dirs["embedder"])

    for path in dirs.values():
        tokenizer.save_pretrained(path)
    dirs["vocab_size"] = vocab_size
    return dirs


@pytest.fixture(scope="session")
def live_bridge(model_dirs):
    service = BridgeService(
        base=CausalLMBackend(str(model_dirs["base"])),
        toxic=CausalLMBackend(str(model_dirs["toxic"])),
        scorer=ToxicityBackend(str(model_dirs["scorer"])),
        embedder=EmbeddingBackend(str(model_dirs["embedder"])),
    )
    with BridgeServer(service, port=0) as server:
        yield server


@pytest.fixture()
def mismatched_tokenizer_dir(model_dirs, tmp_path):
    """A copy of the toxic checkpoint whose tokenizer has a different
    vocabulary, for the refuse-to-serve path."""
    target = tmp_path / "drifted"
    shutil.copytree(model_dirs["toxic"], target)
    vocab = {"<unk>": 0, "</s>": 1}
    for word in WORDS:
        vocab[word.upper()] = len(vocab)
    core = Tokenizer(WordLevel(vocab, unk_token="<unk>"))
    core.pre_tokenizer = WhitespaceSplit()
    drifted = PreTrainedTokenizerFast(
        tokenizer_object=core, unk_token="<unk>", eos_token="</s>", pad_token="</s>",
    )
    drifted.save_pretrained(target)
    return target
