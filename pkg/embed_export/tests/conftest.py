import json

import pytest
import torch
from transformers import BertConfig, BertModel, BertTokenizerFast

SENTENCES = [
    ("markets rally after rate cut", "business"),
    ("team wins the championship game", "sports"),
    ("new phone launches next week", "tech"),
    ("storm warning issued for the coast", "weather"),
    ("election results announced tonight", "politics"),
    ("study links sleep and memory", "science"),
    ("film premiere draws huge crowd", "entertainment"),
    ("recipe for a quick dinner", "food"),
    ("airline adds new routes", "travel"),
    ("museum opens modern art wing", "culture"),
]

_SPECIALS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]


@pytest.fixture(scope="session")
def tiny_encoder(tmp_path_factory):
    """A self-contained word-piece encoder checkpoint on local disk.

    Tiny randomly initialized weights (seeded, so the checkpoint is stable
    within a session) plus a vocabulary covering the fixture sentences;
    nothing is downloaded.
    """
    root = tmp_path_factory.mktemp("encoder")
    words = sorted({w for text, _ in SENTENCES for w in text.split()})
    vocab = _SPECIALS + words + ["##s", "##ing"]
    (root / "vocab.txt").write_text("\n".join(vocab) + "\n")

    torch.manual_seed(0)
    config = BertConfig(
        vocab_size=len(vocab), hidden_size=32, num_hidden_layers=2,
        num_attention_heads=2, intermediate_size=64,
        max_position_embeddings=64)
    model = BertModel(config)
    model.save_pretrained(root)
    tokenizer = BertTokenizerFast(vocab_file=str(root / "vocab.txt"),
                                  do_lower_case=True)
    tokenizer.save_pretrained(root)
    return str(root)


@pytest.fixture()
def fixture_dataset(tmp_path):
    path = tmp_path / "sentences.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for i, (text, label) in enumerate(SENTENCES):
            fh.write(json.dumps({"id": f"s{i}", "text": text,
                                 "label": label}) + "\n")
    return path
