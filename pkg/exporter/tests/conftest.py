import json

import pytest
import torch
from transformers import BertConfig, BertForMaskedLM, BertTokenizer

from mlm_exporter import load_model

# Vocabulary for the locally materialized tiny checkpoint. The sandbox has
# no model hub access, so tests build a small randomly initialized BERT
# masked LM on disk; it exercises the same code path as a hub checkpoint.
VOCAB = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "topic", ".", ",", "a", "the", "and",
    "apple", "banana", "cherry", "plum", "fig",
    "fruit", "red", "yellow", "green", "sweet", "sour", "ripe",
    "tree", "pie", "jam", "seed", "peel", "fresh", "dried",
]


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("checkpoint") / "tiny-masked-lm"
    path.mkdir()
    (path / "vocab.txt").write_text("\n".join(VOCAB) + "\n")
    tokenizer = BertTokenizer(str(path / "vocab.txt"), do_lower_case=True)
    torch.manual_seed(1234)
    config = BertConfig(
        vocab_size=len(VOCAB),
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=4,
        intermediate_size=64,
        max_position_embeddings=64,
    )
    model = BertForMaskedLM(config)
    model.eval()
    tokenizer.save_pretrained(str(path))
    model.save_pretrained(str(path))
    return path


@pytest.fixture(scope="session")
def tiny_model(tiny_checkpoint):
    return load_model(str(tiny_checkpoint))


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """10 nodes, 3 labels, all words inside the tiny vocabulary."""
    root = tmp_path_factory.mktemp("toy")
    texts = [
        "apple pie fresh apple",
        "banana jam sweet",
        "cherry tree red cherry",
        "plum jam ripe",
        "fig tree dried fig",
        "apple tree green",
        "banana peel yellow banana",
        "cherry pie sweet",
        "plum tree fresh",
        "fig jam sour",
    ]
    texts_path = root / "texts.jsonl"
    with open(texts_path, "w") as fh:
        for i, t in enumerate(texts):
            fh.write(json.dumps({"id": i, "text": t}) + "\n")
    labels_path = root / "labels.txt"
    labels_path.write_text("apple\nbanana jam\ncherry tree red\n")
    return {"root": root, "texts": texts_path, "labels": labels_path, "n": len(texts)}
