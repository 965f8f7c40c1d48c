"""Export prior score files from a real pretrained masked language model.

For every node text a slot-filling prompt is built with the model's native
mask token, one forward pass reads the softmax probability of each label
token at its slot, and the per-label log-probabilities are summed into a
score matrix written in the score-file format consumed by the core
pipeline. A companion JSON Lines file records each label's tokenization so
the core scores exactly the same token sequences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import torch
from transformers import AutoModelForMaskedLM, AutoTokenizer

__all__ = ["ExporterConfig", "LoadedModel", "load_model", "export_prior_scores"]


@dataclass(frozen=True)
class ExporterConfig:
    model: str
    texts: str
    labels: str
    out: str
    tokens_out: str | None = None
    instruction: str = ""
    batch_size: int = 8
    device: str = "cpu"
    max_length: int = 128

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.max_length < 4:
            raise ValueError("max_length must leave room for the prompt")


@dataclass
class LoadedModel:
    tokenizer: object
    model: object
    device: str


def load_model(name_or_path: str, device: str = "cpu") -> LoadedModel:
    tokenizer = AutoTokenizer.from_pretrained(name_or_path)
    if tokenizer.mask_token is None:
        raise ValueError(f"{name_or_path} has no mask token; not a masked LM")
    model = AutoModelForMaskedLM.from_pretrained(name_or_path)
    model.to(device)
    model.eval()
    return LoadedModel(tokenizer, model, device)


def read_node_texts(path) -> list[str]:
    """JSON Lines {"id": int, "text": str}; ids must cover 0..N-1 exactly once."""
    entries: dict[int, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            node = obj["id"]
            if node in entries:
                raise ValueError(f"{path}:{lineno}: duplicate id {node}")
            entries[node] = obj["text"]
    if not entries or sorted(entries) != list(range(len(entries))):
        raise ValueError(f"{path}: ids must cover 0..N-1 exactly once")
    return [entries[i] for i in range(len(entries))]


def read_labels(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        labels = [line.rstrip("\n") for line in fh]
    while labels and labels[-1] == "":
        labels.pop()
    if not labels:
        raise ValueError(f"{path}: no labels found")
    return labels


def tokenize_labels(tokenizer, label_texts) -> list[list[str]]:
    tokenized = []
    for text in label_texts:
        tokens = tokenizer.tokenize(text)
        if not tokens:
            raise ValueError(f"label {text!r} tokenizes to nothing")
        tokenized.append(tokens)
    return tokenized


def build_prompt(instruction: str, mask_token: str, num_masks: int, text: str) -> str:
    slots = " ".join([mask_token] * num_masks)
    if instruction:
        return f"{instruction}. {slots}. {text}"
    return f"{slots}. {text}"


def write_scores(rows, num_labels: int, path) -> None:
    """Score-file format: shortest round-trip decimals, one row per node."""
    lines = [f"{len(rows)}\t{num_labels}"]
    for row in rows:
        lines.append(" ".join(repr(float(v)) for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def score_batch(loaded: LoadedModel, prompts, label_token_ids, num_masks: int, max_length: int):
    """One padded forward pass; returns per-prompt label scores.

    Truncation removes trailing text tokens only, so the mask slots (which
    precede the text) always survive; their count is asserted anyway.
    """
    tokenizer, model = loaded.tokenizer, loaded.model
    enc = tokenizer(
        list(prompts),
        return_tensors="pt",
        padding=True,
        truncation=True,
        max_length=max_length,
    )
    enc = {k: v.to(loaded.device) for k, v in enc.items()}
    try:
        with torch.no_grad():
            logits = model(**enc).logits
    except RuntimeError as exc:
        if "memory" in str(exc).lower():
            raise RuntimeError(f"{exc} (reduce batch_size)") from exc
        raise
    log_probs = torch.log_softmax(logits, dim=-1)
    rows = []
    for b in range(len(prompts)):
        positions = (enc["input_ids"][b] == tokenizer.mask_token_id).nonzero().flatten()
        if positions.numel() != num_masks:
            raise RuntimeError(
                f"prompt {b} encoded with {positions.numel()} mask slots, expected {num_masks}"
            )
        slot_lp = log_probs[b, positions]
        row = []
        for token_ids in label_token_ids:
            score = sum(float(slot_lp[i, tid]) for i, tid in enumerate(token_ids))
            row.append(score)
        rows.append(row)
    return rows


def export_prior_scores(cfg: ExporterConfig, loaded: LoadedModel | None = None) -> None:
    """Score every (node, label) pair and write the score file.

    Also writes the label tokenization JSON Lines file when
    `cfg.tokens_out` is set. Deterministic for a fixed checkpoint: the
    model runs in eval mode and no sampling is involved.
    """
    loaded = loaded if loaded is not None else load_model(cfg.model, cfg.device)
    tokenizer = loaded.tokenizer
    texts = read_node_texts(cfg.texts)
    label_texts = read_labels(cfg.labels)
    label_tokens = tokenize_labels(tokenizer, label_texts)
    label_token_ids = [tokenizer.convert_tokens_to_ids(toks) for toks in label_tokens]
    num_masks = max(len(t) for t in label_tokens)

    # prompt overhead (everything but the node text) must leave room for at
    # least one text token
    probe = build_prompt(cfg.instruction, tokenizer.mask_token, num_masks, "")
    overhead = len(tokenizer(probe)["input_ids"])
    if cfg.max_length < overhead + 1:
        raise ValueError(
            f"max_length={cfg.max_length} cannot fit the prompt overhead "
            f"({overhead} tokens) plus any text"
        )

    rows = []
    for start in range(0, len(texts), cfg.batch_size):
        prompts = [
            build_prompt(cfg.instruction, tokenizer.mask_token, num_masks, s)
            for s in texts[start : start + cfg.batch_size]
        ]
        rows.extend(score_batch(loaded, prompts, label_token_ids, num_masks, cfg.max_length))
    write_scores(rows, len(label_texts), cfg.out)

    if cfg.tokens_out:
        with open(cfg.tokens_out, "w", encoding="utf-8") as fh:
            for text, tokens in zip(label_texts, label_tokens):
                fh.write(json.dumps({"label": text, "tokens": tokens}) + "\n")
