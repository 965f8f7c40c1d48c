"""Prompt construction and prior-logit generation.

Node texts plus label texts are turned into a dense score matrix through a
token-probability backend, then refined by graph propagation and per-class
normalization into prior logits that can be used directly for zero-shot
prediction.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .backends import PriorScoreBackend
from .errors import FormatError, ScoringError
from .graph import NormalizedAdjacency, propagate

__all__ = [
    "LabelVocab",
    "PromptTemplate",
    "build_prompt",
    "label_score",
    "assemble_score_matrix",
    "normalize_columns",
    "zero_shot_predict",
    "refine_scores",
    "prior_pipeline",
    "load_node_texts",
    "load_labels",
    "load_predictions",
    "save_predictions",
]


@dataclass(frozen=True)
class LabelVocab:
    """Ordered label texts with tokenizations.

    A label's class index is its position in the sequence, so the mapping
    from label text to class index never needs to be stored separately.
    """

    labels: tuple[tuple[str, tuple[str, ...]], ...]

    def __post_init__(self):
        if not self.labels:
            raise ValueError("label set must be nonempty")
        texts = [t for t, _ in self.labels]
        if len(set(texts)) != len(texts):
            raise ValueError("label texts must be unique")
        if any(not tokens for _, tokens in self.labels):
            raise ValueError("every label needs at least one token")

    @classmethod
    def from_texts(cls, texts, tokenizations=None) -> "LabelVocab":
        """Build from label texts; whitespace tokenization unless overridden.

        `tokenizations` maps a label text to an explicit token sequence
        (e.g. from a subword tokenizer export).
        """
        tokenizations = tokenizations or {}
        labels = []
        for text in texts:
            override = tokenizations.get(text)
            tokens = tuple(override) if override else tuple(text.split())
            labels.append((text, tokens))
        return cls(tuple(labels))

    @property
    def num_labels(self) -> int:
        return len(self.labels)

    @property
    def texts(self) -> tuple[str, ...]:
        return tuple(t for t, _ in self.labels)

    @property
    def token_lists(self) -> tuple[tuple[str, ...], ...]:
        return tuple(tok for _, tok in self.labels)

    @property
    def max_token_length(self) -> int:
        """Longest label tokenization; sets the number of mask slots."""
        return max(len(tok) for _, tok in self.labels)

    def class_index(self, text: str) -> int:
        return self.texts.index(text)


@dataclass(frozen=True)
class PromptTemplate:
    """Instruction plus answer-slot rendering for slot-filling prompts."""

    instruction: str = ""
    mask_token: str = "<mask>"
    mask_separator: str = " "

    def __post_init__(self):
        if not self.mask_token:
            raise ValueError("mask_token must be nonempty")


def build_prompt(template: PromptTemplate, text: str, num_masks: int) -> str:
    """Render "<instruction>. <masks>. <text>".

    The instruction segment (and its trailing period) is dropped entirely
    when the instruction is empty.
    """
    if num_masks < 1:
        raise ValueError("num_masks must be at least 1")
    slots = template.mask_separator.join([template.mask_token] * num_masks)
    if template.instruction:
        return f"{template.instruction}. {slots}. {text}"
    return f"{slots}. {text}"


def label_score(token_log_probs) -> float:
    """Sum of per-slot token log-probabilities: the label's raw log score."""
    vals = [float(v) for v in token_log_probs]
    if not vals:
        raise ValueError("token_log_probs must be nonempty")
    return float(sum(vals))


def assemble_score_matrix(texts, vocab: LabelVocab, template: PromptTemplate, backend, workers: int | None = None) -> np.ndarray:
    """Score every (node, label) pair into a dense |V| x |L| matrix.

    A :class:`PriorScoreBackend` short-circuits the prompt stage and returns
    its stored matrix verbatim (dimensions are still checked). Rows are
    independent, so with `workers > 1` they are filled from a thread pool;
    results are written by index and stay deterministic.
    """
    num_nodes = len(texts)
    if num_nodes < 1:
        raise ValueError("at least one node text is required")
    if isinstance(backend, PriorScoreBackend):
        prior = backend.prior
        if prior.num_nodes != num_nodes or prior.num_labels != vocab.num_labels:
            raise ValueError(
                f"precomputed scores are {prior.num_nodes}x{prior.num_labels}, "
                f"need {num_nodes}x{vocab.num_labels}"
            )
        return prior.scores.copy()

    token_lists = vocab.token_lists
    num_masks = vocab.max_token_length

    def score_row(v: int) -> list[float]:
        prompt = build_prompt(template, texts[v], num_masks)
        try:
            per_label = backend.score_labels(prompt, token_lists, num_masks=num_masks)
        except Exception as exc:
            raise ScoringError(f"scoring failed for node {v}: {exc}") from exc
        if len(per_label) != len(token_lists):
            raise ScoringError(
                f"node {v}: backend returned {len(per_label)} label scores, "
                f"expected {len(token_lists)}"
            )
        return [label_score(lp) for lp in per_label]

    if workers is None:
        workers = getattr(backend, "max_inflight", 1)
    if workers > 1 and num_nodes > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(score_row, range(num_nodes)))
    else:
        rows = [score_row(v) for v in range(num_nodes)]
    return np.array(rows, dtype=np.float64)


def normalize_columns(z) -> np.ndarray:
    """Z-score each column using population statistics.

    Columns whose population standard deviation falls below 1e-12 are set
    to zero rather than divided by a tiny denominator.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 1:
        raise ValueError("score matrix must be 2-D with at least one row")
    mu = z.mean(axis=0)
    sigma = z.std(axis=0)
    degenerate = sigma < 1e-12
    out = (z - mu) / np.where(degenerate, 1.0, sigma)
    out[:, degenerate] = 0.0
    return out


def zero_shot_predict(z) -> np.ndarray:
    """Per-row argmax; ties go to the smallest class index."""
    z = np.asarray(z)
    if z.ndim != 2:
        raise ValueError("score matrix must be 2-D")
    return np.argmax(z, axis=1).astype(np.int64)


def refine_scores(raw, adj: NormalizedAdjacency | None, steps: int = 10, do_propagate: bool = True, do_normalize: bool = True) -> np.ndarray:
    """Propagation followed by normalization, each skippable for ablations."""
    scores = np.array(raw, dtype=np.float64)
    if do_propagate and steps > 0:
        if adj is None:
            raise ValueError("graph propagation requested but no adjacency supplied")
        scores = propagate(scores, adj, steps)
    if do_normalize:
        scores = normalize_columns(scores)
    return scores


def prior_pipeline(
    texts,
    vocab: LabelVocab,
    template: PromptTemplate,
    backend,
    adj: NormalizedAdjacency | None = None,
    steps: int = 10,
    do_propagate: bool = True,
    do_normalize: bool = True,
    workers: int | None = None,
):
    """Full prior-logit pipeline: assemble, propagate, normalize, predict.

    Returns (prior logits, predicted class per node).
    """
    raw = assemble_score_matrix(texts, vocab, template, backend, workers=workers)
    scores = refine_scores(raw, adj, steps, do_propagate, do_normalize)
    return scores, zero_shot_predict(scores)


def load_node_texts(path) -> list[str]:
    """Read JSON Lines {"id": int, "text": str}; ids must cover 0..N-1 exactly once."""
    entries: dict[int, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON") from exc
            if not isinstance(obj, dict) or "id" not in obj or "text" not in obj:
                raise FormatError(
                    f"{path}:{lineno}: expected an object with 'id' and 'text'"
                )
            node = obj["id"]
            if isinstance(node, bool) or not isinstance(node, int):
                raise FormatError(f"{path}:{lineno}: 'id' must be an integer")
            if not isinstance(obj["text"], str):
                raise FormatError(f"{path}:{lineno}: 'text' must be a string")
            if node in entries:
                raise FormatError(f"{path}:{lineno}: duplicate id {node}")
            entries[node] = obj["text"]
    if not entries:
        raise FormatError(f"{path}: no node texts found")
    n = len(entries)
    missing = [i for i in range(n) if i not in entries]
    if missing:
        raise FormatError(
            f"{path}: ids must cover 0..{n - 1} exactly; missing {missing[:5]}"
        )
    return [entries[i] for i in range(n)]


def load_labels(path, tokens_path=None) -> LabelVocab:
    """Read label texts, one per line (class index = 0-based line number).

    `tokens_path` may point to a JSON Lines file {"label": str, "tokens":
    [str, ...]} overriding the default whitespace tokenization for the
    listed labels.
    """
    with open(path, encoding="utf-8") as fh:
        texts = [line.rstrip("\n") for line in fh]
    while texts and texts[-1] == "":
        texts.pop()
    if not texts:
        raise FormatError(f"{path}: no labels found")
    if any(not t.strip() for t in texts):
        raise FormatError(f"{path}: blank label line")
    tokenizations = None
    if tokens_path is not None:
        tokenizations = {}
        with open(tokens_path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise FormatError(f"{tokens_path}:{lineno}: invalid JSON") from exc
                if (
                    not isinstance(obj, dict)
                    or not isinstance(obj.get("label"), str)
                    or not isinstance(obj.get("tokens"), list)
                    or not obj["tokens"]
                    or not all(isinstance(t, str) and t for t in obj["tokens"])
                ):
                    raise FormatError(
                        f"{tokens_path}:{lineno}: expected {{'label': str, 'tokens': [str, ...]}}"
                    )
                if obj["label"] not in texts:
                    raise FormatError(
                        f"{tokens_path}:{lineno}: unknown label {obj['label']!r}"
                    )
                tokenizations[obj["label"]] = tuple(obj["tokens"])
    return LabelVocab.from_texts(texts, tokenizations)


def load_predictions(path) -> np.ndarray:
    """Read one integer class index per line (also used for ground truth)."""
    values = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.strip()
            if not body:
                continue
            try:
                values.append(int(body))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: expected an integer") from exc
    if not values:
        raise FormatError(f"{path}: no class indices found")
    return np.array(values, dtype=np.int64)


def save_predictions(pred, path) -> None:
    """Write one integer class index per line; line i = node i."""
    pred = np.asarray(pred)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(str(int(p)) for p in pred) + "\n")
