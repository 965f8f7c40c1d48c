"""Synthetic text-attributed graphs for desk-scale experiments.

Planted-partition topology plus keyword texts: each node's text repeats its
class's keyword phrase and mixes in noise tokens drawn from a shared pool.
The shared pool deliberately contains every class's keywords (plus neutral
fillers), so noisy texts overlap across classes and leave headroom for the
graph to help; with noise_words=0 the texts are perfectly separable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import Graph
from .prior import LabelVocab

__all__ = ["SynthParams", "SyntheticDataset", "generate_synthetic", "write_dataset"]

_KEYWORDS = (
    "amber", "anchor", "aspen", "badger", "basalt", "beacon", "birch", "bison",
    "breeze", "canyon", "cedar", "cinder", "clover", "cobalt", "comet", "coral",
    "crane", "dahlia", "delta", "drift", "dune", "ember", "falcon", "fern",
    "flint", "fjord", "gale", "garnet", "ginger", "glacier", "granite", "harbor",
    "hazel", "heron", "indigo", "iris", "jasper", "juniper", "kestrel", "lagoon",
    "lantern", "lichen", "linden", "lotus", "magma", "maple", "marble", "meadow",
    "mesa", "moss", "nectar", "nimbus", "ocean", "onyx", "opal", "orchid",
    "osprey", "otter", "pebble", "pine", "plume", "prairie", "quartz", "raven",
    "reef", "ridge", "saffron", "sage", "sequoia", "shale", "sierra", "sparrow",
    "spruce", "summit", "sycamore", "talon", "terrace", "thicket", "thistle",
    "timber", "topaz", "tundra", "umber", "vale", "violet", "walnut", "willow",
    "wren", "zephyr",
)

# Kept short so the shared noise pool stays keyword-heavy: cross-class
# keyword hits are what make noisy texts genuinely confusable.
_FILLERS = ("about", "above", "after", "again")


@dataclass(frozen=True)
class SynthParams:
    classes: int = 4
    per_class: int = 50
    p_in: float = 0.3
    p_out: float = 0.02
    keywords_per_class: int = 3
    noise_words: int = 12

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("at least two classes are required")
        if self.per_class < 1:
            raise ValueError("per_class must be positive")
        for name, p in (("p_in", self.p_in), ("p_out", self.p_out)):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} is not a probability")
        if self.keywords_per_class < 1:
            raise ValueError("keywords_per_class must be positive")
        if self.noise_words < 0:
            raise ValueError("noise_words must be nonnegative")
        if self.classes * self.keywords_per_class > len(_KEYWORDS):
            raise ValueError(
                f"classes*keywords_per_class exceeds the keyword pool "
                f"({len(_KEYWORDS)} words)"
            )


@dataclass(frozen=True)
class SyntheticDataset:
    graph: Graph
    texts: list[str]
    labels: LabelVocab
    y: np.ndarray
    params: SynthParams

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes


def generate_synthetic(params: SynthParams, seed: int) -> SyntheticDataset:
    """Deterministically generate a planted-partition text graph.

    Label texts are per-class keyword phrases of 1..3 tokens (lengths cycle
    so some classes always get shorter phrases than others, which is what
    makes raw scores length-biased). Node texts repeat all of the class's
    keywords r times (r uniform in 1..3) interleaved with noise tokens, and
    undirected edges are kept as two directed entries.
    """
    rng = np.random.default_rng(seed)
    c, m = params.classes, params.per_class
    n = c * m

    perm = rng.permutation(len(_KEYWORDS))
    kpc = params.keywords_per_class
    class_keywords = [
        tuple(_KEYWORDS[j] for j in perm[i * kpc : (i + 1) * kpc]) for i in range(c)
    ]
    max_len = min(3, kpc)
    base_lengths = np.array([(i % max_len) + 1 for i in range(c)])
    lengths = base_lengths[rng.permutation(c)]
    label_texts = [
        " ".join(class_keywords[i][: lengths[i]]) for i in range(c)
    ]
    labels = LabelVocab.from_texts(label_texts)

    y = np.repeat(np.arange(c, dtype=np.int64), m)
    u = rng.random((n, n))
    prob = np.where(y[:, None] == y[None, :], params.p_in, params.p_out)
    upper = np.triu(u < prob, k=1)
    src_u, dst_u = np.nonzero(upper)
    graph = Graph.from_edges(
        n, np.concatenate([src_u, dst_u]), np.concatenate([dst_u, src_u])
    )

    noise_pool = tuple(w for kws in class_keywords for w in kws) + _FILLERS
    texts = []
    for v in range(n):
        repeats = int(rng.integers(1, 4))
        tokens = list(class_keywords[y[v]]) * repeats
        if params.noise_words:
            picks = rng.integers(0, len(noise_pool), size=params.noise_words)
            tokens.extend(noise_pool[j] for j in picks)
        order = rng.permutation(len(tokens))
        texts.append(" ".join(tokens[j] for j in order))
    return SyntheticDataset(graph, texts, labels, y, params)


def write_dataset(dataset: SyntheticDataset, out_dir) -> dict[str, Path]:
    """Write the four dataset files (edges, texts, labels, ground truth).

    Output is byte-identical for a given dataset, so regenerating with the
    same seed reproduces the files exactly.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "edges": out / "edges.txt",
        "texts": out / "texts.jsonl",
        "labels": out / "labels.txt",
        "gt": out / "gt.txt",
    }
    src, dst = dataset.graph.edges()
    with open(paths["edges"], "w", encoding="utf-8") as fh:
        for s, d in zip(src.tolist(), dst.tolist()):
            fh.write(f"{s} {d}\n")
    with open(paths["texts"], "w", encoding="utf-8") as fh:
        for v, text in enumerate(dataset.texts):
            fh.write(json.dumps({"id": v, "text": text}) + "\n")
    with open(paths["labels"], "w", encoding="utf-8") as fh:
        fh.write("\n".join(dataset.labels.texts) + "\n")
    with open(paths["gt"], "w", encoding="utf-8") as fh:
        fh.write("\n".join(str(int(v)) for v in dataset.y) + "\n")
    return paths
