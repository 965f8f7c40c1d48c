"""Experiment harness: split sampling, metrics, significance, repetition."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .calibrate import FewShotSplit, TrainConfig, ensemble_calibrate
from .prior import refine_scores, zero_shot_predict

__all__ = [
    "MetricReport",
    "PipelineConfig",
    "ExperimentResult",
    "sample_few_shot_split",
    "accuracy",
    "per_class_f1",
    "weighted_f1",
    "mann_whitney_u",
    "make_report",
    "run_experiment",
]


@dataclass(frozen=True)
class MetricReport:
    acc: float
    weighted_f1: float
    per_class_f1: tuple[float, ...]
    n_test: int
    seed: int

    def as_dict(self) -> dict:
        return {
            "acc": self.acc,
            "weighted_f1": self.weighted_f1,
            "per_class_f1": list(self.per_class_f1),
            "n_test": self.n_test,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class PipelineConfig:
    """Stage switches for the prior pipeline plus calibrator settings."""

    steps: int = 10
    do_propagate: bool = True
    do_normalize: bool = True
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass(frozen=True)
class ExperimentResult:
    acc_mean: float
    acc_std: float
    f1_mean: float
    f1_std: float
    reports: tuple[MetricReport, ...]
    predictions: tuple[np.ndarray, ...]

    def as_dict(self) -> dict:
        return {
            "acc_mean": self.acc_mean,
            "acc_std": self.acc_std,
            "f1_mean": self.f1_mean,
            "f1_std": self.f1_std,
            "per_repeat": [r.as_dict() for r in self.reports],
        }


def sample_few_shot_split(y, k: int, seed: int) -> FewShotSplit:
    """Draw K node ids per class uniformly without replacement.

    Every class must keep at least one test node, so a class with fewer
    than K+1 members is an error. Deterministic per seed.
    """
    y = np.asarray(y, dtype=np.int64)
    if k < 1:
        raise ValueError("k must be at least 1")
    num_classes = int(y.max()) + 1
    rng = np.random.default_rng(seed)
    buckets = []
    for c in range(num_classes):
        members = np.flatnonzero(y == c)
        if members.size < k + 1:
            raise ValueError(
                f"class {c} has {members.size} members; K={k} needs at least {k + 1}"
            )
        chosen = rng.choice(members, size=k, replace=False)
        buckets.append(np.sort(chosen))
    train = np.concatenate(buckets)
    test = np.setdiff1d(np.arange(y.size), train)
    return FewShotSplit(tuple(buckets), test)


def accuracy(pred, gt, ids) -> float:
    """Fraction of ids where pred equals gt."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("ids must be nonempty")
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    return float(np.mean(pred[ids] == gt[ids]))


def per_class_f1(pred, gt, ids, num_classes: int) -> np.ndarray:
    """F1 per class over the given ids; 0 where precision+recall is 0."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("ids must be nonempty")
    p = np.asarray(pred)[ids]
    g = np.asarray(gt)[ids]
    scores = np.zeros(num_classes)
    for c in range(num_classes):
        tp = np.sum((p == c) & (g == c))
        fp = np.sum((p == c) & (g != c))
        fn = np.sum((p != c) & (g == c))
        prec = tp / (tp + fp) if tp + fp > 0 else 0.0
        rec = tp / (tp + fn) if tp + fn > 0 else 0.0
        scores[c] = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
    return scores


def weighted_f1(pred, gt, ids, num_classes: int) -> float:
    """Per-class F1 averaged with weights proportional to true-class support."""
    ids = np.asarray(ids, dtype=np.int64)
    scores = per_class_f1(pred, gt, ids, num_classes)
    support = np.bincount(np.asarray(gt)[ids], minlength=num_classes)
    return float((scores * support).sum() / support.sum())


def _u_statistic(a: np.ndarray, b: np.ndarray) -> float:
    diff = a[:, None] - b[None, :]
    return float((diff > 0).sum() + 0.5 * (diff == 0).sum())


def _exact_p(pooled: np.ndarray, n_a: int, u_obs: float) -> float:
    n = pooled.size
    hits = 0
    for chosen in itertools.combinations(range(n), n_a):
        mask = np.zeros(n, dtype=bool)
        mask[list(chosen)] = True
        if _u_statistic(pooled[mask], pooled[~mask]) >= u_obs:
            hits += 1
    return hits / math.comb(n, n_a)


def _approx_p(a: np.ndarray, b: np.ndarray, u_obs: float) -> float:
    n_a, n_b = a.size, b.size
    n = n_a + n_b
    _, counts = np.unique(np.concatenate([a, b]), return_counts=True)
    tie_term = float(((counts.astype(np.float64) ** 3) - counts).sum())
    var = n_a * n_b / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0:
        raise ValueError(
            "pooled sample has zero variance; the normal approximation is "
            "undefined, use method='exact'"
        )
    z = (u_obs - n_a * n_b / 2.0 - 0.5) / math.sqrt(var)
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def mann_whitney_u(sample_a, sample_b, alternative: str = "a_greater", method: str = "auto"):
    """One-sided rank test that sample_a is stochastically greater.

    U counts pairs where a beats b, with ties at half weight. The p-value
    comes from exact enumeration over all pooled assignments when the
    pooled size is at most 12 (or with method="exact"); otherwise from a
    normal approximation with tie-corrected variance and a 0.5 continuity
    correction. Returns (U_a, p).
    """
    if alternative != "a_greater":
        raise ValueError("only the 'a_greater' alternative is supported")
    a = np.asarray(sample_a, dtype=np.float64).ravel()
    b = np.asarray(sample_b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    u_obs = _u_statistic(a, b)
    if method == "auto":
        method = "exact" if a.size + b.size <= 12 else "approx"
    if method == "exact":
        p = _exact_p(np.concatenate([a, b]), a.size, u_obs)
    elif method == "approx":
        p = _approx_p(a, b, u_obs)
    else:
        raise ValueError(f"unknown method {method!r}")
    return u_obs, p


def make_report(pred, gt, ids, num_classes: int, seed: int) -> MetricReport:
    ids = np.asarray(ids, dtype=np.int64)
    return MetricReport(
        acc=accuracy(pred, gt, ids),
        weighted_f1=weighted_f1(pred, gt, ids, num_classes),
        per_class_f1=tuple(float(v) for v in per_class_f1(pred, gt, ids, num_classes)),
        n_test=int(ids.size),
        seed=seed,
    )


def run_experiment(
    raw_scores,
    adj,
    y,
    config: PipelineConfig | None = None,
    k: int = 0,
    repeats: int = 5,
    base_seed: int = 0,
) -> ExperimentResult:
    """Repeat zero- or few-shot evaluation over fresh splits.

    Repeat r derives its split-sampling and training seed as base_seed + r.
    With k=0 no split is sampled: all nodes are test nodes and the
    (deterministic) zero-shot predictions are scored directly.
    """
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    y = np.asarray(y, dtype=np.int64)
    config = config if config is not None else PipelineConfig()
    scores = refine_scores(
        raw_scores, adj, config.steps, config.do_propagate, config.do_normalize
    )
    num_classes = scores.shape[1]
    reports = []
    predictions = []
    for r in range(repeats):
        seed = base_seed + r
        if k == 0:
            pred = zero_shot_predict(scores)
            ids = np.arange(y.size)
        else:
            split = sample_few_shot_split(y, k, seed)
            calibrated, _ = ensemble_calibrate(
                scores, split, y, replace(config.train, seed=seed)
            )
            pred = zero_shot_predict(calibrated)
            ids = split.test_ids
        reports.append(make_report(pred, y, ids, num_classes, seed))
        predictions.append(pred)
    accs = np.array([r.acc for r in reports])
    f1s = np.array([r.weighted_f1 for r in reports])
    return ExperimentResult(
        acc_mean=float(accs.mean()),
        acc_std=float(accs.std()),
        f1_mean=float(f1s.mean()),
        f1_std=float(f1s.std()),
        reports=tuple(reports),
        predictions=tuple(predictions),
    )
