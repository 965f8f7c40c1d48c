"""Few-shot calibration of prior logits.

A small batch-normalized MLP learns a correction on top of the prior
logits, which enter both as the network input and as a constant identity
term on the output, so a zero final layer reproduces the prior exactly.
Training is full-batch Adam against cross-entropy on the labeled nodes
plus a weighted entropy term over all nodes. Trained parameters are then
shrunk toward zero (pulling the model back toward the prior), columns are
variance-scaled, and an ensemble of such models is averaged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import NamedTuple

import numpy as np

from .errors import ConfigError

__all__ = [
    "CalibratorParams",
    "TrainConfig",
    "FewShotSplit",
    "init_params",
    "forward",
    "softmax_rows",
    "LossResult",
    "loss",
    "backward",
    "train_calibrator",
    "shrink",
    "scale_columns",
    "ensemble_calibrate",
    "parse_train_config",
    "train_config_from_mapping",
]

ENTROPY_SIGNS = ("verbatim", "minimize")

# Floor applied inside logs so saturated probabilities never produce -inf.
PROB_FLOOR = 1e-12


@dataclass
class CalibratorParams:
    """Per-layer weights and biases, plus batch-norm affine parameters for
    every layer except the last."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    gammas: list[np.ndarray]
    betas: list[np.ndarray]

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def arrays(self) -> list[np.ndarray]:
        """All parameter arrays in the fixed flattening order shared by the
        optimizer and the gradient checks."""
        return [*self.weights, *self.biases, *self.gammas, *self.betas]

    def copy(self) -> "CalibratorParams":
        return CalibratorParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            [g.copy() for g in self.gammas],
            [b.copy() for b in self.betas],
        )


@dataclass(frozen=True)
class TrainConfig:
    """Calibrator hyperparameters.

    `alpha` is the shrinkage coefficient applied to all trained parameters;
    `entropy_sign` selects between the as-printed entropy term ("verbatim",
    which rewards high-entropy rows when minimized) and its negation
    ("minimize", which sharpens predictions). `identity=False` removes the
    constant prior term from the calibrator output (ablation).
    """

    layers: int = 3
    hidden: int = 16
    entropy_coef: float = 0.3
    alpha: float = 0.9
    n_ensemble: int = 5
    lr: float = 1e-2
    epochs: int = 50
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    entropy_sign: str = "verbatim"
    bn_eps: float = 1e-5
    identity: bool = True

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.entropy_coef < 0:
            raise ConfigError("entropy_coef must be nonnegative")
        if self.n_ensemble < 1:
            raise ConfigError("n_ensemble must be at least 1")
        if self.layers < 1:
            raise ConfigError("layers must be at least 1")
        if self.hidden < 1:
            raise ConfigError("hidden must be at least 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")
        if self.lr < 0:
            raise ConfigError("lr must be nonnegative")
        if self.entropy_sign not in ENTROPY_SIGNS:
            raise ConfigError(f"entropy_sign must be one of {ENTROPY_SIGNS}")
        if self.bn_eps <= 0:
            raise ConfigError("bn_eps must be positive")


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


_FIELD_PARSERS = {"int": int, "float": float, "bool": _parse_bool, "str": str}


def train_config_from_mapping(mapping, base: TrainConfig | None = None) -> TrainConfig:
    """Apply string key=value overrides onto a base config.

    Unknown keys and unparsable values raise :class:`ConfigError`.
    """
    base = base if base is not None else TrainConfig()
    known = {f.name: f.type for f in fields(TrainConfig)}
    overrides = {}
    for key, raw in dict(mapping).items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        parser = _FIELD_PARSERS[known[key]]
        try:
            overrides[key] = parser(raw) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
    return replace(base, **overrides)


def parse_train_config(path, base: TrainConfig | None = None) -> TrainConfig:
    """Read a key=value config file ('#' lines are comments)."""
    mapping = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.strip()
            if not body or body.startswith("#"):
                continue
            if "=" not in body:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, _, value = body.partition("=")
            mapping[key.strip()] = value.strip()
    return train_config_from_mapping(mapping, base)


@dataclass(frozen=True)
class FewShotSplit:
    """K labeled node ids per class; every remaining node is a test node."""

    train_ids: tuple[np.ndarray, ...]
    test_ids: np.ndarray

    @property
    def shots(self) -> int:
        return len(self.train_ids[0]) if self.train_ids else 0

    @property
    def all_train_ids(self) -> np.ndarray:
        if not self.train_ids:
            return np.empty(0, dtype=np.int64)
        return np.concatenate([np.asarray(b, dtype=np.int64) for b in self.train_ids])

    def validate(self, y, num_nodes: int) -> None:
        y = np.asarray(y)
        k = self.shots
        if any(len(b) != k for b in self.train_ids):
            raise ValueError("every class bucket must hold the same K ids")
        train = self.all_train_ids
        if np.intersect1d(train, self.test_ids).size:
            raise ValueError("train and test ids overlap")
        combined = np.concatenate([train, np.asarray(self.test_ids, dtype=np.int64)])
        if combined.size != num_nodes or np.unique(combined).size != num_nodes:
            raise ValueError("split must partition all nodes exactly")
        for c, bucket in enumerate(self.train_ids):
            bucket = np.asarray(bucket, dtype=np.int64)
            if bucket.size and not np.all(y[bucket] == c):
                raise ValueError(
                    f"train bucket {c} contains a node of a different class"
                )


def init_params(num_labels: int, hidden: int, layers: int, seed: int) -> CalibratorParams:
    """Seeded initialization.

    Hidden-layer weights are uniform in +-sqrt(6/in_dim) with zero biases
    and identity batch-norm affines; the final layer is zero-initialized so
    the untrained calibrator (with the identity connection) reproduces its
    input exactly.
    """
    if num_labels < 1 or hidden < 1 or layers < 1:
        raise ValueError("dimensions must be positive")
    rng = np.random.default_rng(seed)
    sizes = [num_labels] + [hidden] * (layers - 1) + [num_labels]
    weights, biases = [], []
    for q in range(layers):
        din, dout = sizes[q], sizes[q + 1]
        if q == layers - 1:
            w = np.zeros((din, dout))
        else:
            lim = math.sqrt(6.0 / din)
            w = rng.uniform(-lim, lim, size=(din, dout))
        weights.append(w)
        biases.append(np.zeros(dout))
    gammas = [np.ones(sizes[q + 1]) for q in range(layers - 1)]
    betas = [np.zeros(sizes[q + 1]) for q in range(layers - 1)]
    return CalibratorParams(weights, biases, gammas, betas)


class _ForwardCache(NamedTuple):
    hidden: list  # per hidden layer: (input, normalized, inv_std, pre_relu)
    last_input: np.ndarray


def _check_finite(arr, layer: int) -> None:
    if not np.isfinite(arr).all():
        raise FloatingPointError(f"non-finite activations in calibrator layer {layer}")


def forward(params: CalibratorParams, scores, bn_eps: float = 1e-5, identity: bool = True):
    """Run the calibrator; returns (logits, cache for backprop).

    Hidden layers compute linear -> batch-norm -> ReLU, with batch-norm
    statistics taken over all rows of the current input (training is
    full-batch and transductive, so "batch" always means every node; no
    running averages are kept). The final layer is linear only. With
    `identity`, the input scores are added to the output as a constant:
    no gradient flows through that term.
    """
    z0 = np.asarray(scores, dtype=np.float64)
    if z0.ndim != 2:
        raise ValueError("scores must be a 2-D matrix")
    if z0.shape[1] != params.weights[0].shape[0]:
        raise ValueError(
            f"scores have {z0.shape[1]} columns, calibrator expects "
            f"{params.weights[0].shape[0]}"
        )
    total = params.num_layers
    hidden = []
    x = z0
    for q in range(total - 1):
        u = x @ params.weights[q] + params.biases[q]
        _check_finite(u, q + 1)
        mu = u.mean(axis=0)
        var = u.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + bn_eps)
        normalized = (u - mu) * inv_std
        pre_relu = params.gammas[q] * normalized + params.betas[q]
        hidden.append((x, normalized, inv_std, pre_relu))
        x = np.maximum(pre_relu, 0.0)
    out = x @ params.weights[-1] + params.biases[-1]
    _check_finite(out, total)
    logits = out + z0 if identity else out
    return logits, _ForwardCache(hidden, x)


def softmax_rows(logits) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    expv = np.exp(shifted)
    return expv / expv.sum(axis=1, keepdims=True)


class LossResult(NamedTuple):
    value: float
    grad: np.ndarray
    cross_entropy: float
    entropy_term: float


def loss(logits, train_ids, train_classes, entropy_coef: float, entropy_sign: str = "verbatim") -> LossResult:
    """Training objective and its analytic gradient w.r.t. the logits.

    Cross-entropy is averaged over the labeled rows only; the entropy term
    averages sum_j p*log(p) over *all* rows ("verbatim") or its negation
    ("minimize") and is scaled by `entropy_coef`.
    """
    if entropy_sign not in ENTROPY_SIGNS:
        raise ValueError(f"entropy_sign must be one of {ENTROPY_SIGNS}")
    logits = np.asarray(logits, dtype=np.float64)
    ids = np.asarray(train_ids, dtype=np.int64)
    classes = np.asarray(train_classes, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("at least one labeled row is required")
    if ids.size != classes.size:
        raise ValueError("train_ids and train_classes must align")
    if np.unique(ids).size != ids.size:
        raise ValueError("train_ids must be unique")
    n, c = logits.shape
    if ids.min() < 0 or ids.max() >= n:
        raise ValueError("train id out of range")
    if classes.min() < 0 or classes.max() >= c:
        raise ValueError("train class out of range")

    probs = softmax_rows(logits)
    logp = np.log(np.maximum(probs, PROB_FLOOR))
    cross_entropy = float(-logp[ids, classes].mean())
    plogp = probs * logp
    negentropy = float(plogp.sum(axis=1).mean())
    sign = 1.0 if entropy_sign == "verbatim" else -1.0
    entropy_term = sign * negentropy
    value = cross_entropy + entropy_coef * entropy_term

    grad = np.zeros_like(logits)
    grad[ids] = probs[ids]
    grad[ids, classes] -= 1.0
    grad /= ids.size
    row_neg = plogp.sum(axis=1, keepdims=True)
    grad += (entropy_coef * sign / n) * probs * (logp - row_neg)
    return LossResult(value, grad, cross_entropy, entropy_term)


def backward(params: CalibratorParams, cache: _ForwardCache, grad_logits) -> CalibratorParams:
    """Backpropagate a logits gradient through the cached forward pass.

    Returns gradients with the same structure as `params`. The identity
    connection is constant, so `grad_logits` is already the gradient at the
    final linear output.
    """
    g = np.asarray(grad_logits, dtype=np.float64)
    grads = CalibratorParams(
        [np.zeros_like(w) for w in params.weights],
        [np.zeros_like(b) for b in params.biases],
        [np.zeros_like(a) for a in params.gammas],
        [np.zeros_like(a) for a in params.betas],
    )
    grads.weights[-1][...] = cache.last_input.T @ g
    grads.biases[-1][...] = g.sum(axis=0)
    g = g @ params.weights[-1].T
    for q in range(params.num_layers - 2, -1, -1):
        x_in, normalized, inv_std, pre_relu = cache.hidden[q]
        g = g * (pre_relu > 0)
        grads.gammas[q][...] = (g * normalized).sum(axis=0)
        grads.betas[q][...] = g.sum(axis=0)
        gh = g * params.gammas[q]
        n_rows = gh.shape[0]
        # Batch-norm backward with batch statistics (mean and variance both
        # depend on every row of the layer input).
        du = (inv_std / n_rows) * (
            n_rows * gh
            - gh.sum(axis=0)
            - normalized * (gh * normalized).sum(axis=0)
        )
        grads.weights[q][...] = x_in.T @ du
        grads.biases[q][...] = du.sum(axis=0)
        g = du @ params.weights[q].T
    return grads


def train_calibrator(scores, split: FewShotSplit, y, cfg: TrainConfig) -> CalibratorParams:
    """Full-batch Adam for a fixed number of epochs; no early stopping and
    no validation set. Deterministic given `cfg.seed`."""
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    split.validate(y, scores.shape[0])
    params = init_params(scores.shape[1], cfg.hidden, cfg.layers, cfg.seed)
    train_ids = split.all_train_ids
    train_classes = y[train_ids]
    leaves = params.arrays()
    m = [np.zeros_like(a) for a in leaves]
    v = [np.zeros_like(a) for a in leaves]
    for epoch in range(cfg.epochs):
        logits, cache = forward(params, scores, cfg.bn_eps, identity=cfg.identity)
        res = loss(logits, train_ids, train_classes, cfg.entropy_coef, cfg.entropy_sign)
        if not math.isfinite(res.value):
            raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
        grads = backward(params, cache, res.grad)
        t = epoch + 1
        bc1 = 1.0 - cfg.adam_beta1 ** t
        bc2 = 1.0 - cfg.adam_beta2 ** t
        for j, (leaf, grad) in enumerate(zip(leaves, grads.arrays())):
            m[j] = cfg.adam_beta1 * m[j] + (1.0 - cfg.adam_beta1) * grad
            v[j] = cfg.adam_beta2 * v[j] + (1.0 - cfg.adam_beta2) * grad * grad
            leaf -= cfg.lr * (m[j] / bc1) / (np.sqrt(v[j] / bc2) + cfg.adam_eps)
    return params


def shrink(params: CalibratorParams, alpha: float) -> CalibratorParams:
    """Multiply every parameter (weights, biases, and batch-norm affines) by
    `alpha`; batch statistics are not parameters and are recomputed at the
    next forward pass."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    return CalibratorParams(
        [alpha * w for w in params.weights],
        [alpha * b for b in params.biases],
        [alpha * gmm for gmm in params.gammas],
        [alpha * bt for bt in params.betas],
    )


def scale_columns(s) -> np.ndarray:
    """Divide each column by (1e-8 + its population standard deviation).

    No mean subtraction happens here; a constant column is divided by the
    bare 1e-8 guard.
    """
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2:
        raise ValueError("scores must be a 2-D matrix")
    return s / (1e-8 + s.std(axis=0))


def ensemble_calibrate(scores, split: FewShotSplit, y, cfg: TrainConfig, member_seeds=None):
    """Train, shrink, scale, and average `cfg.n_ensemble` calibrators.

    Member i trains with seed `cfg.seed + i` (i = 1..n_ensemble) unless
    `member_seeds` overrides the derivation. Returns the averaged logits
    for all nodes and the argmax predictions restricted to the test ids.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if member_seeds is None:
        member_seeds = [cfg.seed + i for i in range(1, cfg.n_ensemble + 1)]
    members = []
    for seed in member_seeds:
        trained = train_calibrator(scores, split, y, replace(cfg, seed=seed))
        shrunk = shrink(trained, cfg.alpha)
        out, _ = forward(shrunk, scores, cfg.bn_eps, identity=cfg.identity)
        members.append(scale_columns(out))
    calibrated = np.mean(members, axis=0)
    predictions = np.argmax(calibrated, axis=1).astype(np.int64)
    return calibrated, predictions[np.asarray(split.test_ids, dtype=np.int64)]
