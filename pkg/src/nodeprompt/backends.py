"""Sources of masked-token probabilities.

Three interchangeable backends drive score-matrix assembly: a deterministic
counting mock (tests and synthetic data), precomputed score files that
bypass the token level entirely, and an HTTP client for a remote scoring
service.
"""

from __future__ import annotations

import math
import time
import uuid
from collections import Counter
from dataclasses import dataclass

import numpy as np
import requests

from .errors import FormatError, MalformedResponseError, TransportError

__all__ = [
    "TokenProbQuery",
    "MockVocabModel",
    "mock_token_prob",
    "PriorScoreFile",
    "load_prior_scores",
    "save_prior_scores",
    "MockBackend",
    "PriorScoreBackend",
    "HttpScoringBackend",
    "http_score_tokens",
]


@dataclass(frozen=True)
class TokenProbQuery:
    """One lookup of token probabilities at a 1-based mask slot."""

    prompt: str
    position: int
    tokens: tuple[str, ...]

    def __post_init__(self):
        if self.position < 1:
            raise ValueError("position is 1-based and must be >= 1")
        if not self.tokens:
            raise ValueError("tokens must be nonempty")


@dataclass(frozen=True)
class MockVocabModel:
    """Counting stand-in for a masked LM.

    A token's probability is its add-one-smoothed frequency among the
    whitespace tokens of the prompt, independent of the slot position:
    p = (1 + count) / (vocab_size_smoothing + total_tokens).
    """

    vocab_size_smoothing: int = 1000
    case_fold: bool = True

    def __post_init__(self):
        if self.vocab_size_smoothing < 1:
            raise ValueError("vocab_size_smoothing must be >= 1")


def mock_token_prob(model: MockVocabModel, query: TokenProbQuery) -> np.ndarray:
    """Deterministic mock probabilities for each queried token."""
    words = query.prompt.split()
    if model.case_fold:
        words = [w.casefold() for w in words]
    counts = Counter(words)
    denom = model.vocab_size_smoothing + len(words)
    probs = [
        (1 + counts[t.casefold() if model.case_fold else t]) / denom
        for t in query.tokens
    ]
    return np.array(probs, dtype=np.float64)


@dataclass(frozen=True)
class PriorScoreFile:
    """Raw per-node, per-label log scores loaded from disk."""

    num_nodes: int
    num_labels: int
    scores: np.ndarray


def load_prior_scores(path) -> PriorScoreFile:
    """Read the score-file format.

    Layout: optional '#' comment lines, then a "num_nodes<TAB>num_labels"
    header, then one line of space-separated decimal doubles per node.
    """
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    idx = 0
    while idx < len(lines) and lines[idx].startswith("#"):
        idx += 1
    if idx == len(lines):
        raise FormatError(f"{path}: missing header line")
    header = lines[idx].split("\t")
    if len(header) != 2:
        raise FormatError(f"{path}:{idx + 1}: header must be 'num_nodes<TAB>num_labels'")
    try:
        num_nodes, num_labels = int(header[0]), int(header[1])
    except ValueError as exc:
        raise FormatError(f"{path}:{idx + 1}: non-integer header field") from exc
    if num_nodes < 1 or num_labels < 1:
        raise FormatError(f"{path}:{idx + 1}: dimensions must be positive")
    data_lines = [
        (lineno, line)
        for lineno, line in enumerate(lines[idx + 1 :], start=idx + 2)
        if line.strip()
    ]
    if len(data_lines) != num_nodes:
        raise FormatError(
            f"{path}: header promises {num_nodes} rows, found {len(data_lines)}"
        )
    rows = []
    for lineno, line in data_lines:
        parts = line.split()
        if len(parts) != num_labels:
            raise FormatError(
                f"{path}:{lineno}: expected {num_labels} values, got {len(parts)}"
            )
        try:
            row = [float(p) for p in parts]
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: unparsable value") from exc
        if not all(math.isfinite(v) for v in row):
            raise FormatError(f"{path}:{lineno}: non-finite value")
        rows.append(row)
    return PriorScoreFile(num_nodes, num_labels, np.array(rows, dtype=np.float64))


def save_prior_scores(scores, path) -> None:
    """Write a score matrix in the loadable format.

    Values are emitted as the shortest decimal that round-trips the double,
    so a load after save reproduces every entry bit for bit.
    """
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("scores must be a 2-D matrix")
    if not np.isfinite(arr).all():
        raise ValueError("scores must be finite")
    lines = [f"{arr.shape[0]}\t{arr.shape[1]}"]
    for row in arr:
        lines.append(" ".join(repr(float(v)) for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


class MockBackend:
    """Assembly backend built on :func:`mock_token_prob`."""

    max_inflight = 1

    def __init__(self, model: MockVocabModel | None = None):
        self.model = model if model is not None else MockVocabModel()

    def score_labels(self, prompt, label_tokens, num_masks=None):
        """Per-label token log-probabilities; `num_masks` is ignored."""
        out = []
        for tokens in label_tokens:
            probs = mock_token_prob(self.model, TokenProbQuery(prompt, 1, tuple(tokens)))
            out.append([float(v) for v in np.log(probs)])
        return out


class PriorScoreBackend:
    """Bypass backend: assembly returns the stored matrix verbatim."""

    max_inflight = 1

    def __init__(self, prior: PriorScoreFile):
        self.prior = prior

    @classmethod
    def from_file(cls, path) -> "PriorScoreBackend":
        return cls(load_prior_scores(path))


def http_score_tokens(
    endpoint: str,
    prompt: str,
    labels,
    *,
    num_masks: int | None = None,
    timeout: float = 10.0,
    max_attempts: int = 3,
    backoff: float = 0.25,
    request_id: str | None = None,
    session=None,
):
    """POST one prompt with all candidate labels to <endpoint>/score.

    Transport failures (connection errors, non-200 statuses) are retried
    with exponential backoff up to `max_attempts`; protocol violations in a
    200 response are not retried. Returns one list of token log-probs per
    label, validated against the wire contract (lengths match, values <= 0).
    """
    label_tokens = [list(t) for t in labels]
    if not label_tokens or any(not t for t in label_tokens):
        raise ValueError("labels must be nonempty token sequences")
    if num_masks is None:
        num_masks = max(len(t) for t in label_tokens)
    body = {
        "id": request_id if request_id is not None else uuid.uuid4().hex,
        "prompt": prompt,
        "num_masks": int(num_masks),
        "labels": [{"tokens": t} for t in label_tokens],
    }
    url = endpoint.rstrip("/") + "/score"
    post = (session if session is not None else requests).post
    last = "no attempt made"
    for attempt in range(max_attempts):
        if attempt:
            time.sleep(backoff * 2 ** (attempt - 1))
        try:
            resp = post(url, json=body, timeout=timeout)
        except requests.RequestException as exc:
            last = str(exc)
            continue
        if resp.status_code != 200:
            last = f"HTTP {resp.status_code}"
            continue
        return _parse_score_response(resp, body)
    raise TransportError(
        f"scoring service at {endpoint} unreachable after {max_attempts} attempts ({last})"
    )


def _parse_score_response(resp, body):
    try:
        payload = resp.json()
    except ValueError as exc:
        raise MalformedResponseError("response is not valid JSON") from exc
    if not isinstance(payload, dict) or payload.get("id") != body["id"]:
        raise MalformedResponseError("response id does not match request id")
    per_label = payload.get("token_log_probs")
    if not isinstance(per_label, list) or len(per_label) != len(body["labels"]):
        raise MalformedResponseError("token_log_probs must list one entry per label")
    out = []
    for entry, row in zip(body["labels"], per_label):
        expected = len(entry["tokens"])
        if not isinstance(row, list) or len(row) != expected:
            raise MalformedResponseError(
                f"expected {expected} log-probs for label tokens {entry['tokens']}"
            )
        vals = []
        for v in row:
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(float(v)):
                raise MalformedResponseError("log-probs must be finite numbers")
            if v > 0:
                raise MalformedResponseError(f"positive log-probability {v!r} in response")
            vals.append(float(v))
        out.append(vals)
    return out


class HttpScoringBackend:
    """Client for a remote scoring service; safe for concurrent use.

    Requests are independent (matched by id), so up to `max_inflight`
    may be in flight at once during score-matrix assembly.
    """

    def __init__(
        self,
        endpoint: str,
        max_inflight: int = 4,
        timeout: float = 10.0,
        max_attempts: int = 3,
        backoff: float = 0.25,
    ):
        self.endpoint = endpoint
        self.max_inflight = max(1, int(max_inflight))
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._session = requests.Session()

    def score_labels(self, prompt, label_tokens, num_masks=None, request_id=None):
        return http_score_tokens(
            self.endpoint,
            prompt,
            label_tokens,
            num_masks=num_masks,
            timeout=self.timeout,
            max_attempts=self.max_attempts,
            backoff=self.backoff,
            request_id=request_id,
            session=self._session,
        )
