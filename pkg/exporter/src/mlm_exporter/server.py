"""HTTP scoring service speaking the core pipeline's wire protocol.

POST /score with {"id", "prompt", "num_masks", "labels": [{"tokens":
[...]}, ...]} returns {"id", "token_log_probs"} where entry [k][i] is the
log-probability of label k's token i at mask slot i+1. The prompt must
already contain the model's mask token in its answer slots (clients
configure their mask token to match the serving model).

A single model instance serves all requests; inference is serialized
behind a lock. 400 marks malformed requests, 422 requests the model
cannot process (mask count mismatch, context overflow).
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import torch

from .exporter import LoadedModel, load_model

__all__ = ["ScoringService", "serve_scoring"]


class _RequestError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


class ScoringService:
    """Stateless request scorer around one loaded masked LM."""

    def __init__(self, loaded: LoadedModel, max_length: int = 512):
        self.loaded = loaded
        model_cap = getattr(loaded.model.config, "max_position_embeddings", max_length)
        self.max_length = min(max_length, model_cap)
        self._lock = threading.Lock()

    def handle(self, payload) -> tuple[int, dict]:
        """Returns (http status, response body)."""
        try:
            request_id, prompt, num_masks, label_tokens = self._validate(payload)
            scores = self._score(prompt, num_masks, label_tokens)
        except _RequestError as exc:
            return exc.status, {"error": str(exc)}
        return 200, {"id": request_id, "token_log_probs": scores}

    def _validate(self, payload):
        if not isinstance(payload, dict):
            raise _RequestError(400, "request body must be a JSON object")
        request_id = payload.get("id")
        prompt = payload.get("prompt")
        num_masks = payload.get("num_masks")
        labels = payload.get("labels")
        if not isinstance(request_id, str) or not isinstance(prompt, str):
            raise _RequestError(400, "'id' and 'prompt' must be strings")
        if isinstance(num_masks, bool) or not isinstance(num_masks, int) or num_masks < 1:
            raise _RequestError(400, "'num_masks' must be a positive integer")
        if not isinstance(labels, list) or not labels:
            raise _RequestError(400, "'labels' must be a nonempty list")
        label_tokens = []
        for entry in labels:
            tokens = entry.get("tokens") if isinstance(entry, dict) else None
            if (
                not isinstance(tokens, list)
                or not tokens
                or not all(isinstance(t, str) and t for t in tokens)
            ):
                raise _RequestError(400, "each label needs a nonempty 'tokens' list of strings")
            if len(tokens) > num_masks:
                raise _RequestError(422, f"label {tokens} is longer than num_masks={num_masks}")
            label_tokens.append(tokens)
        if num_masks > self.max_length - 2:
            raise _RequestError(
                422, f"num_masks={num_masks} exceeds the model context ({self.max_length})"
            )
        return request_id, prompt, num_masks, label_tokens

    def _score(self, prompt, num_masks, label_tokens):
        tokenizer = self.loaded.tokenizer
        with self._lock:
            enc = tokenizer(
                prompt, return_tensors="pt", truncation=True, max_length=self.max_length
            )
            enc = {k: v.to(self.loaded.device) for k, v in enc.items()}
            positions = (enc["input_ids"][0] == tokenizer.mask_token_id).nonzero().flatten()
            if positions.numel() != num_masks:
                raise _RequestError(
                    422,
                    f"prompt contains {positions.numel()} mask tokens, expected {num_masks}",
                )
            with torch.no_grad():
                logits = self.loaded.model(**enc).logits
            slot_lp = torch.log_softmax(logits[0, positions], dim=-1)
        out = []
        for tokens in label_tokens:
            ids = tokenizer.convert_tokens_to_ids(tokens)
            out.append([float(slot_lp[i, tid]) for i, tid in enumerate(ids)])
        return out


class _Handler(BaseHTTPRequestHandler):
    def log_message(self, *args):
        pass

    def do_POST(self):
        if self.path != "/score":
            self._reply(404, {"error": "unknown path"})
            return
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length)
        try:
            payload = json.loads(raw)
        except json.JSONDecodeError:
            self._reply(400, {"error": "request body is not valid JSON"})
            return
        status, body = self.server.service.handle(payload)
        self._reply(status, body)

    def _reply(self, status: int, body: dict):
        data = json.dumps(body).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


def serve_scoring(model: str | LoadedModel, port: int = 0, max_length: int = 512, device: str = "cpu") -> ThreadingHTTPServer:
    """Build the HTTP server; the caller decides how to run it.

    Returns a ThreadingHTTPServer whose `.server_address` carries the bound
    port (pass port=0 for an ephemeral one). Call `.serve_forever()` to
    block, or run it from a thread.
    """
    loaded = model if isinstance(model, LoadedModel) else load_model(model, device)
    server = ThreadingHTTPServer(("127.0.0.1", port), _Handler)
    server.service = ScoringService(loaded, max_length=max_length)
    return server
