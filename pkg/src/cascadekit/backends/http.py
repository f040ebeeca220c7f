"""HTTP backend: chat-completion style inference APIs.

Responses are cached on disk keyed by hash(endpoint, model, prompt), so a
rerun with a warm cache makes zero network calls and is reproducible
offline. Label parsing is case-insensitive first-match with longest-match
tie-break; when the API exposes per-token logprobs over label tokens they
are renormalized into a real distribution, otherwise the answer is one-hot
and the backend counts as opaque-confidence.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from pathlib import Path
from typing import Callable, Sequence

import requests

from ..dataset import LabeledExample, LabelSpace
from ..errors import AuthMissing, BackendUnavailable, HttpStatusError, InvalidConfig, ParseFailure
from .base import BackendDescriptor, PredictionRecord, record_from_probs

AUTH_ENV_VAR = "EA_API_KEY"
CACHE_ENV_VAR = "EA_CACHE_DIR"

BACKOFF_SECONDS = (1.0, 2.0, 4.0)
RETRYABLE_STATUS = {429, 500, 502, 503, 504}


def cache_key(endpoint: str, model: str, prompt: str) -> str:
    payload = json.dumps([endpoint, model, prompt]).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


def render_prompt(template: str, payload: str, labels: Sequence[str]) -> str:
    return template.replace("{input}", payload).replace("{labels}", ", ".join(labels))


def parse_label(content: str, labels: Sequence[str]) -> int:
    """First label occurring in `content`, case-insensitive; ties at the same
    position go to the longest label."""
    lowered = content.lower()
    best: tuple[int, int, int] | None = None  # (position, -len, index)
    for idx, label in enumerate(labels):
        pos = lowered.find(label.lower())
        if pos < 0:
            continue
        key = (pos, -len(label), idx)
        if best is None or key < best:
            best = key
    if best is None:
        raise ParseFailure(f"no label of {list(labels)} found in response", raw=content)
    return best[2]


def probs_from_label_logprobs(logprob_by_label: dict[int, float], k: int) -> list[float]:
    """Renormalize exponentiated logprobs over the matched labels; labels the
    API did not score get zero mass."""
    weights = [math.exp(logprob_by_label[i]) if i in logprob_by_label else 0.0 for i in range(k)]
    total = sum(weights)
    return [w / total for w in weights]


class HttpBackend:
    def __init__(
        self,
        descriptor: BackendDescriptor,
        label_space: LabelSpace,
        cache_dir: str | Path | None = None,
        post: Callable[..., requests.Response] | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.descriptor = descriptor
        cfg = descriptor.config
        for key in ("endpoint", "model", "template"):
            if key not in cfg:
                raise InvalidConfig(f"http backend {descriptor.id!r} needs config key {key!r}")
        template = cfg["template"]
        if "{input}" not in template or "{labels}" not in template:
            raise InvalidConfig("prompt template must contain {input} and {labels}")
        self.endpoint: str = cfg["endpoint"]
        self.model: str = cfg["model"]
        self.template: str = template
        self.max_tokens: int = int(cfg.get("max_tokens", 16))
        self.use_logprobs: bool = bool(cfg.get("use_logprobs", False))
        self.labels = label_space.labels
        self._post = post or requests.post
        self._sleep = sleep
        cache_dir = cache_dir or cfg.get("cache_dir") or os.environ.get(CACHE_ENV_VAR)
        self.cache_dir = Path(cache_dir) if cache_dir else None

    def _cache_path(self, key: str) -> Path | None:
        if self.cache_dir is None:
            return None
        return self.cache_dir / f"{key}.json"

    def _fetch(self, prompt: str) -> str:
        token = os.environ.get(AUTH_ENV_VAR)
        if not token:
            raise AuthMissing(f"set {AUTH_ENV_VAR} to call {self.endpoint}")
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": self.max_tokens,
        }
        if self.use_logprobs:
            body["logprobs"] = True
        headers = {"Authorization": f"Bearer {token}"}

        last_status: int | None = None
        last_exc: Exception | None = None
        for attempt, backoff in enumerate((*BACKOFF_SECONDS, None)):
            try:
                resp = self._post(self.endpoint, json=body, headers=headers, timeout=60)
            except requests.RequestException as exc:
                last_exc, last_status = exc, None
            else:
                if resp.status_code < 400:
                    return resp.text
                last_status, last_exc = resp.status_code, None
                if resp.status_code not in RETRYABLE_STATUS:
                    raise HttpStatusError(resp.status_code, resp.text)
            if backoff is None:
                break
            self._sleep(backoff)
        if last_status is not None:
            raise HttpStatusError(last_status)
        raise BackendUnavailable(f"{self.endpoint}: {last_exc}")

    def _parse(self, raw: str, example_id: str) -> PredictionRecord:
        try:
            obj = json.loads(raw)
            choice = obj["choices"][0]
        except (json.JSONDecodeError, KeyError, IndexError, TypeError):
            raise ParseFailure("response is not a chat completion", raw=raw) from None

        logprob_by_label = self._label_logprobs(choice)
        if logprob_by_label:
            probs = probs_from_label_logprobs(logprob_by_label, len(self.labels))
            return record_from_probs(self.descriptor.id, example_id, probs)

        content = choice.get("message", {}).get("content")
        if not isinstance(content, str):
            raise ParseFailure("response has no message content", raw=raw)
        predicted = parse_label(content, self.labels)
        probs = [0.0] * len(self.labels)
        probs[predicted] = 1.0
        return record_from_probs(self.descriptor.id, example_id, probs)

    def _label_logprobs(self, choice: dict) -> dict[int, float]:
        if not self.use_logprobs:
            return {}
        try:
            top = choice["logprobs"]["content"][0]["top_logprobs"]
        except (KeyError, IndexError, TypeError):
            return {}
        lowered = {label.lower(): i for i, label in enumerate(self.labels)}
        out: dict[int, float] = {}
        for entry in top:
            try:
                token = str(entry.get("token", "")).strip().lower()
                logprob = float(entry["logprob"])
            except (AttributeError, KeyError, TypeError, ValueError):
                return {}  # malformed logprobs: fall back to content parsing
            idx = lowered.get(token)
            if idx is not None and idx not in out:
                out[idx] = logprob
        return out

    def predict(self, example: LabeledExample) -> PredictionRecord:
        prompt = render_prompt(self.template, example.payload, self.labels)
        key = cache_key(self.endpoint, self.model, prompt)
        cache_path = self._cache_path(key)
        if cache_path is not None and cache_path.exists():
            raw = cache_path.read_text(encoding="utf-8")
        else:
            raw = self._fetch(prompt)
            if cache_path is not None:
                cache_path.parent.mkdir(parents=True, exist_ok=True)
                cache_path.write_text(raw, encoding="utf-8")
        return self._parse(raw, example.id)
