"""Classifier backends: a deterministic offline mock and an HTTP chat client."""

from __future__ import annotations

import base64
import logging
import mimetypes
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import httpx

from ..errors import AuthMissing, MalformedResponse, RateLimited, TransportError, UnknownLabel
from .parse import OK, parse_label
from .prompts import build_prompt

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClassificationRequest:
    candidate_labels: tuple[str, ...]
    appearance_tag: str | None = None
    image_ref: str | None = None
    tactile_description: str | None = None
    # labels behind ``tactile_description``, in rank order
    reference_labels: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "candidate_labels", tuple(self.candidate_labels))
        object.__setattr__(self, "reference_labels", tuple(self.reference_labels))
        if not self.candidate_labels:
            raise ValueError("candidate_labels must be nonempty")
        if len(set(self.candidate_labels)) != len(self.candidate_labels):
            raise ValueError("candidate labels must be unique")
        if not (self.appearance_tag or self.image_ref):
            raise ValueError("need an image_ref or an appearance_tag")

    @property
    def vision_only(self) -> bool:
        return not self.tactile_description


@dataclass(frozen=True)
class VlmOutcome:
    chosen_label: str | None
    raw_text: str
    parse_status: str
    latency_s: float = 0.0

    def __post_init__(self):
        if self.parse_status == OK and self.chosen_label is None:
            raise ValueError("ok outcome needs a label")


# ---------------------------------------------------------------- mock


@dataclass(frozen=True)
class LabelKnowledge:
    appearance_tag: str
    hardness: str  # soft | medium | hard


@dataclass(frozen=True)
class MockKnowledge:
    """What the stand-in VLM "knows": each label's look and hardness category."""

    labels: Mapping[str, LabelKnowledge]
    w_visual: float = 1.0
    w_tactile: float = 1.0

    @classmethod
    def from_catalogs(cls, *catalogs: Iterable, w_visual: float = 1.0, w_tactile: float = 1.0) -> "MockKnowledge":
        labels = {}
        for cat in catalogs:
            for obj in cat:
                labels[obj.label] = LabelKnowledge(obj.appearance_tag, obj.hardness)
        return cls(labels, w_visual, w_tactile)

    def get(self, label: str) -> LabelKnowledge:
        try:
            return self.labels[label]
        except KeyError:
            raise UnknownLabel(f"mock knowledge has no entry for {label!r}") from None


def mock_scores(req: ClassificationRequest, knowledge: MockKnowledge) -> list[float]:
    refs = [knowledge.get(r).hardness for r in req.reference_labels] if not req.vision_only else []
    scores = []
    for c in req.candidate_labels:
        k = knowledge.get(c)
        s = knowledge.w_visual * float(k.appearance_tag == req.appearance_tag)
        if refs:
            s += knowledge.w_tactile * sum(h == k.hardness for h in refs) / len(refs)
        scores.append(s)
    return scores


def mock_classify(req: ClassificationRequest, knowledge: MockKnowledge) -> VlmOutcome:
    """Deterministic argmax of visual match plus tactile hardness agreement.

    Ties go to the earliest candidate, so visually identical pairs without
    tactile evidence always resolve to whichever twin is listed first.
    """
    scores = mock_scores(req, knowledge)
    best = max(range(len(scores)), key=lambda i: (scores[i], -i))
    label = req.candidate_labels[best]
    return VlmOutcome(label, label, OK)


class MockBackend:
    kind = "mock"

    def __init__(self, knowledge: MockKnowledge):
        self.knowledge = knowledge

    def classify(self, req: ClassificationRequest) -> VlmOutcome:
        return mock_classify(req, self.knowledge)


# ---------------------------------------------------------------- http


@dataclass(frozen=True)
class VlmBackendConfig:
    kind: str = "mock"  # mock | http
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model: str = "gpt-4o"
    temperature: float = 0.0
    api_key_env: str = "OPENAI_API_KEY"
    timeout_s: float = 60.0
    max_retries: int = 3
    backoff_s: float = 1.0
    max_in_flight: int = 4

    def __post_init__(self):
        if self.kind not in ("mock", "http"):
            raise ValueError("backend kind must be mock or http")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")


def encode_image(path: str | Path) -> str:
    """Data URL with the file's media type and base64 payload."""
    media, _ = mimetypes.guess_type(str(path))
    data = base64.b64encode(Path(path).read_bytes()).decode("ascii")
    return f"data:{media or 'application/octet-stream'};base64,{data}"


def chat_payload(prompt: str, cfg: VlmBackendConfig, image_ref: str | None = None) -> dict:
    content: list[dict] = [{"type": "text", "text": prompt}]
    if image_ref:
        content.append({"type": "image_url", "image_url": {"url": encode_image(image_ref)}})
    return {
        "model": cfg.model,
        "temperature": cfg.temperature,
        "messages": [{"role": "user", "content": content}],
    }


def extract_text(body) -> str:
    try:
        content = body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise MalformedResponse(f"no message content in response: {exc!r}") from None
    if isinstance(content, list):
        content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
    if not isinstance(content, str):
        raise MalformedResponse(f"unexpected content type {type(content).__name__}")
    return content


class HttpBackend:
    """Chat-completions style client with exponential-backoff retries."""

    kind = "http"

    def __init__(self, cfg: VlmBackendConfig, client: httpx.Client | None = None, sleep=time.sleep):
        self.cfg = cfg
        self._client = client
        self._sleep = sleep

    def _api_key(self) -> str:
        key = os.environ.get(self.cfg.api_key_env, "").strip()
        if not key:
            raise AuthMissing(f"environment variable {self.cfg.api_key_env} is not set")
        return key

    def complete(self, prompt: str, image_ref: str | None = None) -> str:
        key = self._api_key()
        payload = chat_payload(prompt, self.cfg, image_ref)
        headers = {"Authorization": f"Bearer {key}"}
        client = self._client or httpx.Client(timeout=self.cfg.timeout_s)
        try:
            last = None
            for attempt in range(self.cfg.max_retries + 1):
                if attempt:
                    self._sleep(self.cfg.backoff_s * 2 ** (attempt - 1))
                try:
                    resp = client.post(self.cfg.endpoint, json=payload, headers=headers)
                except httpx.TransportError as exc:
                    last = TransportError(f"{type(exc).__name__}: {exc}")
                    log.warning("attempt %d: %s", attempt + 1, last)
                    continue
                if resp.status_code == 429:
                    last = RateLimited(f"rate limited after {attempt + 1} attempts")
                    continue
                if resp.status_code >= 500:
                    last = TransportError(f"server error {resp.status_code}")
                    log.warning("attempt %d: %s", attempt + 1, last)
                    continue
                if resp.status_code >= 400:
                    raise TransportError(f"request rejected with {resp.status_code}: {resp.text[:200]}")
                try:
                    body = resp.json()
                except ValueError as exc:
                    raise MalformedResponse(f"response is not JSON: {exc}") from None
                return extract_text(body)
            raise last
        finally:
            if self._client is None:
                client.close()

    def classify(self, req: ClassificationRequest) -> VlmOutcome:
        prompt = build_prompt(req)
        t0 = time.perf_counter()
        text = self.complete(prompt, req.image_ref)
        latency = time.perf_counter() - t0
        parsed = parse_label(text, req.candidate_labels)
        return VlmOutcome(parsed.label, text, parsed.status, latency)


def make_backend(cfg: VlmBackendConfig, knowledge: MockKnowledge | None = None):
    if cfg.kind == "mock":
        if knowledge is None:
            raise ValueError("the mock backend needs MockKnowledge")
        return MockBackend(knowledge)
    return HttpBackend(cfg)


def classify_many(backend, requests: Sequence[ClassificationRequest], max_in_flight: int = 1) -> list[VlmOutcome | Exception]:
    """Classify in parallel up to ``max_in_flight``; failures are returned, not raised."""

    def one(req):
        try:
            return backend.classify(req)
        except Exception as exc:  # recorded per sample by the caller
            return exc

    if max_in_flight <= 1 or len(requests) <= 1:
        return [one(r) for r in requests]
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(pool.map(one, requests))
