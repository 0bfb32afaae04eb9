"""VLM-as-judge scoring over a chat-completions HTTP endpoint.

The judge sees the original image (A) and the restored one (B) and must
answer with a single ``Score: N%`` line rating how much of the named
artifact was removed.
"""

from __future__ import annotations

import base64
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import httpx

from .raster import Raster, encode_png, resize_to

log = logging.getLogger(__name__)

DEFAULT_MODEL = "Qwen2.5-VL-72B-Instruct"
DEFAULT_RETRIES = 3
BACKOFF_BASE = 1.0

SCORE_RE = re.compile(r"Score:\s*([+-]?(?:\d+(?:\.\d*)?|\.\d+))\s*%")


class ConfigurationError(RuntimeError):
    pass


class ScoreParseError(ValueError):
    def __init__(self, raw: str):
        super().__init__(f"no 'Score: N%' in response: {raw!r}")
        self.raw = raw


class EvaluationFailed(RuntimeError):
    def __init__(self, message: str, attempts: int, cause: Optional[BaseException] = None):
        super().__init__(message)
        self.attempts = attempts
        self.cause = cause


def build_prompt(artifact_name: str) -> str:
    name = artifact_name.strip()
    if not name:
        raise ValueError("artifact name must be non-empty")
    return (
        "You are a top-tier image quality assessment expert.\n"
        f"You are given two images. Image A is the original image and contains the artifact '{name}'. "
        "Image B is the processed result of Image A.\n"
        f"Evaluate the percentage by which the '{name}' is reduced in Image B compared to Image A, "
        f"where 0% means the {name} is not reduced at all and 100% means it is completely removed.\n"
        "Respond with exactly one line in the format: Score: [number]%\n"
        "Do not output any other text, explanation, or conversational filler."
    )


def parse_score(response: str) -> float:
    """Extract the first ``Score: N%`` value, clamped to [0, 100]."""
    m = SCORE_RE.search(response or "")
    if m is None:
        raise ScoreParseError(response)
    return min(100.0, max(0.0, float(m.group(1))))


def data_url(img: Raster) -> str:
    return "data:image/png;base64," + base64.b64encode(encode_png(img)).decode("ascii")


@dataclass(frozen=True, eq=False)
class JudgeRequest:
    original: Raster
    prediction: Raster
    artifact_name: str
    model_name: str = DEFAULT_MODEL
    endpoint: str = ""
    max_retries: int = DEFAULT_RETRIES
    timeout: float = 120.0
    api_key: Optional[str] = None

    def __post_init__(self):
        if not self.artifact_name.strip():
            raise ValueError("artifact name must be non-empty")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass(frozen=True)
class JudgeScore:
    score_percent: float
    raw_response: str
    attempts: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EndpointConfig:
    api_base: str
    api_key: Optional[str]
    model: str

    @classmethod
    def from_env(cls, environ=os.environ) -> "EndpointConfig":
        base = environ.get("VLM_API_BASE", "").strip()
        if not base:
            raise ConfigurationError("VLM_API_BASE is not set")
        return cls(base, environ.get("VLM_API_KEY") or None, environ.get("VLM_MODEL") or DEFAULT_MODEL)


def build_payload(req: JudgeRequest) -> dict:
    """Chat-completions body with the prompt and both images inline."""
    pred = resize_to(req.prediction, req.original.width, req.original.height)
    return {
        "model": req.model_name,
        "temperature": 0,
        "messages": [
            {
                "role": "user",
                "content": [
                    {"type": "text", "text": build_prompt(req.artifact_name)},
                    {"type": "text", "text": "Image A:"},
                    {"type": "image_url", "image_url": {"url": data_url(req.original)}},
                    {"type": "text", "text": "Image B:"},
                    {"type": "image_url", "image_url": {"url": data_url(pred)}},
                ],
            }
        ],
    }


def _completions_url(endpoint: str) -> str:
    base = endpoint.rstrip("/")
    return base if base.endswith("/chat/completions") else base + "/chat/completions"


def _message_text(body: dict) -> str:
    content = body["choices"][0]["message"]["content"]
    if isinstance(content, list):  # some servers return content parts
        content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
    return str(content)


def judge(req: JudgeRequest, client: Optional[httpx.Client] = None,
          sleep: Callable[[float], None] = time.sleep) -> JudgeScore:
    """Score one pair, retrying transport, server and parse failures with 1s/2s/4s backoff.

    ``max_retries`` counts retries after the first attempt.
    """
    if not req.endpoint:
        raise ConfigurationError("no endpoint configured")
    payload = build_payload(req)
    headers = {"Content-Type": "application/json"}
    if req.api_key:
        headers["Authorization"] = f"Bearer {req.api_key}"
    url = _completions_url(req.endpoint)
    owns_client = client is None
    if owns_client:
        client = httpx.Client(timeout=req.timeout)
    last: Optional[BaseException] = None
    try:
        for attempt in range(1, req.max_retries + 2):
            if attempt > 1:
                sleep(BACKOFF_BASE * 2 ** (attempt - 2))
            try:
                resp = client.post(url, json=payload, headers=headers, timeout=req.timeout)
                if resp.status_code in (401, 403):
                    raise ConfigurationError(f"endpoint rejected credentials (HTTP {resp.status_code})")
                resp.raise_for_status()
                text = _message_text(resp.json())
                return JudgeScore(parse_score(text), text, attempt)
            except ConfigurationError:
                raise
            except (httpx.HTTPError, ScoreParseError, ValueError, KeyError, IndexError, TypeError) as e:
                last = e
                log.warning("judge attempt %d failed: %s", attempt, e)
    finally:
        if owns_client:
            client.close()
    attempts = req.max_retries + 1
    raise EvaluationFailed(f"no valid score after {attempts} attempts: {last}", attempts, last)


def judge_many(requests: list[JudgeRequest], max_in_flight: int = 4,
               sleep: Callable[[float], None] = time.sleep) -> list[JudgeScore | Exception]:
    """Judge requests concurrently; failures are returned in place of scores."""

    def one(req):
        try:
            return judge(req, sleep=sleep)
        except (EvaluationFailed, ConfigurationError) as e:
            return e

    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        return list(pool.map(one, requests))
