"""Generation clients: the HTTP wire contract and the bundled deterministic
mock used for CI and desk-scale runs.

Wire contract: POST JSON ``{prompt, image_b64?, max_tokens, temperature}``
to the endpoint, response JSON ``{text}``. Credentials come from an
environment variable, never from config files.
"""

from __future__ import annotations

import base64
import hashlib
import os
import random
import threading
import time
from typing import Protocol

import requests

from ..dermeval.evalformat import ScoreVector, render_eval


class GenClient(Protocol):
    model_id: str

    def generate(
        self, prompt: str, image: bytes | None = None,
        max_tokens: int = 512, temperature: float = 0.0,
    ) -> str: ...


class ClientError(RuntimeError):
    pass


class HttpClient:
    """Thin JSON-over-HTTP client with a minimum-interval rate limit."""

    def __init__(
        self,
        endpoint: str,
        model_id: str,
        api_key_env: str = "DERMKIT_API_KEY",
        timeout_s: float = 60.0,
        min_interval_s: float = 0.0,
    ):
        self.endpoint = endpoint
        self.model_id = model_id
        self.api_key_env = api_key_env
        self.timeout_s = timeout_s
        self.min_interval_s = min_interval_s
        self._lock = threading.Lock()
        self._last_call = 0.0

    def generate(self, prompt, image=None, max_tokens=512, temperature=0.0) -> str:
        if self.min_interval_s > 0:
            with self._lock:
                wait = self._last_call + self.min_interval_s - time.monotonic()
                if wait > 0:
                    time.sleep(wait)
                self._last_call = time.monotonic()
        payload: dict = {
            "prompt": prompt,
            "max_tokens": max_tokens,
            "temperature": temperature,
        }
        if image is not None:
            payload["image_b64"] = base64.b64encode(image).decode("ascii")
        headers = {}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = requests.post(self.endpoint, json=payload, headers=headers,
                                 timeout=self.timeout_s)
            resp.raise_for_status()
            body = resp.json()
        except requests.RequestException as exc:
            raise ClientError(f"{self.model_id}: request failed: {exc}") from exc
        if "text" not in body:
            raise ClientError(f"{self.model_id}: response missing 'text' field")
        return body["text"]


class StaticClient:
    """Returns canned responses in order; repeats the last one. Test helper."""

    def __init__(self, responses: str | list[str], model_id: str = "static"):
        self.model_id = model_id
        self._responses = [responses] if isinstance(responses, str) else list(responses)
        self.calls: list[str] = []

    def generate(self, prompt, image=None, max_tokens=512, temperature=0.0) -> str:
        self.calls.append(prompt)
        idx = min(len(self.calls) - 1, len(self._responses) - 1)
        return self._responses[idx]


_SITES = ["forearm", "shin", "scalp", "upper back", "cheek", "dorsal hand", "thigh", "abdomen"]
_PRIMARY = ["plaque", "papule", "nodule", "patch", "vesicle", "pustule"]
_SECONDARY = ["scale", "crust", "excoriation", "lichenification", "fissuring", "erosion"]
_COLORS = ["erythematous", "violaceous", "hyperpigmented", "hypopigmented", "salmon-pink", "brown"]
_DISTRIBUTIONS = ["well-demarcated", "ill-defined", "annular", "grouped", "scattered", "confluent"]
_SURFACES = ["silvery scaling", "a smooth shiny surface", "overlying crust",
             "fine desquamation", "a verrucous texture", "central clearing"]


class MockClient:
    """Bundled deterministic generator: output depends only on the configured
    seed and the request content, so fixed-seed runs are byte-identical."""

    def __init__(self, seed: int = 0, model_id: str = "mock-vlm-1"):
        self.seed = seed
        self.model_id = model_id

    def _rng(self, prompt: str, image: bytes | None, temperature: float) -> random.Random:
        h = hashlib.sha256()
        h.update(str(self.seed).encode())
        h.update(prompt.encode())
        h.update(image or b"")
        h.update(f"{temperature:.6f}".encode())
        return random.Random(int.from_bytes(h.digest()[:8], "little"))

    def generate(self, prompt, image=None, max_tokens=512, temperature=0.0) -> str:
        rng = self._rng(prompt, image, temperature)
        if prompt.startswith("Describe only what is visible"):
            return self._caption(rng)
        if prompt.startswith("Write a diagnostic reasoning draft"):
            return self._draft(rng, prompt)
        if prompt.startswith("Rewrite the draft"):
            return self._normalize(prompt)
        if prompt.startswith("Compare the candidate narrative"):
            return self._judge(rng)
        if prompt.startswith("Select the single most likely diagnosis"):
            return self._classify(rng, prompt)
        return "Acknowledged."

    def _caption(self, rng: random.Random) -> str:
        return (
            f"A {rng.choice(_DISTRIBUTIONS)} {rng.choice(_COLORS)} {rng.choice(_PRIMARY)} "
            f"on the {rng.choice(_SITES)}, with {rng.choice(_SECONDARY)} and "
            f"{rng.choice(_SURFACES)}."
        )

    @staticmethod
    def _field(prompt: str, name: str) -> str:
        for line in prompt.splitlines():
            if line.startswith(name + ":"):
                return line[len(name) + 1 :].strip()
        return ""

    def _draft(self, rng: random.Random, prompt: str) -> str:
        label = self._field(prompt, "Label")
        caption = self._field(prompt, "Caption")
        evidence = caption.rstrip(".")
        middle = rng.choice(
            [
                "The distribution and surface change argue against a transient process",
                "The morphology suggests a chronic inflammatory rather than neoplastic course",
                "Symmetry and sharp margination narrow the differential considerably",
            ]
        )
        return (
            f"The examination shows {evidence}. {middle}. "
            f"Taken together, the findings are most consistent with {label}."
        )

    def _normalize(self, prompt: str) -> str:
        draft = self._field(prompt, "Draft")
        sentences = [s.strip() for s in draft.split(". ") if s.strip()]
        diagnosis = sentences[-1] if sentences else draft
        observation = sentences[0] + "." if sentences else draft
        reasoning = ". ".join(sentences[1:-1]) + "." if len(sentences) > 2 else "The pattern is characteristic."
        if not diagnosis.endswith("."):
            diagnosis += "."
        return (
            f"### Observation\n{observation}\n"
            f"### Reasoning\n{reasoning}\n"
            f"### Diagnosis\n{diagnosis}\n"
        )

    def _judge(self, rng: random.Random) -> str:
        scores = ScoreVector.from_values(2.5 + 0.5 * rng.randrange(6) for _ in range(6))
        critique = rng.choice(
            [
                "The narrative is orderly and cites visible evidence before concluding.",
                "Coverage is serviceable but the management discussion stays generic.",
                "Descriptions are precise; the differential could be broader.",
            ]
        )
        return render_eval(scores, critique).text

    def _classify(self, rng: random.Random, prompt: str) -> str:
        labels = [l.strip() for l in self._field(prompt, "Labels").split(",") if l.strip()]
        return rng.choice(labels) if labels else "unknown"
