"""Zero-shot classification harness: one instruction template for every
model, normalized label mapping, top-1 accuracy.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from ..pipeline.clients import GenClient

UNMAPPED = "<unmapped>"

CLASSIFY_PROMPT_TEMPLATE = (
    "Select the single most likely diagnosis for the dermatology image.\n"
    "Respond with exactly one label from the list, nothing else.\n"
    "Labels: {labels}\n"
)

_PUNCT = re.compile(r"[^\w\s-]")


def normalize_label(text: str) -> str:
    return _PUNCT.sub("", text).strip().casefold()


@dataclass
class LabelSpace:
    labels: list[str]
    aliases: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.labels:
            raise ValueError("label space is empty")
        self._lookup: dict[str, str] = {}
        for label in self.labels:
            self._lookup[normalize_label(label)] = label
        for alias, label in self.aliases.items():
            if label not in self.labels:
                raise ValueError(f"alias {alias!r} maps to unknown label {label!r}")
            key = normalize_label(alias)
            if key in self._lookup and self._lookup[key] != label:
                raise ValueError(f"alias {alias!r} collides with an existing mapping")
            self._lookup[key] = label

    def resolve(self, text: str, strict: bool = True) -> str:
        """Map model output to a canonical label, or UNMAPPED.

        Strict mode requires the whole (normalized) output to be one label or
        alias; lenient mode also accepts output containing exactly one known
        label/alias mention."""
        key = normalize_label(text)
        if key in self._lookup:
            return self._lookup[key]
        if strict:
            return UNMAPPED
        mentions = {
            label for token_key, label in self._lookup.items()
            if re.search(r"\b" + re.escape(token_key) + r"\b", key)
        }
        return mentions.pop() if len(mentions) == 1 else UNMAPPED


def build_classify_prompt(space: LabelSpace) -> str:
    return CLASSIFY_PROMPT_TEMPLATE.format(labels=", ".join(space.labels))


def classify_case(
    image: bytes | None,
    space: LabelSpace,
    model: GenClient,
    strict: bool = True,
    max_tokens: int = 32,
    temperature: float = 0.0,
) -> str:
    """Single-label prediction; anything that fails the mapping counts as
    UNMAPPED (always incorrect)."""
    prompt = build_classify_prompt(space)
    text = model.generate(prompt, image=image, max_tokens=max_tokens,
                          temperature=temperature)
    return space.resolve(text, strict=strict)


def accuracy(preds: list[str], golds: list[str]) -> float:
    """Top-1 accuracy in percent; UNMAPPED never matches."""
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions for {len(golds)} golds")
    if not preds:
        raise ValueError("empty prediction list")
    hits = sum(1 for p, g in zip(preds, golds) if p != UNMAPPED and p == g)
    return 100.0 * hits / len(preds)


def read_classify_manifest(path: str | Path) -> list[dict]:
    """JSONL of {image_ref, gold_label}."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                rows.append({"image_ref": obj["image_ref"], "gold_label": obj["gold_label"]})
    return rows
