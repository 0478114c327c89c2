"""The three corpus stages: observation caption, label-aware draft, and
three-layer normalization. Each stage retries exactly once with a stricter
prompt before failing hard.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

from .clients import GenClient
from .lexicon import LeakLexicon

LAYER_MARKERS = ("### Observation", "### Reasoning", "### Diagnosis")
DIAGNOSIS_CHAR_CAP = 400


class StageError(RuntimeError):
    def __init__(self, stage: str, reason: str):
        super().__init__(f"{stage}: {reason}")
        self.stage = stage
        self.reason = reason


@dataclass
class StageOutput:
    text: str
    prompt_hash: str
    retried: bool


def _prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode()).hexdigest()


def build_caption_prompt(stricter: bool = False) -> str:
    head = "Describe only what is visible in the dermatology image."
    rules = (
        "Record anatomic site, primary and secondary morphology, distribution, "
        "color, and surface changes. Do not name any diagnosis or disease."
    )
    if stricter:
        rules += (
            " STRICT MODE: the previous attempt leaked a diagnostic term; "
            "use purely descriptive language, no disease names or their synonyms."
        )
    return f"{head}\n{rules}"


def build_draft_prompt(caption: str, label: str, stricter: bool = False) -> str:
    head = "Write a diagnostic reasoning draft for the case below."
    rules = (
        "Marshal the discriminative visual evidence first and reveal the "
        "diagnosis only in the final sentence."
    )
    if stricter:
        rules += " STRICT MODE: the diagnosis must appear exactly once, at the very end."
    return f"{head}\n{rules}\nCaption: {caption}\nLabel: {label}"


def build_normalize_prompt(draft: str, stricter: bool = False) -> str:
    head = "Rewrite the draft into the canonical three-layer narrative."
    rules = (
        "Use exactly the section markers '### Observation', '### Reasoning', "
        "'### Diagnosis', each once, in this order, each section nonempty."
    )
    if stricter:
        rules += " STRICT MODE: emit the three markers verbatim and nothing before the first."
    return f"{head}\n{rules}\nDraft: {draft}"


def _call(client: GenClient, prompt: str, image: bytes | None,
          max_tokens: int, temperature: float, stage: str) -> str:
    try:
        text = client.generate(prompt, image=image, max_tokens=max_tokens,
                               temperature=temperature)
    except Exception as exc:
        raise StageError(stage, f"client failure: {exc}") from exc
    if not text or not text.strip():
        raise StageError(stage, "empty client output")
    return text.strip()


def stage_caption(
    image: bytes,
    client: GenClient,
    lexicon: LeakLexicon,
    label: str,
    max_tokens: int = 256,
    temperature: float = 0.0,
) -> StageOutput:
    """Observation-only caption; must not mention the label or its synonyms."""
    prompt = build_caption_prompt()
    text = _call(client, prompt, image, max_tokens, temperature, "caption")
    if not lexicon.find_violations(text, label):
        return StageOutput(text, _prompt_hash(prompt), retried=False)
    prompt = build_caption_prompt(stricter=True)
    text = _call(client, prompt, image, max_tokens, temperature, "caption")
    leaked = lexicon.find_violations(text, label)
    if leaked:
        raise StageError("caption", f"label leakage after retry: {', '.join(leaked)}")
    return StageOutput(text, _prompt_hash(prompt), retried=True)


_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")


def _diagnosis_position_ok(draft: str, label: str, lexicon: LeakLexicon) -> str | None:
    """None when the label term appears and only in the final sentence;
    otherwise the reason for rejection."""
    sentences = [s for s in _SENTENCE_SPLIT.split(draft.strip()) if s.strip()]
    if not sentences:
        return "empty draft"
    if not lexicon.mentions_label(draft, label):
        return "diagnosis missing from draft"
    for sentence in sentences[:-1]:
        if lexicon.mentions_label(sentence, label):
            return "diagnosis revealed before the final sentence"
    if not lexicon.mentions_label(sentences[-1], label):
        return "diagnosis missing from the final sentence"
    return None


def stage_draft(
    image: bytes,
    caption: str,
    label: str,
    client: GenClient,
    lexicon: LeakLexicon,
    max_tokens: int = 512,
    temperature: float = 0.0,
) -> StageOutput:
    """Label-aware draft whose final sentence (and only it) names the label."""
    prompt = build_draft_prompt(caption, label)
    text = _call(client, prompt, image, max_tokens, temperature, "draft")
    if _diagnosis_position_ok(text, label, lexicon) is None:
        return StageOutput(text, _prompt_hash(prompt), retried=False)
    prompt = build_draft_prompt(caption, label, stricter=True)
    text = _call(client, prompt, image, max_tokens, temperature, "draft")
    reason = _diagnosis_position_ok(text, label, lexicon)
    if reason is not None:
        raise StageError("draft", f"{reason} (after retry)")
    return StageOutput(text, _prompt_hash(prompt), retried=True)


def split_layers(text: str) -> dict[str, str] | str:
    """Extract the three layers; returns a reason string on violation."""
    positions = []
    for marker in LAYER_MARKERS:
        found = [m.start() for m in re.finditer(re.escape(marker), text)]
        if not found:
            return f"missing marker {marker!r}"
        if len(found) > 1:
            return f"duplicate marker {marker!r}"
        positions.append(found[0])
    if positions != sorted(positions):
        return "markers out of order"
    keys = ("observation", "reasoning", "diagnosis")
    layers = {}
    for i, (key, marker) in enumerate(zip(keys, LAYER_MARKERS)):
        start = positions[i] + len(marker)
        end = positions[i + 1] if i + 1 < len(positions) else len(text)
        content = text[start:end].strip()
        if not content:
            return f"empty {key} layer"
        layers[key] = content
    if len(layers["diagnosis"]) > DIAGNOSIS_CHAR_CAP:
        return f"diagnosis layer exceeds {DIAGNOSIS_CHAR_CAP} characters"
    return layers


def stage_normalize(
    draft: str,
    client: GenClient,
    max_tokens: int = 512,
    temperature: float = 0.0,
) -> tuple[dict[str, str], StageOutput]:
    """Normalize the draft into the canonical three-layer structure."""
    prompt = build_normalize_prompt(draft)
    text = _call(client, prompt, None, max_tokens, temperature, "normalize")
    layers = split_layers(text)
    if isinstance(layers, dict):
        return layers, StageOutput(text, _prompt_hash(prompt), retried=False)
    prompt = build_normalize_prompt(draft, stricter=True)
    text = _call(client, prompt, None, max_tokens, temperature, "normalize")
    layers = split_layers(text)
    if not isinstance(layers, dict):
        raise StageError("normalize", f"{layers} (after retry)")
    return layers, StageOutput(text, _prompt_hash(prompt), retried=True)
