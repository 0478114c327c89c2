"""Canonical evaluation text: six labeled score lines plus a free critique.

The score block is byte-stable: fixed dimension order, one decimal place,
one ``Dimension: value`` line each. Parsing is strict — missing lines,
duplicates, and out-of-range values are failures, never clamped.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

DIMENSIONS = (
    "Accuracy",
    "Safety",
    "Medical Groundedness",
    "Clinical Coverage",
    "Reasoning Coherence",
    "Description Precision",
)

SCORE_MIN, SCORE_MAX = 1.0, 5.0
SCORE_HEADER = "Scores:"

_FIELD_NAMES = ("accuracy", "safety", "groundedness", "coverage", "coherence", "precision")


@dataclass(frozen=True)
class ScoreVector:
    """Six clinician-dimension scores on the 1-5 scale plus their mean."""

    accuracy: float
    safety: float
    groundedness: float
    coverage: float
    coherence: float
    precision: float

    def __post_init__(self) -> None:
        for name in _FIELD_NAMES:
            v = getattr(self, name)
            if not (SCORE_MIN <= v <= SCORE_MAX):
                raise ValueError(f"{name} score {v} outside [{SCORE_MIN}, {SCORE_MAX}]")

    @property
    def mean(self) -> float:
        return sum(self.as_tuple()) / 6.0

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, name) for name in _FIELD_NAMES)

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in _FIELD_NAMES}

    @classmethod
    def from_values(cls, values) -> "ScoreVector":
        values = tuple(values)
        if len(values) != 6:
            raise ValueError(f"expected 6 scores, got {len(values)}")
        return cls(*values)


@dataclass(frozen=True)
class EvalText:
    critique: str
    score_block: str

    @property
    def text(self) -> str:
        if self.critique:
            return f"{self.critique}\n\n{self.score_block}"
        return self.score_block


@dataclass
class ParseFailure:
    missing: list[str] = field(default_factory=list)
    malformed: list[str] = field(default_factory=list)

    def describe(self) -> str:
        parts = []
        if self.missing:
            parts.append("missing: " + ", ".join(self.missing))
        if self.malformed:
            parts.append("malformed: " + "; ".join(self.malformed))
        return " | ".join(parts) if parts else "unparseable"


def render_eval(scores: ScoreVector, critique: str = "") -> EvalText:
    """Deterministic, byte-stable rendering with one decimal per score."""
    lines = [SCORE_HEADER]
    for dim, value in zip(DIMENSIONS, scores.as_tuple()):
        lines.append(f"{dim}: {value:.1f}")
    return EvalText(critique=critique.rstrip(), score_block="\n".join(lines))


_LINE_RES = {dim: re.compile(rf"^\s*{re.escape(dim)}\s*:\s*(.+?)\s*$") for dim in DIMENSIONS}


def parse_eval(text: str) -> ScoreVector | ParseFailure:
    """Extract the six scores from the canonical block.

    Returns a :class:`ParseFailure` naming missing or malformed fields when
    the block is absent, duplicated, non-numeric, or out of range.
    """
    found: dict[str, float] = {}
    missing: list[str] = []
    malformed: list[str] = []
    lines = text.splitlines()
    for dim in DIMENSIONS:
        pattern = _LINE_RES[dim]
        hits = [m.group(1) for line in lines if (m := pattern.match(line))]
        if not hits:
            missing.append(dim)
            continue
        if len(hits) > 1:
            malformed.append(f"{dim}: duplicate lines")
            continue
        try:
            value = float(hits[0])
        except ValueError:
            malformed.append(f"{dim}: non-numeric value {hits[0]!r}")
            continue
        if not (SCORE_MIN <= value <= SCORE_MAX):
            malformed.append(f"{dim}: value {hits[0]} out of range")
            continue
        found[dim] = value
    if missing or malformed:
        return ParseFailure(missing=missing, malformed=malformed)
    return ScoreVector.from_values(found[dim] for dim in DIMENSIONS)
