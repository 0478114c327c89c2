"""Six-dimension benchmark: fixed-prompt judging, per-system aggregation,
rubric mapping, and ranking.

Every model in a run is judged with byte-identical prompt templates and
decoding settings; the run output carries hashes of both so parity is
checkable from the report alone.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..dermeval.evalformat import DIMENSIONS, ParseFailure, ScoreVector, parse_eval
from ..pipeline.clients import GenClient

RUBRIC_LETTERS = {"A": 5, "B": 4, "C": 3, "D": 2, "E": 1}

JUDGE_PROMPT_TEMPLATE = (
    "Compare the candidate narrative against the gold reference for the "
    "dermatology case below and score it on the six dimensions "
    "(Accuracy, Safety, Medical Groundedness, Clinical Coverage, "
    "Reasoning Coherence, Description Precision), each from 1 to 5.\n"
    "Respond with a short critique followed by the canonical score block.\n"
    "Case: {case_id}\n"
    "Reference: {reference}\n"
    "Candidate: {candidate}\n"
)


def rubric_map(letter: str) -> int:
    """Letter labels A..E map to scores 5..1."""
    try:
        return RUBRIC_LETTERS[letter]
    except KeyError:
        raise ValueError(f"unknown rubric letter {letter!r}; expected one of A-E") from None


@dataclass
class BenchCase:
    id: str
    image_ref: str
    reference: str
    candidate_by_model: dict[str, str]

    def __post_init__(self) -> None:
        if not self.reference.strip():
            raise ValueError(f"case {self.id}: empty reference narrative")


@dataclass(frozen=True)
class JudgeSettings:
    temperature: float = 0.0
    max_tokens: int = 1024

    def digest(self) -> str:
        return hashlib.sha256(
            f"temperature={self.temperature:.6f};max_tokens={self.max_tokens}".encode()
        ).hexdigest()


@dataclass
class BenchRow:
    model: str
    per_dim: dict[str, float]
    average: float
    n_cases: int

    def __post_init__(self) -> None:
        mean_of_dims = sum(self.per_dim.values()) / len(self.per_dim)
        if abs(self.average - mean_of_dims) > 1e-3:
            raise ValueError(
                f"{self.model}: average {self.average} inconsistent with "
                f"per-dimension means (expected {mean_of_dims:.6f})"
            )


class JudgeFailure(RuntimeError):
    pass


def judge_case(
    case: BenchCase,
    model: str,
    judge: GenClient,
    settings: JudgeSettings = JudgeSettings(),
    image: bytes | None = None,
) -> ScoreVector:
    """Score one candidate with the fixed comparison prompt; one retry on a
    parse failure, then a hard failure."""
    if model not in case.candidate_by_model:
        raise KeyError(f"case {case.id} has no candidate for model {model!r}")
    prompt = JUDGE_PROMPT_TEMPLATE.format(
        case_id=case.id, reference=case.reference,
        candidate=case.candidate_by_model[model],
    )
    last_failure = None
    for _ in range(2):
        text = judge.generate(prompt, image=image, max_tokens=settings.max_tokens,
                              temperature=settings.temperature)
        parsed = parse_eval(text)
        if isinstance(parsed, ScoreVector):
            return parsed
        last_failure = parsed
    raise JudgeFailure(
        f"judge output unparseable twice for case {case.id}, model {model}: "
        f"{last_failure.describe()}"
    )


@dataclass
class BenchRunResult:
    rows: list[BenchRow]
    results: list[dict] = field(repr=False, default_factory=list)
    audit: list[dict] = field(repr=False, default_factory=list)
    prompt_hash: str = ""
    settings_hash: str = ""


def run_bench(
    cases: list[BenchCase],
    models: list[str],
    judge: GenClient,
    settings: JudgeSettings = JudgeSettings(),
) -> BenchRunResult:
    """Judge every (model, case) pair and aggregate per system.

    Failed judgments are excluded from that model's means and disclosed via
    n_cases plus an audit entry.
    """
    prompt_hash = hashlib.sha256(JUDGE_PROMPT_TEMPLATE.encode()).hexdigest()
    out = BenchRunResult(rows=[], prompt_hash=prompt_hash, settings_hash=settings.digest())
    per_model: dict[str, list[ScoreVector]] = {m: [] for m in models}
    for model in models:
        for case in cases:
            try:
                scores = judge_case(case, model, judge, settings)
            except JudgeFailure as exc:
                out.audit.append(
                    {"model": model, "case_id": case.id, "decision": "excluded",
                     "reason": str(exc)}
                )
                continue
            per_model[model].append(scores)
            out.results.append(
                {"model": model, "case_id": case.id,
                 "scores": scores.as_dict(), "mean": scores.mean}
            )
    out.rows = [aggregate_system(per_model[m], m) for m in models if per_model[m]]
    return out


def aggregate_system(scores: list[ScoreVector], model: str) -> BenchRow:
    """Arithmetic per-dimension means; the row average is the mean of the six
    per-dimension means. Raw values are kept at full precision."""
    if not scores:
        raise ValueError(f"no scores to aggregate for {model!r}")
    field_names = ("accuracy", "safety", "groundedness", "coverage", "coherence", "precision")
    per_dim = {}
    for dim, attr in zip(DIMENSIONS, field_names):
        per_dim[dim] = sum(getattr(s, attr) for s in scores) / len(scores)
    average = sum(per_dim.values()) / len(per_dim)
    return BenchRow(model=model, per_dim=per_dim, average=average, n_cases=len(scores))


def rank_systems(rows: list[BenchRow], baseline: str | None = None) -> dict:
    """Descending by average; ties break by Accuracy then model name.
    When a baseline model is named, adds relative improvement
    (avg - avg_baseline) / avg_baseline per row."""
    if not rows:
        raise ValueError("no rows to rank")
    ordered = sorted(
        rows, key=lambda r: (-r.average, -r.per_dim[DIMENSIONS[0]], r.model)
    )
    report = {
        "ranking": [r.model for r in ordered],
        "rows": ordered,
        "improvement_vs_baseline": {},
        "baseline": baseline,
    }
    if baseline is not None:
        base = next((r for r in rows if r.model == baseline), None)
        if base is None:
            raise ValueError(f"baseline model {baseline!r} not among rows")
        for row in ordered:
            report["improvement_vs_baseline"][row.model] = (
                (row.average - base.average) / base.average
            )
    return report


def read_bench_cases(path: str | Path) -> list[BenchCase]:
    cases = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if obj["id"] in seen:
                raise ValueError(f"duplicate case id {obj['id']!r}")
            seen.add(obj["id"])
            cases.append(BenchCase(
                id=obj["id"], image_ref=obj.get("image_ref", ""),
                reference=obj["reference"],
                candidate_by_model=obj["candidate_by_model"],
            ))
    return cases


def write_results(path: str | Path, result: BenchRunResult) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in result.results:
            fh.write(json.dumps(row) + "\n")
