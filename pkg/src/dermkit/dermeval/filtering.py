"""Offline corpus filter: score threshold, certified-set exclusion, and
per-key group balance.

Selection rule (deterministic):
  1. Eligible = mean score >= threshold and id not in the certified set.
  2. Candidates are visited in (mean descending, id ascending) order.
  3. For every balance key independently, a group may not exceed
     cap[key] = (least-populated admissible group's eligible count) + max_skew;
     a candidate is admitted only if all of its groups are under their caps.
  4. If the resulting per-key spread (max - min over admissible groups)
     still exceeds max_skew, caps are lowered to (observed min + max_skew)
     and the pass repeats until the spread bound holds.

Admissible groups are the group values present among eligible candidates.
An empty selection with eligible candidates remaining is reported as
infeasible rather than silently relaxed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .evalformat import ScoreVector


class BalanceInfeasibleError(RuntimeError):
    def __init__(self, message: str, audit: list["AuditEntry"]):
        super().__init__(message)
        self.audit = audit


@dataclass(frozen=True)
class FilterSpec:
    threshold: float = 4.5
    balance_keys: tuple[str, ...] = ("label", "anatomic_site")
    max_skew: int = 5
    certified_ids: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if not 1.0 <= self.threshold <= 5.0:
            raise ValueError(f"threshold {self.threshold} outside [1, 5]")
        if self.max_skew < 0:
            raise ValueError("max_skew must be nonnegative")


@dataclass(frozen=True)
class AuditEntry:
    id: str
    decision: str  # "selected" | "excluded"
    reason: str

    def to_json(self) -> str:
        return json.dumps({"id": self.id, "decision": self.decision, "reason": self.reason})


@dataclass
class FilterResult:
    selected_ids: list[str]
    audit: list[AuditEntry]
    group_counts: dict[str, dict[str, int]]
    passes: int = 1


def _attr(record, key: str) -> str:
    if isinstance(record, Mapping):
        if key not in record:
            raise KeyError(f"candidate record missing balance attribute {key!r}")
        return str(record[key])
    try:
        return str(getattr(record, key))
    except AttributeError as exc:
        raise KeyError(f"candidate record missing balance attribute {key!r}") from exc


def filter_candidates(
    candidates: Sequence[tuple[object, ScoreVector]], spec: FilterSpec
) -> FilterResult:
    """Select ids passing threshold, certified exclusion, and balance bounds.

    Every candidate appears in the audit with its decision and reason.
    Deterministic: ties break by highest mean first, then lexicographic id.
    """
    base_audit: dict[str, AuditEntry] = {}
    eligible: list[tuple[str, float, dict[str, str]]] = []
    for record, scores in candidates:
        rid = _attr(record, "id")
        if rid in spec.certified_ids:
            base_audit[rid] = AuditEntry(rid, "excluded", "certified overlap")
            continue
        if scores.mean < spec.threshold:
            base_audit[rid] = AuditEntry(
                rid, "excluded", f"below threshold ({scores.mean:.4f} < {spec.threshold})"
            )
            continue
        groups = {key: _attr(record, key) for key in spec.balance_keys}
        eligible.append((rid, scores.mean, groups))

    eligible.sort(key=lambda item: (-item[1], item[0]))

    avail: dict[str, dict[str, int]] = {key: {} for key in spec.balance_keys}
    for _, _, groups in eligible:
        for key, value in groups.items():
            avail[key][value] = avail[key].get(value, 0) + 1
    caps = {
        key: (min(counts.values()) + spec.max_skew if counts else 0)
        for key, counts in avail.items()
    }

    def run_pass() -> tuple[list[str], dict[str, AuditEntry], dict[str, dict[str, int]]]:
        counts: dict[str, dict[str, int]] = {key: {} for key in spec.balance_keys}
        picked: list[str] = []
        audit: dict[str, AuditEntry] = {}
        for rid, _, groups in eligible:
            blocked = None
            for key, value in groups.items():
                if counts[key].get(value, 0) + 1 > caps[key]:
                    blocked = key
                    break
            if blocked is not None:
                audit[rid] = AuditEntry(rid, "excluded", f"balance cap on {blocked!r}")
                continue
            for key, value in groups.items():
                counts[key][value] = counts[key].get(value, 0) + 1
            picked.append(rid)
            audit[rid] = AuditEntry(rid, "selected", "passed all checks")
        return picked, audit, counts

    passes = 0
    while True:
        passes += 1
        picked, pass_audit, counts = run_pass()
        spread_ok = True
        for key in spec.balance_keys:
            admissible = avail[key].keys()
            if not admissible:
                continue
            observed = [counts[key].get(g, 0) for g in admissible]
            if max(observed) - min(observed) > spec.max_skew:
                caps[key] = min(observed) + spec.max_skew
                spread_ok = False
        if spread_ok:
            break

    audit = [base_audit.get(rid) or pass_audit[rid] for rid in sorted(
        set(base_audit) | set(pass_audit)
    )]
    if eligible and not picked:
        raise BalanceInfeasibleError(
            f"balance constraints (max_skew={spec.max_skew}) admit no candidates "
            f"out of {len(eligible)} eligible",
            audit,
        )
    return FilterResult(selected_ids=picked, audit=audit, group_counts=counts, passes=passes)


def write_audit(path: str | Path, audit: Iterable[AuditEntry]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for entry in audit:
            fh.write(entry.to_json() + "\n")


def write_scored_corpus(path: str | Path, rows: Iterable[tuple[object, ScoreVector, str]]) -> None:
    """JSONL rows: {id, label, anatomic_site, scores:{six fields}, mean, annotator}."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record, scores, annotator in rows:
            fh.write(
                json.dumps(
                    {
                        "id": _attr(record, "id"),
                        "label": _attr(record, "label"),
                        "anatomic_site": _attr(record, "anatomic_site"),
                        "scores": scores.as_dict(),
                        "mean": scores.mean,
                        "annotator": annotator,
                    }
                )
                + "\n"
            )


def read_scored_corpus(path: str | Path) -> list[tuple[dict, ScoreVector]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            scores = ScoreVector(**obj["scores"])
            if "mean" in obj and abs(scores.mean - obj["mean"]) > 1e-9:
                raise ValueError(f"record {obj.get('id')!r}: stored mean disagrees with scores")
            rows.append((obj, scores))
    return rows
