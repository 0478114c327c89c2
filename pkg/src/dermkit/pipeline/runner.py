"""Corpus factory: drives the three stages over a manifest, with stable
content-derived ids, full per-stage provenance, resumability, and
per-record failure isolation.
"""

from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

from .clients import GenClient
from .lexicon import LeakLexicon
from .stages import StageError, stage_caption, stage_draft, stage_normalize

PIPELINE_VERSION = "1"


@dataclass
class ManifestEntry:
    image_ref: str
    label: str
    anatomic_site: str = ""


@dataclass
class CoTRecord:
    """One curated case with its three-layer narrative and provenance."""

    id: str
    image_ref: str
    label: str
    caption: str
    draft: str
    cot: dict[str, str]  # observation / reasoning / diagnosis
    provenance: dict[str, dict]
    anatomic_site: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "CoTRecord":
        return cls(**json.loads(line))

    @property
    def narrative(self) -> str:
        return "\n".join(
            (self.cot.get("observation", ""), self.cot.get("reasoning", ""),
             self.cot.get("diagnosis", ""))
        )


@dataclass
class PipelineFailure:
    image_ref: str
    stage: str
    reason: str
    record_id: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class PipelineResult:
    written: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    failures: list[PipelineFailure] = field(default_factory=list)


def stable_record_id(image_bytes: bytes, label: str, version: str = PIPELINE_VERSION) -> str:
    h = hashlib.sha256()
    h.update(image_bytes)
    h.update(b"\x00")
    h.update(label.encode())
    h.update(b"\x00")
    h.update(version.encode())
    return h.hexdigest()[:32]


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """CSV (with header) or JSONL of {image_ref, label, anatomic_site}."""
    path = Path(path)
    entries = []
    if path.suffix.lower() == ".csv":
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                entries.append(
                    ManifestEntry(row["image_ref"], row["label"], row.get("anatomic_site", ""))
                )
    else:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    entries.append(
                        ManifestEntry(obj["image_ref"], obj["label"], obj.get("anatomic_site", ""))
                    )
    return entries


def _utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def validate_record(record: CoTRecord, lexicon: LeakLexicon,
                    image_bytes: bytes | None = None) -> list[str]:
    """Invariant scan: no caption leakage, three nonempty layers,
    diagnosis-last, and (when bytes are available) id stability."""
    problems = []
    if lexicon.find_violations(record.caption, record.label):
        problems.append("label term present in caption")
    for layer in ("observation", "reasoning", "diagnosis"):
        if not record.cot.get(layer, "").strip():
            problems.append(f"empty {layer} layer")
    for layer in ("observation", "reasoning"):
        if lexicon.mentions_label(record.cot.get(layer, ""), record.label):
            problems.append(f"label term appears in {layer} layer before diagnosis")
    if not lexicon.mentions_label(record.cot.get("diagnosis", ""), record.label):
        problems.append("diagnosis layer never names the label")
    for stage in ("caption", "draft", "normalize"):
        meta = record.provenance.get(stage, {})
        if not all(k in meta for k in ("model_id", "prompt_hash", "seed", "timestamp")):
            problems.append(f"incomplete provenance for stage {stage}")
    if image_bytes is not None and record.id != stable_record_id(image_bytes, record.label):
        problems.append("id does not match content hash")
    return problems


def _process_entry(
    entry: ManifestEntry,
    image_bytes: bytes,
    client: GenClient,
    lexicon: LeakLexicon,
    seed: int,
    temperature: float,
    clock: Callable[[], str],
) -> CoTRecord:
    record_id = stable_record_id(image_bytes, entry.label)

    def stamp(out) -> dict:
        return {
            "model_id": client.model_id,
            "prompt_hash": out.prompt_hash,
            "seed": seed,
            "timestamp": clock(),
            "retried": out.retried,
        }

    caption_out = stage_caption(image_bytes, client, lexicon, entry.label,
                                temperature=temperature)
    draft_out = stage_draft(image_bytes, caption_out.text, entry.label, client,
                            lexicon, temperature=temperature)
    layers, norm_out = stage_normalize(draft_out.text, client, temperature=temperature)
    record = CoTRecord(
        id=record_id,
        image_ref=entry.image_ref,
        label=entry.label,
        anatomic_site=entry.anatomic_site,
        caption=caption_out.text,
        draft=draft_out.text,
        cot=layers,
        provenance={
            "caption": stamp(caption_out),
            "draft": stamp(draft_out),
            "normalize": stamp(norm_out),
        },
    )
    problems = validate_record(record, lexicon, image_bytes)
    if problems:
        raise StageError("validate", "; ".join(problems))
    return record


def run_pipeline(
    manifest: list[ManifestEntry],
    client: GenClient,
    lexicon: LeakLexicon,
    corpus_path: str | Path,
    failures_path: str | Path,
    seed: int = 0,
    temperature: float = 0.0,
    max_workers: int = 4,
    clock: Callable[[], str] | None = None,
) -> PipelineResult:
    """Run all stages for every manifest entry.

    Already-curated ids (present in the corpus file) are skipped, so an
    interrupted run resumes where it stopped. Per-record failures are logged
    and never abort the batch. Records are appended in manifest order
    regardless of worker scheduling.
    """
    corpus_path, failures_path = Path(corpus_path), Path(failures_path)
    corpus_path.parent.mkdir(parents=True, exist_ok=True)
    failures_path.parent.mkdir(parents=True, exist_ok=True)
    clock = clock or _utc_now

    done_ids = set()
    if corpus_path.exists():
        with open(corpus_path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    done_ids.add(json.loads(line)["id"])

    result = PipelineResult()

    def work(entry: ManifestEntry):
        try:
            image_bytes = Path(entry.image_ref).read_bytes()
        except OSError as exc:
            return entry, None, PipelineFailure(entry.image_ref, "read", str(exc))
        record_id = stable_record_id(image_bytes, entry.label)
        if record_id in done_ids:
            return entry, "skipped:" + record_id, None
        try:
            record = _process_entry(entry, image_bytes, client, lexicon, seed,
                                    temperature, clock)
            return entry, record, None
        except StageError as exc:
            return entry, None, PipelineFailure(entry.image_ref, exc.stage, exc.reason,
                                                record_id)

    with open(corpus_path, "a", encoding="utf-8") as corpus_fh, \
            open(failures_path, "a", encoding="utf-8") as failures_fh:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            for entry, outcome, failure in pool.map(work, manifest):
                if failure is not None:
                    result.failures.append(failure)
                    failures_fh.write(failure.to_json() + "\n")
                elif isinstance(outcome, str):
                    result.skipped.append(outcome.split(":", 1)[1])
                elif outcome.id in done_ids:
                    # duplicate manifest rows can race past the early check
                    result.skipped.append(outcome.id)
                else:
                    corpus_fh.write(outcome.to_json() + "\n")
                    result.written.append(outcome.id)
                    done_ids.add(outcome.id)
    return result


def read_corpus(path: str | Path) -> list[CoTRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(CoTRecord.from_json(line))
    return records
