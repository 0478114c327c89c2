"""Near-duplicate removal: exact image-hash equality plus character
5-gram Jaccard similarity on normalized caption text.

Records are visited in input order; a record is dropped when it duplicates
any already-kept record, so output order is stable.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

SHINGLE_SIZE = 5
DEFAULT_THRESHOLD = 0.9


@dataclass(frozen=True)
class DedupItem:
    id: str
    text: str
    image_bytes: bytes

    @property
    def image_hash(self) -> str:
        return hashlib.sha256(self.image_bytes).hexdigest()


@dataclass(frozen=True)
class DedupDrop:
    id: str
    kept_id: str
    reason: str


def normalize_text(text: str) -> str:
    return " ".join(text.casefold().split())


def shingles(text: str, k: int = SHINGLE_SIZE) -> set[str]:
    norm = normalize_text(text)
    if len(norm) < k:
        return {norm} if norm else set()
    return {norm[i : i + k] for i in range(len(norm) - k + 1)}


def jaccard(a: set[str], b: set[str]) -> float:
    if not a and not b:
        return 1.0
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def dedup(
    items: list[DedupItem], threshold: float = DEFAULT_THRESHOLD
) -> tuple[list[DedupItem], list[DedupDrop]]:
    kept: list[DedupItem] = []
    kept_shingles: list[set[str]] = []
    kept_hashes: dict[str, str] = {}
    drops: list[DedupDrop] = []
    for item in items:
        img_hash = item.image_hash
        if img_hash in kept_hashes:
            drops.append(DedupDrop(item.id, kept_hashes[img_hash], "identical image bytes"))
            continue
        sh = shingles(item.text)
        dup_of = None
        for other, other_sh in zip(kept, kept_shingles):
            if jaccard(sh, other_sh) >= threshold:
                dup_of = other.id
                break
        if dup_of is not None:
            drops.append(DedupDrop(item.id, dup_of, f"caption similarity >= {threshold}"))
            continue
        kept.append(item)
        kept_shingles.append(sh)
        kept_hashes[img_hash] = item.id
    return kept, drops
