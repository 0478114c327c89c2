"""Label-term lexicon for leakage checks.

Lookup is case- and diacritic-insensitive; terms match on word boundaries,
with whitespace-flexible multiword terms.
"""

from __future__ import annotations

import json
import re
import unicodedata
from pathlib import Path


def _normalize(text: str) -> str:
    decomposed = unicodedata.normalize("NFKD", text)
    stripped = "".join(ch for ch in decomposed if not unicodedata.combining(ch))
    return stripped.casefold()


class LeakLexicon:
    """Maps each diagnosis label to the terms that would leak it."""

    def __init__(self, terms_by_label: dict[str, set[str] | list[str]]):
        self._patterns: dict[str, list[tuple[str, re.Pattern]]] = {}
        for label, terms in terms_by_label.items():
            all_terms = {label, *terms}
            compiled = []
            for term in sorted(all_terms):
                norm = _normalize(term)
                pattern = re.compile(r"\b" + re.escape(norm).replace(r"\ ", r"\s+") + r"\b")
                compiled.append((term, pattern))
            self._patterns[_normalize(label)] = compiled

    def labels(self) -> list[str]:
        return sorted(self._patterns)

    def terms_for(self, label: str) -> list[str]:
        key = _normalize(label)
        if key not in self._patterns:
            return [label]
        return [term for term, _ in self._patterns[key]]

    def find_violations(self, text: str, label: str) -> list[str]:
        """Terms of the given label occurring anywhere in the text."""
        norm_text = _normalize(text)
        key = _normalize(label)
        patterns = self._patterns.get(key)
        if patterns is None:
            # unknown label: fall back to the label string itself
            pattern = re.compile(r"\b" + re.escape(key).replace(r"\ ", r"\s+") + r"\b")
            return [label] if pattern.search(norm_text) else []
        return [term for term, pattern in patterns if pattern.search(norm_text)]

    def mentions_label(self, text: str, label: str) -> bool:
        return bool(self.find_violations(text, label))

    @classmethod
    def from_json(cls, path: str | Path) -> "LeakLexicon":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls({label: set(terms) for label, terms in data.items()})


DEFAULT_LEXICON = LeakLexicon(
    {
        "psoriasis": {"psoriatic", "plaque psoriasis"},
        "eczema": {"eczematous", "atopic dermatitis"},
        "melanoma": {"malignant melanoma", "melanocytic malignancy"},
        "basal cell carcinoma": {"bcc", "basalioma"},
        "rosacea": {"acne rosacea"},
        "acne": {"acne vulgaris", "comedonal acne"},
        "tinea": {"ringworm", "dermatophytosis"},
        "urticaria": {"hives"},
    }
)
