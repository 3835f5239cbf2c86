"""Answer-text normalization.

Attribution tables, answer matching, and distillation all key on the same
canonical form, so two surface variants of one answer never split mass.
"""

from __future__ import annotations

import sys
import unicodedata

# Canonical abstention answer. Deterministic readers emit it verbatim when no
# passage supports an answer; it survives normalization unchanged.
ABSTAIN = "unknown"


def normalize_answer(text: str) -> str:
    """Canonicalize an answer string.

    Compatibility-decomposes Unicode, drops combining marks and punctuation,
    lower-cases, and collapses runs of whitespace. Idempotent by construction:
    every transform maps the output alphabet onto itself.
    """
    decomposed = unicodedata.normalize("NFKD", text)
    kept = []
    for ch in decomposed:
        if unicodedata.combining(ch):
            continue
        cat = unicodedata.category(ch)
        if cat.startswith("P"):
            continue
        kept.append(ch.lower())
    return sys.intern(" ".join("".join(kept).split()))
