"""Mapping free-form VLM replies onto the closed candidate set."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

OK = "ok"
AMBIGUOUS = "ambiguous"
NO_MATCH = "no_match"

_STRIP = " \t\r\n\"'`.,;:!?()[]{}*"


def normalize(text: str) -> str:
    """Case-fold and treat underscores, hyphens and whitespace runs as one space."""
    text = text.strip().strip(_STRIP).casefold()
    return re.sub(r"[\s_\-]+", " ", text).strip()


@dataclass(frozen=True)
class ParseResult:
    label: str | None
    status: str

    @property
    def ok(self) -> bool:
        return self.status == OK


def parse_label(raw_text: str, candidates: Sequence[str]) -> ParseResult:
    """Exact normalized match first, then a unique whole-word occurrence.

    An occurrence that lies inside the occurrence of a longer candidate (for
    example ``strawberry`` inside ``resin_replica_strawberry``) does not count.
    """
    norm = {c: normalize(c) for c in candidates}
    text = normalize(raw_text or "")
    exact = [c for c, n in norm.items() if n == text]
    if len(exact) == 1:
        return ParseResult(exact[0], OK)

    spans: dict[str, list[tuple[int, int]]] = {}
    for c, n in norm.items():
        if not n:
            continue
        pat = re.compile(r"(?<![a-z0-9])" + re.escape(n) + r"(?![a-z0-9])")
        found = [m.span() for m in pat.finditer(text)]
        if found:
            spans[c] = found

    def covered(span, by):
        return any(s <= span[0] and span[1] <= e and (e - s) > (span[1] - span[0]) for s, e in by)

    hits = []
    for c, found in spans.items():
        others = [sp for o, sps in spans.items() if o != c for sp in sps]
        if any(not covered(sp, others) for sp in found):
            hits.append(c)
    if len(hits) == 1:
        return ParseResult(hits[0], OK)
    return ParseResult(None, AMBIGUOUS if hits else NO_MATCH)
