"""Four-block output template: segmentation, compliance, result injection."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass

from .errors import DuplicateTag, MissingTag, OutOfOrder, PrefixNotPaused, UnclosedTag

log = logging.getLogger(__name__)

TAGS = ("think", "search", "result", "answer")
REQUIRED = ("think", "search")

_TAG = re.compile(r"<(/?)(think|search|result|answer)>")


@dataclass(frozen=True)
class Span:
    """One tagged block; ``start``/``end`` include the tag literals."""

    start: int
    end: int
    body_start: int
    body_end: int
    body: str

    def to_dict(self) -> dict:
        return {
            "start": self.start,
            "end": self.end,
            "body_start": self.body_start,
            "body_end": self.body_end,
            "body": self.body,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Span:
        return cls(d["start"], d["end"], d["body_start"], d["body_end"], d["body"])


@dataclass(frozen=True)
class Segments:
    think: Span
    search: Span
    result: Span | None
    answer: Span | None
    length: int

    def spans(self) -> dict[str, Span]:
        return {t: s for t in TAGS if (s := getattr(self, t)) is not None}

    @property
    def complete(self) -> bool:
        return self.result is not None and self.answer is not None

    def to_dict(self) -> dict:
        d: dict = {}
        for tag in TAGS:
            span = getattr(self, tag)
            d[tag] = span.to_dict() if span else None
        d["length"] = self.length
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Segments:
        def span(key):
            return Span.from_dict(d[key]) if d.get(key) else None

        return cls(span("think"), span("search"), span("result"), span("answer"),
                   d["length"])


def segment_output(text: str) -> Segments:
    """Split ``text`` into its tagged blocks.

    ``think`` and ``search`` are required; ``result`` and ``answer`` may be
    absent (before injection or completion). Tags are literal, case-sensitive
    and may not nest.
    """
    found: dict[str, Span] = {}
    open_tag: str | None = None
    open_at = body_at = 0
    last_rank = -1

    for m in _TAG.finditer(text):
        closing, tag = m.group(1) == "/", m.group(2)
        if not closing:
            if open_tag is not None:
                raise UnclosedTag(f"<{open_tag}> not closed before <{tag}>", open_tag)
            if tag in found:
                raise DuplicateTag(f"<{tag}> appears more than once", tag)
            rank = TAGS.index(tag)
            if rank < last_rank:
                raise OutOfOrder(f"<{tag}> after <{TAGS[last_rank]}>", tag)
            last_rank = rank
            open_tag, open_at, body_at = tag, m.start(), m.end()
        elif open_tag is None:
            if tag in found:
                raise DuplicateTag(f"extra </{tag}>", tag)
            raise MissingTag(f"</{tag}> without <{tag}>", tag)
        elif open_tag != tag:
            raise UnclosedTag(f"<{open_tag}> closed by </{tag}>", open_tag)
        else:
            found[tag] = Span(open_at, m.end(), body_at, m.start(), text[body_at:m.start()])
            open_tag = None

    if open_tag is not None:
        raise UnclosedTag(f"<{open_tag}> never closed", open_tag)
    for tag in REQUIRED:
        if tag not in found:
            raise MissingTag(f"no <{tag}> block", tag)

    pos = 0
    for span in sorted(found.values(), key=lambda s: s.start):
        if text[pos:span.start].strip():
            log.warning("stray text between blocks at offset %d", pos)
        pos = span.end
    if text[pos:].strip():
        log.warning("stray text after last block at offset %d", pos)

    return Segments(
        think=found["think"],
        search=found["search"],
        result=found.get("result"),
        answer=found.get("answer"),
        length=len(text),
    )


def check_format(text: str) -> int:
    """1 iff all four blocks appear exactly once, in order; never raises."""
    try:
        return int(segment_output(text).complete)
    except Exception:
        return 0


def extract_block(text: str, tag: str, last: bool = False) -> str | None:
    """Body of the first (or last) complete ``<tag>`` block, without validation."""
    bodies = re.findall(rf"<{tag}>(.*?)</{tag}>", text, flags=re.DOTALL)
    if not bodies:
        return None
    return bodies[-1] if last else bodies[0]


def inject_result(prefix: str, result_block: str) -> str:
    """Append the result block to a generation paused at ``</search>``."""
    if not prefix.rstrip().endswith("</search>"):
        raise PrefixNotPaused("generation is not paused at </search>")
    return f"{prefix}\n<result>{result_block}</result>\n"
