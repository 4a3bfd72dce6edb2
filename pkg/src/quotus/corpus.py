"""Corpus ingestion: transcripts, articles, and outlet metadata.

Input files are line-delimited JSON, one record per line:

- transcripts: ``{id, timestamp, segments: [{speaker, text}]}``
- articles:    ``{id, outlet_id, timestamp, title, url, body}``
- outlets:     ``{id, domain, label}`` with label in {dC, sC, sL, dL, unlabeled}

Timestamps are ISO-8601; they are normalized to UTC epoch seconds in memory.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional, Sequence

from . import jsonl

OUTLET_LABELS = ("dC", "sC", "sL", "dL", "unlabeled")

_TOKEN_RE = re.compile(r"\w+(?:'\w+)*")


class CorpusError(ValueError):
    """Raised for malformed or inconsistent corpus input."""


@dataclass(frozen=True)
class Tokenizer:
    """Deterministic word tokenizer.

    With the default rules, text is lowercased and punctuation is stripped,
    except apostrophes inside a word ("don't" stays one token).  Typographic
    apostrophes are normalized to straight ones first so contraction tests
    see a single spelling.
    """

    lowercase: bool = True
    strip_punctuation: bool = True

    def tokenize(self, text: str) -> list[str]:
        if self.lowercase:
            text = text.lower()
        text = text.replace("’", "'")
        if self.strip_punctuation:
            return _TOKEN_RE.findall(text)
        return text.split()


def tokenize(text: str, tokenizer: Tokenizer | None = None) -> list[str]:
    """Tokenize ``text`` with ``tokenizer`` (default rules if omitted)."""
    return (tokenizer or Tokenizer()).tokenize(text)


@dataclass(frozen=True)
class Segment:
    """One transcript paragraph with its global token span.

    Segments excluded by a speaker filter keep an empty span
    (``token_start == token_end``) so downstream spans remain traceable
    to the original transcript layout.
    """

    speaker: str
    text: str
    tokens: tuple[str, ...]
    token_start: int
    token_end: int


@dataclass(frozen=True)
class Transcript:
    id: str
    timestamp: int
    segments: tuple[Segment, ...]
    tokens: tuple[str, ...] = field(repr=False)

    @property
    def num_tokens(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Article:
    id: str
    outlet_id: str
    timestamp: int
    title: str
    url: str
    body: str


@dataclass(frozen=True)
class Outlet:
    id: str
    domain: str
    label: str = "unlabeled"


def parse_timestamp(value: str) -> int:
    """Parse an ISO-8601 timestamp to UTC epoch seconds."""
    try:
        dt = datetime.fromisoformat(value.replace("Z", "+00:00"))
    except (ValueError, AttributeError) as exc:
        raise CorpusError(f"invalid timestamp {value!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def format_timestamp(seconds: int) -> str:
    return datetime.fromtimestamp(seconds, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _require(rec: dict, name: str, lineno: int):
    if name not in rec:
        raise CorpusError(f"missing field {name} at line {lineno}")
    return rec[name]


def load_transcripts(
    path: str | Path,
    speaker_filter: Optional[str] = None,
    tokenizer: Tokenizer | None = None,
) -> list[Transcript]:
    """Load transcripts, sorted by timestamp.

    When ``speaker_filter`` is given, only segments whose speaker equals the
    filter are tokenized; other segments are kept as zero-width placeholders.
    """
    tok = tokenizer or Tokenizer()
    transcripts: list[Transcript] = []
    seen: set[str] = set()
    for lineno, rec in jsonl.read_records(path):
        tid = str(_require(rec, "id", lineno))
        if tid in seen:
            raise CorpusError(f"duplicate transcript id {tid!r} at line {lineno}")
        seen.add(tid)
        ts = parse_timestamp(str(_require(rec, "timestamp", lineno)))
        raw_segments = _require(rec, "segments", lineno)
        if not isinstance(raw_segments, list):
            raise CorpusError(f"malformed record at line {lineno}: segments must be a list")
        segments: list[Segment] = []
        all_tokens: list[str] = []
        cursor = 0
        for seg in raw_segments:
            if not isinstance(seg, dict) or "speaker" not in seg or "text" not in seg:
                raise CorpusError(
                    f"malformed record at line {lineno}: segment needs speaker and text"
                )
            speaker = str(seg["speaker"])
            text = str(seg["text"])
            if speaker_filter is None or speaker == speaker_filter:
                seg_tokens = tuple(tok.tokenize(text))
            else:
                seg_tokens = ()
            segments.append(
                Segment(speaker, text, seg_tokens, cursor, cursor + len(seg_tokens))
            )
            all_tokens.extend(seg_tokens)
            cursor += len(seg_tokens)
        transcripts.append(Transcript(tid, ts, tuple(segments), tuple(all_tokens)))
    transcripts.sort(key=lambda t: (t.timestamp, t.id))
    return transcripts


def load_outlets(path: str | Path) -> list[Outlet]:
    outlets: list[Outlet] = []
    seen_ids: set[str] = set()
    seen_domains: set[str] = set()
    for lineno, rec in jsonl.read_records(path):
        oid = str(_require(rec, "id", lineno))
        domain = str(_require(rec, "domain", lineno))
        label = str(rec.get("label", "unlabeled"))
        if oid in seen_ids:
            raise CorpusError(f"duplicate outlet id {oid!r} at line {lineno}")
        if not domain:
            raise CorpusError(f"empty domain at line {lineno}")
        if domain in seen_domains:
            raise CorpusError(f"duplicate outlet domain {domain!r} at line {lineno}")
        if label not in OUTLET_LABELS:
            raise CorpusError(
                f"invalid label {label!r} at line {lineno}; expected one of {OUTLET_LABELS}"
            )
        seen_ids.add(oid)
        seen_domains.add(domain)
        outlets.append(Outlet(oid, domain, label))
    return outlets


def load_articles(
    path: str | Path,
    keyword_filter: Optional[str] = None,
    outlets: Optional[Sequence[Outlet]] = None,
) -> list[Article]:
    """Load articles, sorted by timestamp.

    With a ``keyword_filter``, articles whose title and body both lack the
    (case-sensitive) substring are dropped.  When ``outlets`` is given,
    unknown ``outlet_id`` references raise an error listing the offending ids.
    """
    articles: list[Article] = []
    seen: set[str] = set()
    for lineno, rec in jsonl.read_records(path):
        aid = str(_require(rec, "id", lineno))
        if aid in seen:
            raise CorpusError(f"duplicate article id {aid!r} at line {lineno}")
        seen.add(aid)
        body = str(_require(rec, "body", lineno))
        if not body:
            raise CorpusError(f"empty body at line {lineno}")
        article = Article(
            id=aid,
            outlet_id=str(_require(rec, "outlet_id", lineno)),
            timestamp=parse_timestamp(str(_require(rec, "timestamp", lineno))),
            title=str(_require(rec, "title", lineno)),
            url=str(_require(rec, "url", lineno)),
            body=body,
        )
        articles.append(article)
    if outlets is not None:
        known = {o.id for o in outlets}
        unknown = sorted({a.outlet_id for a in articles} - known)
        if unknown:
            raise CorpusError(f"unknown outlet ids: {', '.join(unknown)}")
    if keyword_filter is not None:
        articles = filter_articles(articles, keyword_filter)
    articles.sort(key=lambda a: (a.timestamp, a.id))
    return articles


def filter_articles(articles: Iterable[Article], keyword: str) -> list[Article]:
    """Keep articles whose title or body contains ``keyword`` (case-sensitive)."""
    return [a for a in articles if keyword in a.body or keyword in a.title]


def transcript_to_record(t: Transcript) -> dict:
    return {
        "id": t.id,
        "timestamp": format_timestamp(t.timestamp),
        "segments": [{"speaker": s.speaker, "text": s.text} for s in t.segments],
    }


def article_to_record(a: Article) -> dict:
    return {
        "id": a.id,
        "outlet_id": a.outlet_id,
        "timestamp": format_timestamp(a.timestamp),
        "title": a.title,
        "url": a.url,
        "body": a.body,
    }


def outlet_to_record(o: Outlet) -> dict:
    return {"id": o.id, "domain": o.domain, "label": o.label}
