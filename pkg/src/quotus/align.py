"""Approximate alignment of article quotes to transcript positions.

A quote must be consumed in full by the alignment while the transcript side
is free at both ends, so the dynamic program scores the quote against every
contiguous transcript window at once.  Matching tokens score
``match_score``, substitutions ``mismatch_penalty``, and insertions or
deletions ``gap_penalty``; the final score is normalized by quote length.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .corpus import Article, Tokenizer, Transcript

QUOTE_CHARS = ('"', "“", "”")

SECONDS_PER_DAY = 86400


@dataclass(frozen=True)
class AlignmentParams:
    """Thresholds and scoring weights for quote alignment.

    ``sim_threshold`` is read as an edit budget: a quote of n words may use
    at most ceil(|sim_threshold| * n) unit-cost edits, i.e. the raw span
    score must reach floor(n * sim_threshold).  For quote lengths where
    n * sim_threshold is an integer this is exactly "normalized score >=
    sim_threshold".
    """

    min_quote_words: int = 6
    max_lag_seconds: int = 7 * SECONDS_PER_DAY
    sim_threshold: float = -0.4
    gap_penalty: float = -1.0
    mismatch_penalty: float = -1.0
    match_score: float = 0.0

    def __post_init__(self):
        if self.min_quote_words < 1:
            raise ValueError("min_quote_words must be >= 1")
        if self.max_lag_seconds <= 0:
            raise ValueError("max_lag_seconds must be positive")
        if self.sim_threshold > 0:
            raise ValueError("sim_threshold must be <= 0")
        if self.gap_penalty > 0 or self.mismatch_penalty > 0:
            raise ValueError("penalties must be <= 0")
        if self.match_score < 0:
            raise ValueError("match_score must be >= 0")

    def raw_threshold(self, quote_len: int) -> float:
        """Minimum raw (unnormalized) score accepted for a quote of this length."""
        return math.floor(quote_len * self.sim_threshold + 1e-9)


@dataclass(frozen=True)
class QuoteOccurrence:
    """A quoted span found in one article."""

    id: str
    article_id: str
    outlet_id: str
    article_timestamp: int
    text: str
    tokens: tuple[str, ...]
    article_token_span: tuple[int, int] = (0, 0)


@dataclass(frozen=True)
class QuoteMatch:
    """An occurrence aligned to a transcript span (global token indices)."""

    occurrence_id: str
    transcript_id: str
    span: tuple[int, int]
    score: float


@dataclass(frozen=True)
class MatchRecord:
    """Denormalized row of the matches output file."""

    occurrence_id: str
    article_id: str
    outlet_id: str
    transcript_id: str
    span_start: int
    span_end: int
    score: float
    quote_text: str

    def to_record(self) -> dict:
        return {
            "occurrence_id": self.occurrence_id,
            "article_id": self.article_id,
            "outlet_id": self.outlet_id,
            "transcript_id": self.transcript_id,
            "span_start": self.span_start,
            "span_end": self.span_end,
            "score": self.score,
            "quote_text": self.quote_text,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "MatchRecord":
        return cls(
            occurrence_id=rec["occurrence_id"],
            article_id=rec["article_id"],
            outlet_id=rec["outlet_id"],
            transcript_id=rec["transcript_id"],
            span_start=int(rec["span_start"]),
            span_end=int(rec["span_end"]),
            score=float(rec["score"]),
            quote_text=rec["quote_text"],
        )

    @property
    def span(self) -> tuple[int, int]:
        return (self.span_start, self.span_end)


def extract_quotes(
    article: Article,
    tokenizer: Tokenizer | None = None,
    params: AlignmentParams | None = None,
) -> list[QuoteOccurrence]:
    """Extract double-quoted spans of at least ``min_quote_words`` tokens.

    Straight and typographic double quotes are treated interchangeably as
    delimiters, paired in document order.  An unbalanced trailing delimiter
    leaves the tail unquoted and emits a warning.
    """
    tok = tokenizer or Tokenizer()
    params = params or AlignmentParams()
    body = article.body
    positions = [i for i, ch in enumerate(body) if ch in QUOTE_CHARS]
    if len(positions) % 2 == 1:
        warnings.warn(
            f"unbalanced quote character in article {article.id}; tail ignored",
            stacklevel=2,
        )
        positions = positions[:-1]
    occurrences: list[QuoteOccurrence] = []
    counter = 0
    for open_pos, close_pos in zip(positions[0::2], positions[1::2]):
        text = body[open_pos + 1 : close_pos]
        tokens = tuple(tok.tokenize(text))
        if len(tokens) < params.min_quote_words:
            continue
        start_tok = len(tok.tokenize(body[:open_pos]))
        occurrences.append(
            QuoteOccurrence(
                id=f"{article.id}#q{counter}",
                article_id=article.id,
                outlet_id=article.outlet_id,
                article_timestamp=article.timestamp,
                text=text,
                tokens=tokens,
                article_token_span=(start_tok, start_tok + len(tokens)),
            )
        )
        counter += 1
    return occurrences


def _token_codes(quote: Sequence[str], tr_tokens: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    # Tokens absent from the quote can never match, so they share one code.
    codes = {t: i for i, t in enumerate(dict.fromkeys(quote))}
    q = np.fromiter((codes[t] for t in quote), dtype=np.int64, count=len(quote))
    tr = np.fromiter(
        (codes.get(t, -1) for t in tr_tokens), dtype=np.int64, count=len(tr_tokens)
    )
    return q, tr


def _best_raw_upper_bound(
    q: Sequence[str], tr_tokens: Sequence[str], p: AlignmentParams
) -> float:
    """Best raw DP score, zero-width spans included (upper bound on the answer)."""
    n, m = len(q), len(tr_tokens)
    qc, tc = _token_codes(q, tr_tokens)
    gap, mis, mat = p.gap_penalty, p.mismatch_penalty, p.match_score
    offsets = gap * np.arange(m + 1)
    row = np.zeros(m + 1)
    for i in range(1, n + 1):
        sub = np.where(tc == qc[i - 1], mat, mis)
        cand = np.empty(m + 1)
        cand[0] = i * gap
        np.maximum(row[:-1] + sub, row[1:] + gap, out=cand[1:])
        # Horizontal gap chain as a prefix max: row[j] = max_k cand[k] + (j-k)*gap.
        cand -= offsets
        np.maximum.accumulate(cand, out=cand)
        row = cand + offsets
    return float(row.max())


def _align_span_exact(
    q: Sequence[str], tr_tokens: Sequence[str], p: AlignmentParams
) -> tuple[float, int, int]:
    """Exact DP over non-empty spans with deterministic tie-breaking.

    Returns ``(raw_score, start, end)`` maximizing the raw score, breaking
    ties toward the earliest start and then the shortest span.  Cells track
    the best alignment that consumes at least one transcript token; paths
    consuming none (score i*gap, "span" starting at the current column) are
    folded in only as predecessors, never as results.
    """
    n, m = len(q), len(tr_tokens)
    gap, mis, mat = p.gap_penalty, p.mismatch_penalty, p.match_score
    neg_inf = float("-inf")

    # Row 0: non-empty paths consume leading transcript tokens as gaps.
    # With a strictly negative gap penalty these never win, but at
    # gap_penalty == 0 they tie and the earliest-start rule needs them.
    ne_score = [neg_inf] * (m + 1)
    ne_start = [0] * (m + 1)
    for j in range(1, m + 1):
        hs, ht = ne_score[j - 1], ne_start[j - 1]
        if 0.0 > hs:
            hs, ht = 0.0, j - 1
        ne_score[j] = hs + gap
        ne_start[j] = ht
    best = (neg_inf, m + 1, m + 1)
    for i in range(1, n + 1):
        prev_score = ne_score
        prev_start = ne_start
        empty_prev = (i - 1) * gap
        ne_score = [neg_inf] * (m + 1)
        ne_start = [0] * (m + 1)
        cur_empty = i * gap
        qi = q[i - 1]
        for j in range(1, m + 1):
            # Best-overall predecessors (non-empty record or the empty path).
            ds, dt = prev_score[j - 1], prev_start[j - 1]
            if empty_prev > ds:
                ds, dt = empty_prev, j - 1
            sub = mat if tr_tokens[j - 1] == qi else mis
            s = ds + sub
            st = dt
            hs, ht = ne_score[j - 1], ne_start[j - 1]
            if cur_empty > hs:
                hs, ht = cur_empty, j - 1
            h = hs + gap
            if h > s or (h == s and ht < st):
                s, st = h, ht
            v = prev_score[j] + gap
            if v > s or (v == s and prev_start[j] < st):
                s, st = v, prev_start[j]
            ne_score[j] = s
            ne_start[j] = st
        if i == n:
            for j in range(1, m + 1):
                s = ne_score[j]
                if s == neg_inf:
                    continue
                key = (-s, ne_start[j], j)
                if key < (-best[0], best[1], best[2]):
                    best = (s, ne_start[j], j)
    return best


def substring_align(
    quote_tokens: Sequence[str],
    transcript: Transcript,
    params: AlignmentParams | None = None,
) -> Optional[tuple[tuple[int, int], float]]:
    """Align a quote inside a transcript; return ``(span, normalized_score)``.

    Returns None when the best span falls below the acceptance threshold
    (see ``AlignmentParams.raw_threshold``) or the transcript is empty.
    """
    params = params or AlignmentParams()
    n = len(quote_tokens)
    if n == 0 or transcript.num_tokens == 0:
        return None
    raw_min = params.raw_threshold(n)
    tr_tokens = transcript.tokens
    if _best_raw_upper_bound(quote_tokens, tr_tokens, params) < raw_min:
        return None
    raw, start, end = _align_span_exact(quote_tokens, tr_tokens, params)
    if raw < raw_min:
        return None
    return (start, end), raw / n


def match_occurrence(
    occurrence: QuoteOccurrence,
    transcripts: Sequence[Transcript],
    params: AlignmentParams | None = None,
    exhaustive: bool = False,
) -> Optional[QuoteMatch]:
    """Match one occurrence against candidate transcripts.

    Candidates are transcripts dated within ``max_lag_seconds`` before the
    article, tried newest first.  By default the first accepted alignment
    wins; with ``exhaustive=True`` every candidate is scored and the best
    normalized score wins (ties toward the newest transcript).
    """
    params = params or AlignmentParams()
    ats = occurrence.article_timestamp
    lo = ats - params.max_lag_seconds
    candidates = [t for t in transcripts if lo <= t.timestamp <= ats]
    candidates.sort(key=lambda t: (t.timestamp, t.id), reverse=True)
    best: Optional[QuoteMatch] = None
    for tr in candidates:
        hit = substring_align(occurrence.tokens, tr, params)
        if hit is None:
            continue
        span, score = hit
        match = QuoteMatch(occurrence.id, tr.id, span, score)
        if not exhaustive:
            return match
        if best is None or score > best.score:
            best = match
    return best


def match_article_quotes(
    articles: Sequence[Article],
    transcripts: Sequence[Transcript],
    tokenizer: Tokenizer | None = None,
    params: AlignmentParams | None = None,
    exhaustive: bool = False,
) -> list[MatchRecord]:
    """Extract and match quotes for a batch of articles.

    Output is sorted by occurrence id, so it is independent of the
    processing order of the articles.
    """
    tok = tokenizer or Tokenizer()
    params = params or AlignmentParams()
    records: list[MatchRecord] = []
    for article in articles:
        for occ in extract_quotes(article, tok, params):
            m = match_occurrence(occ, transcripts, params, exhaustive=exhaustive)
            if m is None:
                continue
            records.append(
                MatchRecord(
                    occurrence_id=occ.id,
                    article_id=occ.article_id,
                    outlet_id=occ.outlet_id,
                    transcript_id=m.transcript_id,
                    span_start=m.span[0],
                    span_end=m.span[1],
                    score=m.score,
                    quote_text=occ.text,
                )
            )
    records.sort(key=lambda r: r.occurrence_id)
    return records
