"""Wire-copy deduplication and transcript-anchored quote clustering."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .align import MatchRecord
from .corpus import Article

DEDUP_WINDOW_SECONDS = 14 * 86400
DEDUP_MIN_LENGTH_RATIO = 0.7

_QGRAM = 4


@dataclass(frozen=True)
class DedupParams:
    """Near-duplicate threshold on length-normalized Levenshtein distance."""

    max_norm_distance: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.max_norm_distance <= 1.0:
            raise ValueError("max_norm_distance must be in [0, 1]")


@dataclass(frozen=True)
class QuoteCluster:
    """Equivalence class of matches whose transcript spans chain-overlap."""

    id: str
    transcript_id: str
    span: tuple[int, int]
    members: tuple[str, ...]


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def levenshtein(a: str, b: str, cutoff: Optional[int] = None) -> int:
    """Character-level edit distance; values above ``cutoff`` saturate to cutoff+1."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    if cutoff is not None and len(a) - len(b) > cutoff:
        return cutoff + 1
    bv = np.frombuffer(b.encode("utf-32-le"), dtype="<u4")
    off = np.arange(len(b) + 1, dtype=np.int64)
    row = off.copy()
    for i, ch in enumerate(a, start=1):
        code = ord(ch)
        sub = row[:-1] + (bv != code)
        cand = np.minimum(sub, row[1:] + 1)
        cand = np.concatenate(([i], cand))
        # Insertion chain as a prefix min: row[j] = min_k cand[k] + (j - k).
        np.minimum.accumulate(cand - off, out=cand)
        row = cand + off
        if cutoff is not None and row.min() > cutoff:
            return cutoff + 1
    return int(row[-1])


def _qgram_profile(text: str, q: int = _QGRAM) -> Counter:
    if len(text) < q:
        return Counter({text: 1})
    return Counter(text[i : i + q] for i in range(len(text) - q + 1))


def _qgram_lower_bound(pa: Counter, pb: Counter, q: int = _QGRAM) -> float:
    # Each edit perturbs at most q grams on each side.
    diff = sum((pa - pb).values()) + sum((pb - pa).values())
    return diff / (2 * q)


def dedup_articles(
    articles: Sequence[Article],
    params: DedupParams | None = None,
    window_seconds: int = DEDUP_WINDOW_SECONDS,
) -> tuple[list[Article], list[tuple[str, str]]]:
    """Drop near-duplicate article bodies, keeping the earliest of each group.

    Two articles are duplicates when the Levenshtein distance between their
    bodies, divided by the longer body length, is at most
    ``max_norm_distance``; the relation is closed transitively.  Only pairs
    published within ``window_seconds`` of each other and with a body-length
    ratio compatible with the threshold are compared.

    Returns ``(kept, dropped)`` with dropped as (dropped_id, kept_id) pairs.
    """
    params = params or DedupParams()
    tau = params.max_norm_distance
    arts = sorted(articles, key=lambda a: (a.timestamp, a.id))
    n = len(arts)
    uf = UnionFind(n)
    ratio_bound = min(DEDUP_MIN_LENGTH_RATIO, 1.0 - tau)
    profiles = [_qgram_profile(a.body) for a in arts]
    lengths = [len(a.body) for a in arts]
    for i in range(n):
        for j in range(i + 1, n):
            if arts[j].timestamp - arts[i].timestamp > window_seconds:
                break
            la, lb = lengths[i], lengths[j]
            longer = max(la, lb)
            if min(la, lb) < ratio_bound * longer:
                continue
            # 1e-9 guards the float product at exact-boundary cutoffs.
            cutoff = int(tau * longer + 1e-9)
            if _qgram_lower_bound(profiles[i], profiles[j]) > cutoff:
                continue
            if levenshtein(arts[i].body, arts[j].body, cutoff=cutoff) <= cutoff:
                uf.union(i, j)
    groups: dict[int, list[int]] = defaultdict(list)
    for i in range(n):
        groups[uf.find(i)].append(i)
    kept: list[Article] = []
    dropped: list[tuple[str, str]] = []
    for root in sorted(groups):
        members = groups[root]
        # arts is sorted by (timestamp, id), so the first member survives.
        keeper = arts[members[0]]
        kept.append(keeper)
        for idx in members[1:]:
            dropped.append((arts[idx].id, keeper.id))
    kept.sort(key=lambda a: (a.timestamp, a.id))
    dropped.sort()
    return kept, dropped


def cluster_matches(
    matches: Sequence[MatchRecord], min_overlap: int = 5
) -> list[QuoteCluster]:
    """Group matches whose spans in the same transcript share >= min_overlap tokens.

    Clusters are connected components of the overlap relation; each cluster
    span is the union of its members' spans, and the cluster id is derived
    from ``(transcript_id, span)``.
    """
    by_transcript: dict[str, list[MatchRecord]] = defaultdict(list)
    for m in matches:
        by_transcript[m.transcript_id].append(m)
    clusters: list[QuoteCluster] = []
    for tid in sorted(by_transcript):
        group = sorted(by_transcript[tid], key=lambda m: (m.span_start, m.span_end, m.occurrence_id))
        uf = UnionFind(len(group))
        for i, mi in enumerate(group):
            for j in range(i + 1, len(group)):
                mj = group[j]
                if mj.span_start > mi.span_end - min_overlap:
                    break
                overlap = min(mi.span_end, mj.span_end) - max(mi.span_start, mj.span_start)
                if overlap >= min_overlap:
                    uf.union(i, j)
        comp: dict[int, list[MatchRecord]] = defaultdict(list)
        for i, m in enumerate(group):
            comp[uf.find(i)].append(m)
        for root in sorted(comp):
            members = comp[root]
            start = min(m.span_start for m in members)
            end = max(m.span_end for m in members)
            clusters.append(
                QuoteCluster(
                    id=f"{tid}:{start}-{end}",
                    transcript_id=tid,
                    span=(start, end),
                    members=tuple(sorted(m.occurrence_id for m in members)),
                )
            )
    clusters.sort(key=lambda c: c.id)
    return clusters


def earliest_edges(
    clusters: Sequence[QuoteCluster],
    matches: Sequence[MatchRecord],
    articles: Iterable[Article],
) -> list[tuple[str, str, int]]:
    """One (outlet_id, cluster_id, timestamp) edge per citing outlet.

    When an outlet cites the same cluster from several articles only the
    chronologically earliest citation is kept.
    """
    ts_by_article: Mapping[str, int] = {a.id: a.timestamp for a in articles}
    cluster_of: dict[str, str] = {}
    for c in clusters:
        for occ_id in c.members:
            cluster_of[occ_id] = c.id
    earliest: dict[tuple[str, str], int] = {}
    for m in matches:
        cid = cluster_of.get(m.occurrence_id)
        if cid is None:
            continue
        ts = ts_by_article[m.article_id]
        key = (m.outlet_id, cid)
        if key not in earliest or ts < earliest[key]:
            earliest[key] = ts
    return [(o, c, t) for (o, c), t in sorted(earliest.items())]


def cluster_to_record(c: QuoteCluster) -> dict:
    return {
        "cluster_id": c.id,
        "transcript_id": c.transcript_id,
        "span_start": c.span[0],
        "span_end": c.span[1],
        "member_occurrence_ids": list(c.members),
    }


def cluster_from_record(rec: dict) -> QuoteCluster:
    return QuoteCluster(
        id=rec["cluster_id"],
        transcript_id=rec["transcript_id"],
        span=(int(rec["span_start"]), int(rec["span_end"])),
        members=tuple(rec["member_occurrence_ids"]),
    )
