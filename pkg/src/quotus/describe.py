"""Per-outlet descriptive statistics and category aggregates.

Four statistics per outlet: the fraction of its articles mentioning a
keyword, its mean reaction rank on widely-cited quote clusters, the mean
article word count, and the mean fraction of article words covered by
matched quotes.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .corpus import Article, Tokenizer


class DescribeError(ValueError):
    pass


@dataclass(frozen=True)
class OutletStats:
    outlet_id: str
    mention_fraction: float
    mean_article_words: float
    mean_quoted_fraction: float
    reaction_rank_mean: Optional[float]

    def to_record(self) -> dict:
        return {
            "outlet_id": self.outlet_id,
            "mention_fraction": self.mention_fraction,
            "mean_article_words": self.mean_article_words,
            "mean_quoted_fraction": self.mean_quoted_fraction,
            "reaction_rank_mean": self.reaction_rank_mean,
        }


def mention_fraction(articles: Sequence[Article], keyword: str) -> float:
    """Fraction of articles whose title or body contains ``keyword``.

    The empty keyword matches everything, so it yields 1.0.
    """
    if not articles:
        raise DescribeError("outlet has no articles")
    hits = sum(1 for a in articles if keyword in a.body or keyword in a.title)
    return hits / len(articles)


def reaction_ranks(
    edges: Sequence[tuple[str, str, int]],
    min_citers: int = 5,
    outlet_subset: Optional[Iterable[str]] = None,
) -> dict[str, float]:
    """Mean normalized citation rank per outlet over well-cited clusters.

    For every cluster cited by at least ``min_citers`` outlets (from
    ``outlet_subset`` when given), citers sorted by timestamp receive ranks
    k/(n-1) from 0 (earliest) to 1 (latest); tied timestamps share the mean
    of their positions' ranks.  Outlets with no qualifying cluster are
    omitted.
    """
    subset = set(outlet_subset) if outlet_subset is not None else None
    by_cluster: dict[str, list[tuple[int, str]]] = defaultdict(list)
    for outlet_id, cluster_id, ts in edges:
        if subset is None or outlet_id in subset:
            by_cluster[cluster_id].append((ts, outlet_id))
    totals: dict[str, float] = defaultdict(float)
    counts: dict[str, int] = defaultdict(int)
    for cluster_id in sorted(by_cluster):
        citers = sorted(by_cluster[cluster_id])
        n = len(citers)
        if n < min_citers:
            continue
        if n == 1:
            totals[citers[0][1]] += 0.0
            counts[citers[0][1]] += 1
            continue
        pos = 0
        while pos < n:
            end = pos
            while end < n and citers[end][0] == citers[pos][0]:
                end += 1
            rank = sum(k / (n - 1) for k in range(pos, end)) / (end - pos)
            for k in range(pos, end):
                totals[citers[k][1]] += rank
                counts[citers[k][1]] += 1
            pos = end
    return {o: totals[o] / counts[o] for o in sorted(counts)}


def quoted_fraction(
    article: Article,
    matched_spans: Iterable[tuple[int, int]],
    tokenizer: Tokenizer | None = None,
) -> float:
    """Fraction of article tokens covered by matched quote spans.

    Spans are article-side token intervals; overlaps are merged before
    counting.
    """
    tok = tokenizer or Tokenizer()
    total = len(tok.tokenize(article.body))
    if total == 0:
        return 0.0
    covered = _union_length(matched_spans)
    return min(covered / total, 1.0)


def _union_length(spans: Iterable[tuple[int, int]]) -> int:
    out = 0
    last_end = None
    for start, end in sorted(spans):
        if last_end is None or start >= last_end:
            out += end - start
            last_end = end
        elif end > last_end:
            out += end - last_end
            last_end = end
    return out


@dataclass(frozen=True)
class CategoryAggregate:
    category: str
    metric: str
    mean: float
    stderr: float
    n: int

    def to_record(self) -> dict:
        return {
            "category": self.category,
            "metric": self.metric,
            "mean": self.mean,
            "stderr": self.stderr,
            "n": self.n,
        }


def aggregate_by_category(
    stats: Sequence[OutletStats], labels: Mapping[str, str]
) -> list[CategoryAggregate]:
    """Mean and standard error of each statistic over an outlet category."""
    metrics = (
        "mention_fraction",
        "mean_article_words",
        "mean_quoted_fraction",
        "reaction_rank_mean",
    )
    by_cat: dict[str, list[OutletStats]] = defaultdict(list)
    for s in stats:
        label = labels.get(s.outlet_id, "unlabeled")
        by_cat[label].append(s)
    out: list[CategoryAggregate] = []
    for cat in sorted(by_cat):
        for metric in metrics:
            values = [
                getattr(s, metric) for s in by_cat[cat] if getattr(s, metric) is not None
            ]
            if not values:
                continue
            arr = np.asarray(values, dtype=float)
            stderr = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
            out.append(CategoryAggregate(cat, metric, float(arr.mean()), stderr, len(arr)))
    return out
