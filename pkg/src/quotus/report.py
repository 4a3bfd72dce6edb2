"""Static report emission: token-volume tracks, figures, and HTML.

Figures are rendered with the Agg backend to PNG files next to the report
data, and embedded base64 into a single self-contained HTML page.  All
outputs are deterministic functions of the pipeline artifacts.
"""

from __future__ import annotations

import base64
import html
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .corpus import Transcript
from .dedupcluster import QuoteCluster

CATEGORY_COLORS = {
    "dC": "#a50f15",
    "sC": "#fb6a4a",
    "sL": "#6baed6",
    "dL": "#08519c",
    "unlabeled": "#999999",
}

_PNG_METADATA = {"Software": "quotus"}


@dataclass(frozen=True)
class TokenVolumeTrack:
    """Per-token citation counts over one transcript, overall and by category."""

    transcript_id: str
    overall: tuple[int, ...]
    by_category: dict[str, tuple[int, ...]]

    def to_record(self) -> dict:
        return {
            "transcript_id": self.transcript_id,
            "overall": list(self.overall),
            "by_category": {k: list(v) for k, v in sorted(self.by_category.items())},
        }


def token_volume(
    transcript: Transcript,
    clusters: Sequence[QuoteCluster],
    edges: Sequence[tuple[str, str, int]],
    labels: Mapping[str, str],
    categories: Sequence[str] = ("dC", "sC", "sL", "dL"),
) -> TokenVolumeTrack:
    """Count citing (outlet, cluster) edges covering each transcript token."""
    n = transcript.num_tokens
    overall = np.zeros(n, dtype=np.int64)
    per_cat = {c: np.zeros(n, dtype=np.int64) for c in categories}
    spans = {c.id: c.span for c in clusters if c.transcript_id == transcript.id}
    for outlet_id, cluster_id, _ in edges:
        span = spans.get(cluster_id)
        if span is None:
            continue
        start, end = max(span[0], 0), min(span[1], n)
        if end <= start:
            continue
        overall[start:end] += 1
        label = labels.get(outlet_id)
        if label in per_cat:
            per_cat[label][start:end] += 1
    return TokenVolumeTrack(
        transcript.id,
        tuple(overall.tolist()),
        {c: tuple(v.tolist()) for c, v in per_cat.items()},
    )


def _save(fig, path: Path, dpi: int) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=dpi, metadata=_PNG_METADATA)
    plt.close(fig)


def render_token_volume(track: TokenVolumeTrack, path: Path, dpi: int = 100) -> None:
    """Figure with the overall track in grey, conservative red, liberal blue."""
    n = len(track.overall)
    x = np.arange(n)
    fig, ax = plt.subplots(figsize=(10, 3))
    ax.fill_between(x, track.overall, step="post", color="#dddddd", label="all outlets")
    conservative = np.array(track.by_category.get("dC", np.zeros(n, dtype=int))) + np.array(
        track.by_category.get("sC", np.zeros(n, dtype=int))
    )
    liberal = np.array(track.by_category.get("dL", np.zeros(n, dtype=int))) + np.array(
        track.by_category.get("sL", np.zeros(n, dtype=int))
    )
    ax.step(x, conservative, where="post", color="#a50f15", lw=1.2, label="conservative")
    ax.step(x, liberal, where="post", color="#08519c", lw=1.2, label="liberal")
    ax.set_xlabel("token index")
    ax.set_ylabel("citing edges")
    ax.set_title(f"Quotation volume: {track.transcript_id}")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    _save(fig, path, dpi)


def render_latent_scatter(
    outlet_coords: Mapping[str, Sequence[float]],
    labels: Mapping[str, str],
    sizes: Optional[Mapping[str, float]],
    path: Path,
    dpi: int = 100,
) -> None:
    """Outlets on the first two latent dimensions, colored by category."""
    fig, ax = plt.subplots(figsize=(6, 6))
    for label, color in CATEGORY_COLORS.items():
        ids = [o for o in sorted(outlet_coords) if labels.get(o, "unlabeled") == label]
        if not ids:
            continue
        xs = [outlet_coords[o][0] for o in ids]
        ys = [outlet_coords[o][1] if len(outlet_coords[o]) > 1 else 0.0 for o in ids]
        ss = [60.0 if sizes is None else 40.0 + 400.0 * sizes.get(o, 0.0) for o in ids]
        ax.scatter(xs, ys, s=ss, c=color, label=label, alpha=0.8, edgecolors="black", lw=0.4)
    ax.axhline(0, color="#cccccc", lw=0.6)
    ax.axvline(0, color="#cccccc", lw=0.6)
    ax.set_xlabel("dimension 1")
    ax.set_ylabel("dimension 2")
    ax.set_title("Outlets in the latent space")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path, dpi)


def render_category_stats(
    aggregates: Sequence[dict],
    path: Path,
    dpi: int = 100,
) -> None:
    """Bar panels of per-category means with standard-error bars."""
    metrics = [
        ("mention_fraction", "fraction mentioning keyword"),
        ("reaction_rank_mean", "mean reaction rank"),
        ("mean_article_words", "mean article words"),
        ("mean_quoted_fraction", "mean quoted fraction"),
    ]
    order = ["dC", "sC", "sL", "dL", "unlabeled"]
    fig, axes = plt.subplots(1, 4, figsize=(13, 3))
    for ax, (metric, title) in zip(axes, metrics):
        rows = [r for r in aggregates if r["metric"] == metric]
        rows.sort(key=lambda r: order.index(r["category"]) if r["category"] in order else 99)
        cats = [r["category"] for r in rows]
        means = [r["mean"] for r in rows]
        errs = [r["stderr"] for r in rows]
        colors = [CATEGORY_COLORS.get(c, "#999999") for c in cats]
        ax.bar(cats, means, yerr=errs, color=colors, capsize=3)
        ax.set_title(title, fontsize=9)
        ax.tick_params(labelsize=8)
    fig.tight_layout()
    _save(fig, path, dpi)


def _embed_png(path: Path) -> str:
    data = base64.b64encode(path.read_bytes()).decode("ascii")
    return f'<img src="data:image/png;base64,{data}" style="max-width:100%">'


def _table(headers: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    head = "".join(f"<th>{html.escape(str(h))}</th>" for h in headers)
    body = "".join(
        "<tr>" + "".join(f"<td>{html.escape(str(c))}</td>" for c in row) + "</tr>"
        for row in rows
    )
    return f"<table><thead><tr>{head}</tr></thead><tbody>{body}</tbody></table>"


def build_html(
    summary: Mapping[str, object],
    figure_paths: Sequence[Path],
    surprise_rows: Sequence[dict],
    eval_rows: Sequence[dict],
    variant_sections: Sequence[dict],
    ranking_sections: Sequence[dict],
    out_path: Path,
) -> None:
    """Assemble the self-contained report page."""
    parts: list[str] = [
        "<!DOCTYPE html><html><head><meta charset='utf-8'><title>quotus report</title>",
        "<style>body{font-family:sans-serif;margin:2em;max-width:1100px}"
        "table{border-collapse:collapse;margin:1em 0}"
        "td,th{border:1px solid #ccc;padding:4px 8px;font-size:13px;text-align:left}"
        "h2{border-bottom:1px solid #ddd;padding-bottom:4px}"
        "blockquote{font-size:13px;color:#333}</style></head><body>",
        "<h1>quotus pipeline report</h1>",
        "<h2>Overview</h2>",
        _table(["quantity", "value"], sorted((k, v) for k, v in summary.items())),
    ]
    for fig_path in figure_paths:
        parts.append(f"<h2>{html.escape(fig_path.stem.replace('_', ' '))}</h2>")
        parts.append(_embed_png(fig_path))
    if surprise_rows:
        parts.append("<h2>Surprise by category pair</h2>")
        parts.append(
            _table(
                ["A", "B", "M(B|A)", "null mean", "null std", "surprise"],
                [
                    [
                        r["A"],
                        r["B"],
                        f"{r['m_original']:.4f}",
                        f"{r['m_null_mean']:.4f}",
                        f"{r['m_null_std']:.4f}",
                        f"{r['surprise']:.2f}",
                    ]
                    for r in surprise_rows
                ],
            )
        )
    if eval_rows:
        parts.append("<h2>Quote prediction evaluation</h2>")
        parts.append(
            _table(
                ["method", "precision", "recall", "F1", "MCC"],
                [
                    [
                        r["method"],
                        f"{r['precision']:.3f}",
                        f"{r['recall']:.3f}",
                        f"{r['f1']:.3f}",
                        f"{r['mcc']:.3f}",
                    ]
                    for r in eval_rows
                ],
            )
        )
    for section in ranking_sections:
        parts.append(f"<h2>{html.escape(section['title'])}</h2>")
        parts.append(_table(section["headers"], section["rows"]))
    for section in variant_sections:
        parts.append(f"<h2>Cluster variants: {html.escape(section['cluster_id'])}</h2>")
        parts.append(
            f"<p>span {section['span'][0]}&ndash;{section['span'][1]} "
            f"in {html.escape(section['transcript_id'])}, "
            f"{section['num_citing_outlets']} citing outlets</p>"
        )
        for quote in section["variants"]:
            parts.append(f"<blockquote>{html.escape(quote)}</blockquote>")
    parts.append("</body></html>")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("".join(parts), encoding="utf-8")
