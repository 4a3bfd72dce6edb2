"""Staged pipeline orchestration.

Each stage reads the artifacts of earlier stages from the working directory
and writes its own under ``workdir/<stage>/``.  Every artifact is a pure
function of the inputs, the config, and the seeds, so reruns are
byte-identical.
"""

from __future__ import annotations

from pathlib import Path
from typing import Callable

import numpy as np

from . import align, bigraph, complete, corpus, dedupcluster, describe, jsonl, latent, report
from .config import PipelineConfig

STAGE_ORDER = (
    "ingest",
    "match",
    "cluster",
    "graph",
    "describe",
    "surprise",
    "complete",
    "latent",
    "report",
)


class PipelineError(RuntimeError):
    pass


class MissingStageError(PipelineError):
    def __init__(self, stage: str):
        super().__init__(f"requires: {stage}")
        self.stage = stage


def _stage_dir(cfg: PipelineConfig, stage: str) -> Path:
    return cfg.workdir / stage


_STAGE_MARKERS = {
    "ingest": ("transcripts.jsonl", "articles.jsonl", "outlets.jsonl"),
    "match": ("matches.jsonl", "dropped_articles.jsonl"),
    "cluster": ("clusters.jsonl",),
    "graph": ("edges.jsonl",),
    "describe": ("outlet_stats.jsonl", "category_stats.jsonl"),
    "surprise": ("surprise.jsonl",),
    "complete": ("eval.json", "baselines.jsonl"),
    "latent": ("embeddings.jsonl", "correlations.jsonl"),
    "report": ("report.html",),
}


def _require_stages(cfg: PipelineConfig, stages: list[str]) -> None:
    for stage in STAGE_ORDER:
        if stage not in stages:
            continue
        for marker in _STAGE_MARKERS[stage]:
            if not (_stage_dir(cfg, stage) / marker).exists():
                raise MissingStageError(stage)


def _load_ingested(cfg: PipelineConfig):
    d = _stage_dir(cfg, "ingest")
    transcripts = corpus.load_transcripts(
        d / "transcripts.jsonl", speaker_filter=cfg.speaker_filter
    )
    outlets = corpus.load_outlets(d / "outlets.jsonl")
    articles = corpus.load_articles(d / "articles.jsonl", outlets=outlets)
    return transcripts, articles, outlets


def _load_matches(cfg: PipelineConfig) -> list[align.MatchRecord]:
    path = _stage_dir(cfg, "match") / "matches.jsonl"
    return [align.MatchRecord.from_record(rec) for _, rec in jsonl.read_records(path)]


def _load_clusters(cfg: PipelineConfig) -> list[dedupcluster.QuoteCluster]:
    path = _stage_dir(cfg, "cluster") / "clusters.jsonl"
    return [dedupcluster.cluster_from_record(rec) for _, rec in jsonl.read_records(path)]


def _load_edges(cfg: PipelineConfig) -> list[tuple[str, str, int]]:
    path = _stage_dir(cfg, "graph") / "edges.jsonl"
    return [
        (rec["outlet_id"], rec["cluster_id"], corpus.parse_timestamp(rec["timestamp"]))
        for _, rec in jsonl.read_records(path)
    ]


def _kept_articles(cfg: PipelineConfig, articles: list[corpus.Article]) -> list[corpus.Article]:
    """Articles that survived the keyword filter and deduplication."""
    dropped_path = _stage_dir(cfg, "match") / "dropped_articles.jsonl"
    dropped = {rec["dropped_id"] for _, rec in jsonl.read_records(dropped_path)}
    pool = articles
    if cfg.keyword_filter is not None:
        pool = corpus.filter_articles(pool, cfg.keyword_filter)
    return [a for a in pool if a.id not in dropped]


def stage_ingest(cfg: PipelineConfig) -> dict:
    transcripts = corpus.load_transcripts(
        cfg.transcripts_path, speaker_filter=cfg.speaker_filter
    )
    outlets = corpus.load_outlets(cfg.outlets_path)
    articles = corpus.load_articles(cfg.articles_path, outlets=outlets)
    out = _stage_dir(cfg, "ingest")
    jsonl.write_records(out / "transcripts.jsonl", map(corpus.transcript_to_record, transcripts))
    jsonl.write_records(out / "articles.jsonl", map(corpus.article_to_record, articles))
    jsonl.write_records(
        out / "outlets.jsonl", map(corpus.outlet_to_record, sorted(outlets, key=lambda o: o.id))
    )
    summary = {
        "transcripts": len(transcripts),
        "articles": len(articles),
        "outlets": len(outlets),
        "transcript_tokens": sum(t.num_tokens for t in transcripts),
    }
    jsonl.write_json(out / "summary.json", summary)
    return summary


def stage_match(cfg: PipelineConfig) -> dict:
    _require_stages(cfg, ["ingest"])
    transcripts, articles, _ = _load_ingested(cfg)
    pool = articles
    if cfg.keyword_filter is not None:
        pool = corpus.filter_articles(pool, cfg.keyword_filter)
    kept, dropped = dedupcluster.dedup_articles(
        pool, cfg.dedup, window_seconds=cfg.dedup_window_seconds
    )
    records = align.match_article_quotes(
        kept, transcripts, params=cfg.alignment, exhaustive=cfg.exhaustive_match
    )
    out = _stage_dir(cfg, "match")
    jsonl.write_records(
        out / "dropped_articles.jsonl",
        ({"dropped_id": d, "kept_id": k} for d, k in dropped),
    )
    jsonl.write_records(out / "matches.jsonl", (r.to_record() for r in records))
    summary = {
        "articles_considered": len(pool),
        "articles_kept": len(kept),
        "articles_dropped": len(dropped),
        "matches": len(records),
    }
    jsonl.write_json(out / "summary.json", summary)
    return summary


def stage_cluster(cfg: PipelineConfig) -> dict:
    _require_stages(cfg, ["ingest", "match"])
    matches = _load_matches(cfg)
    clusters = dedupcluster.cluster_matches(matches, min_overlap=cfg.min_overlap)
    out = _stage_dir(cfg, "cluster")
    jsonl.write_records(out / "clusters.jsonl", map(dedupcluster.cluster_to_record, clusters))
    summary = {"clusters": len(clusters), "matches": len(matches)}
    jsonl.write_json(out / "summary.json", summary)
    return summary


def stage_graph(cfg: PipelineConfig) -> dict:
    _require_stages(cfg, ["ingest", "match", "cluster"])
    _, articles, _ = _load_ingested(cfg)
    matches = _load_matches(cfg)
    clusters = _load_clusters(cfg)
    edges = dedupcluster.earliest_edges(clusters, matches, articles)
    out = _stage_dir(cfg, "graph")
    jsonl.write_records(
        out / "edges.jsonl",
        (
            {
                "outlet_id": o,
                "cluster_id": c,
                "timestamp": corpus.format_timestamp(t),
            }
            for o, c, t in edges
        ),
    )
    summary = {"edges": len(edges), "clusters_cited": len({c for _, c, _ in edges})}
    jsonl.write_json(out / "summary.json", summary)
    return summary


def stage_describe(cfg: PipelineConfig) -> dict:
    _require_stages(cfg, ["ingest", "match", "graph"])
    _, articles, outlets = _load_ingested(cfg)
    matches = _load_matches(cfg)
    edges = _load_edges(cfg)
    labels = {o.id: o.label for o in outlets}
    labeled = [o.id for o in outlets if o.label != "unlabeled"]
    ranks = describe.reaction_ranks(
        edges, min_citers=cfg.describe_min_citers, outlet_subset=labeled or None
    )
    kept = _kept_articles(cfg, articles)
    matched_ids = {m.occurrence_id for m in matches}
    tok = corpus.Tokenizer()
    stats_rows: list[describe.OutletStats] = []
    by_outlet_all: dict[str, list[corpus.Article]] = {o.id: [] for o in outlets}
    for a in articles:
        by_outlet_all[a.outlet_id].append(a)
    by_outlet_kept: dict[str, list[corpus.Article]] = {o.id: [] for o in outlets}
    for a in kept:
        by_outlet_kept[a.outlet_id].append(a)
    for outlet in sorted(outlets, key=lambda o: o.id):
        arts = by_outlet_all[outlet.id]
        if not arts:
            continue
        word_counts = [len(tok.tokenize(a.body)) for a in arts]
        quoted = []
        for a in by_outlet_kept[outlet.id]:
            spans = [
                occ.article_token_span
                for occ in align.extract_quotes(a, tok, cfg.alignment)
                if occ.id in matched_ids
            ]
            quoted.append(describe.quoted_fraction(a, spans, tok))
        stats_rows.append(
            describe.OutletStats(
                outlet_id=outlet.id,
                mention_fraction=describe.mention_fraction(arts, cfg.describe_keyword),
                mean_article_words=float(np.mean(word_counts)),
                mean_quoted_fraction=float(np.mean(quoted)) if quoted else 0.0,
                reaction_rank_mean=ranks.get(outlet.id),
            )
        )
    aggregates = describe.aggregate_by_category(stats_rows, labels)
    out = _stage_dir(cfg, "describe")
    jsonl.write_records(out / "outlet_stats.jsonl", (s.to_record() for s in stats_rows))
    jsonl.write_records(out / "category_stats.jsonl", (a.to_record() for a in aggregates))
    summary = {"outlets_described": len(stats_rows)}
    jsonl.write_json(out / "summary.json", summary)
    return summary


def stage_surprise(cfg: PipelineConfig) -> dict:
    _require_stages(cfg, ["ingest", "graph"])
    _, _, outlets = _load_ingested(cfg)
    edges = _load_edges(cfg)
    graph = bigraph.BipartiteGraph.from_edges(
        [(o, c) for o, c, _ in edges], outlet_ids=sorted(o.id for o in outlets)
    )
    categories = bigraph.categories_from_labels({o.id: o.label for o in outlets})
    swaps = (
        cfg.ensemble_swaps_per_graph
        if cfg.ensemble_swaps_per_graph is not None
        else bigraph.default_swaps(graph)
    )
    cited_outlets = set(graph.edge_outlets.tolist())
    index = {o: i for i, o in enumerate(graph.outlet_ids)}
    rows: list[dict] = []
    for a_name in ("dC", "sC", "sL", "dL"):
        a_members = categories[a_name]
        if not any(index[o] in cited_outlets for o in a_members):
            continue
        for b_name in ("dC", "sC", "sL", "dL"):
            row = {
                "A": a_name,
                "B": b_name,
                "num_graphs": cfg.ensemble_num_graphs,
                "swaps": swaps,
                "seed": cfg.ensemble_seed,
            }
            try:
                result = bigraph.surprise(
                    graph,
                    a_members,
                    categories[b_name],
                    num_graphs=cfg.ensemble_num_graphs,
                    swaps_per_graph=swaps,
                    seed=cfg.ensemble_seed,
                )
            except bigraph.GraphError as exc:
                row["error"] = str(exc)
            else:
                row.update(
                    m_original=result.m_original,
                    m_null_mean=result.m_null_mean,
                    m_null_std=result.m_null_var**0.5,
                    surprise=result.surprise,
                )
            rows.append(row)
    out = _stage_dir(cfg, "surprise")
    jsonl.write_records(out / "surprise.jsonl", rows)
    summary = {"pairs": len(rows)}
    jsonl.write_json(out / "summary.json", summary)
    return summary


def _build_matrix(cfg: PipelineConfig):
    _, _, outlets = _load_ingested(cfg)
    clusters = _load_clusters(cfg)
    edges = _load_edges(cfg)
    outlet_ids = sorted(o.id for o in outlets)
    cluster_ids = [c.id for c in clusters]
    total = len(outlet_ids) * len(cluster_ids)
    count = cfg.holdout_count
    if count is None:
        count = max(2, total // 10)
        count -= count % 2
    return complete.build_matrix(
        [(o, c) for o, c, _ in edges], outlet_ids, cluster_ids, count, cfg.holdout_seed
    ), count


def _default_lambda_grid(matrix: complete.QuoteMatrix) -> tuple[float, ...]:
    sigma_max = float(np.linalg.svd(matrix.training_matrix(), compute_uv=False)[0])
    return tuple(round(sigma_max * f, 12) for f in (0.5, 0.25, 0.1, 0.05, 0.02, 0.01))


def stage_complete(cfg: PipelineConfig) -> dict:
    _require_stages(cfg, ["ingest", "cluster", "graph"])
    (matrix, dev, test), count = _build_matrix(cfg)
    baselines = complete.Baselines.from_matrix(matrix)
    grid = cfg.lambda_grid if cfg.lambda_grid is not None else _default_lambda_grid(matrix)
    methods: dict[str, dict] = {}
    for mode in ("popularity", "popularity+propensity"):
        rep = complete.tune_and_evaluate(complete.baseline_scores(baselines, mode), dev, test)
        methods[mode] = rep.to_record()
    model, rep, path = complete.tune_completion(
        matrix, dev, test, grid, max_iters=cfg.completion_max_iters, tol=cfg.completion_tol
    )
    methods["matrix_completion"] = {
        **rep.to_record(),
        "lambda": model.lam,
        "rank": model.rank,
        "lambda_path": path,
    }
    out = _stage_dir(cfg, "complete")
    complete.save_model(model, out / "model")
    jsonl.write_json(
        out / "eval.json",
        {
            "config": {
                "holdout_count": count,
                "holdout_seed": cfg.holdout_seed,
                "lambda_grid": sorted(grid, reverse=True),
                "max_iters": cfg.completion_max_iters,
                "tol": cfg.completion_tol,
            },
            "methods": methods,
        },
    )
    rows = [
        {"kind": "outlet_propensity", "id": oid, "value": float(baselines.mu_s[i])}
        for i, oid in enumerate(matrix.outlet_ids)
    ]
    rows += [
        {"kind": "cluster_popularity", "id": cid, "value": float(baselines.mu_q[j])}
        for j, cid in enumerate(matrix.cluster_ids)
    ]
    jsonl.write_records(out / "baselines.jsonl", rows)
    summary = {
        "holdout_count": count,
        "selected_lambda": model.lam,
        "selected_rank": model.rank,
        "test_mcc": rep.mcc,
    }
    jsonl.write_json(out / "summary.json", summary)
    return summary


def _load_feature_files(cfg: PipelineConfig, cluster_ids: list[str]) -> list[latent.FeatureMatrix]:
    index = {c: j for j, c in enumerate(cluster_ids)}
    out: list[latent.FeatureMatrix] = []
    for path in cfg.feature_paths:
        per_feature: dict[str, np.ndarray] = {}
        for lineno, rec in jsonl.read_records(path):
            for key in ("cluster_id", "feature_name", "value"):
                if key not in rec:
                    raise corpus.CorpusError(f"missing field {key} at line {lineno}")
            name = str(rec["feature_name"])
            if name not in per_feature:
                per_feature[name] = np.zeros(len(cluster_ids))
            j = index.get(str(rec["cluster_id"]))
            if j is not None:
                per_feature[name][j] = float(rec["value"])
        if per_feature:
            names = sorted(per_feature)
            raw = np.vstack([per_feature[n] for n in names])
            out.append(latent.FeatureMatrix.from_raw(Path(path).stem, names, raw))
    return out


def stage_latent(cfg: PipelineConfig) -> dict:
    needed = ["ingest", "cluster", "graph"]
    if cfg.latent_source == "model":
        needed.append("complete")
    _require_stages(cfg, needed)
    transcripts, _, _ = _load_ingested(cfg)
    clusters = _load_clusters(cfg)
    (matrix, _, _), _ = _build_matrix(cfg)
    model = None
    if cfg.latent_source == "model":
        model = complete.load_model(_stage_dir(cfg, "complete") / "model")
        if model.rank == 0:
            model = None
    rank = min(cfg.latent_rank, model.rank if model is not None else cfg.latent_rank)
    space = latent.decompose(matrix, max(rank, 1), model=model)
    features = [latent.negation_feature(clusters, transcripts)]
    features.extend(_load_feature_files(cfg, list(matrix.cluster_ids)))
    projections = {f.name: latent.project_features(f, space) for f in features}
    out = _stage_dir(cfg, "latent")
    jsonl.write_records(out / "embeddings.jsonl", latent.embedding_records(space, projections))
    feature_rows = []
    corr_rows = []
    for f in features:
        for k, label in enumerate(f.feature_labels):
            for j, cid in enumerate(matrix.cluster_ids):
                if f.raw[k, j] != 0.0:
                    feature_rows.append(
                        {
                            "cluster_id": cid,
                            "feature_name": f"{f.name}:{label}",
                            "value": float(f.raw[k, j]),
                        }
                    )
            for dim in range(space.rank):
                try:
                    rho, p = latent.correlate(f.raw[k], dim, space)
                    corr_rows.append(
                        {
                            "feature": f"{f.name}:{label}",
                            "dimension": dim,
                            "rho": rho,
                            "p_value": p,
                        }
                    )
                except latent.LatentError as exc:
                    corr_rows.append(
                        {
                            "feature": f"{f.name}:{label}",
                            "dimension": dim,
                            "rho": None,
                            "p_value": None,
                            "note": str(exc),
                        }
                    )
    jsonl.write_records(out / "features.jsonl", feature_rows)
    jsonl.write_records(out / "correlations.jsonl", corr_rows)
    summary = {"rank": space.rank, "features": sum(len(f.feature_labels) for f in features)}
    jsonl.write_json(out / "summary.json", summary)
    return summary


def stage_report(cfg: PipelineConfig) -> dict:
    _require_stages(
        cfg,
        ["ingest", "match", "cluster", "graph", "describe", "surprise", "complete", "latent"],
    )
    transcripts, _, outlets = _load_ingested(cfg)
    matches = _load_matches(cfg)
    clusters = _load_clusters(cfg)
    edges = _load_edges(cfg)
    labels = {o.id: o.label for o in outlets}
    out = _stage_dir(cfg, "report")
    data_dir = out / "data"
    fig_dir = out / "figures"
    dpi = cfg.report_dpi

    # Token-volume tracks for the most-cited transcripts.
    citations_per_transcript: dict[str, int] = {}
    cluster_tid = {c.id: c.transcript_id for c in clusters}
    for _, cid, _ in edges:
        tid = cluster_tid.get(cid)
        if tid is not None:
            citations_per_transcript[tid] = citations_per_transcript.get(tid, 0) + 1
    chosen = sorted(
        citations_per_transcript, key=lambda t: (-citations_per_transcript[t], t)
    )[: cfg.report_max_tracks]
    chosen = sorted(chosen)
    tracks = []
    figure_paths: list[Path] = []
    by_id = {t.id: t for t in transcripts}
    for tid in chosen:
        track = report.token_volume(by_id[tid], clusters, edges, labels)
        tracks.append(track.to_record())
        fig_path = fig_dir / f"token_volume_{tid}.png"
        report.render_token_volume(track, fig_path, dpi=dpi)
        figure_paths.append(fig_path)
    jsonl.write_json(data_dir / "token_volume.json", {"tracks": tracks})

    # Latent scatter with marker size from quoting propensity.
    embeddings = list(jsonl.read_records(_stage_dir(cfg, "latent") / "embeddings.jsonl"))
    outlet_coords = {
        rec["entity_id"]: rec["coordinates"]
        for _, rec in embeddings
        if rec["kind"] == "outlet" and len(rec["coordinates"]) >= 2
    }
    propensity = {
        rec["id"]: rec["value"]
        for _, rec in jsonl.read_records(_stage_dir(cfg, "complete") / "baselines.jsonl")
        if rec["kind"] == "outlet_propensity"
    }
    if outlet_coords:
        fig_path = fig_dir / "latent_scatter.png"
        report.render_latent_scatter(outlet_coords, labels, propensity, fig_path, dpi=dpi)
        figure_paths.append(fig_path)
    jsonl.write_json(
        data_dir / "latent_scatter.json",
        {
            "outlets": [
                {
                    "outlet_id": oid,
                    "coordinates": outlet_coords[oid],
                    "label": labels.get(oid, "unlabeled"),
                    "propensity": propensity.get(oid, 0.0),
                }
                for oid in sorted(outlet_coords)
            ]
        },
    )

    # Category statistics figure.
    aggregates = [
        rec for _, rec in jsonl.read_records(_stage_dir(cfg, "describe") / "category_stats.jsonl")
    ]
    if aggregates:
        fig_path = fig_dir / "category_stats.png"
        report.render_category_stats(aggregates, fig_path, dpi=dpi)
        figure_paths.append(fig_path)

    surprise_rows = [
        rec
        for _, rec in jsonl.read_records(_stage_dir(cfg, "surprise") / "surprise.jsonl")
        if "error" not in rec
    ]
    eval_doc = jsonl.read_json(_stage_dir(cfg, "complete") / "eval.json")
    eval_rows = [
        {"method": name, **fields} for name, fields in sorted(eval_doc["methods"].items())
    ]

    # Cluster variant tables for the most widely cited clusters.
    citers: dict[str, set[str]] = {}
    for o, c, _ in edges:
        citers.setdefault(c, set()).add(o)
    top_clusters = sorted(citers, key=lambda c: (-len(citers[c]), c))[: cfg.report_top_k]
    texts: dict[str, set[str]] = {}
    cluster_of = {}
    for c in clusters:
        for occ in c.members:
            cluster_of[occ] = c.id
    for m in matches:
        cid = cluster_of.get(m.occurrence_id)
        if cid is not None:
            texts.setdefault(cid, set()).add(m.quote_text)
    by_cluster_id = {c.id: c for c in clusters}
    variant_sections = []
    for cid in top_clusters:
        c = by_cluster_id[cid]
        variant_sections.append(
            {
                "cluster_id": cid,
                "transcript_id": c.transcript_id,
                "span": list(c.span),
                "num_citing_outlets": len(citers[cid]),
                "variants": sorted(texts.get(cid, set())),
            }
        )
    jsonl.write_json(data_dir / "cluster_variants.json", {"clusters": variant_sections})

    ranking_sections = []
    if outlet_coords and len(next(iter(outlet_coords.values()))) >= 2:
        ranking = sorted(
            ((oid, coords[1]) for oid, coords in outlet_coords.items()),
            key=lambda item: (-item[1], item[0]),
        )
        ext = latent.extremes(ranking, cfg.report_top_k)
        width = max(len(ext["top"]), len(ext["middle"]), len(ext["bottom"]))
        rows = []
        for i in range(width):
            row = []
            for part in ("top", "middle", "bottom"):
                if i < len(ext[part]):
                    oid, val = ext[part][i]
                    row.append(f"{oid} ({val:.3f})")
                else:
                    row.append("")
            rows.append(row)
        ranking_sections.append(
            {
                "title": "Outlets along the second latent dimension",
                "headers": ["top", "middle", "bottom"],
                "rows": rows,
            }
        )

    summary: dict[str, object] = {}
    for stage in ("ingest", "match", "cluster", "graph", "complete"):
        stage_summary = jsonl.read_json(_stage_dir(cfg, stage) / "summary.json")
        for key, value in stage_summary.items():
            summary[f"{stage}.{key}"] = value
    report.build_html(
        summary,
        figure_paths,
        surprise_rows,
        eval_rows,
        variant_sections,
        ranking_sections,
        out / "report.html",
    )
    jsonl.write_json(out / "summary.json", {"figures": len(figure_paths)})
    return {"figures": len(figure_paths)}


_STAGES: dict[str, Callable[[PipelineConfig], dict]] = {
    "ingest": stage_ingest,
    "match": stage_match,
    "cluster": stage_cluster,
    "graph": stage_graph,
    "describe": stage_describe,
    "surprise": stage_surprise,
    "complete": stage_complete,
    "latent": stage_latent,
    "report": stage_report,
}


def run_stage(name: str, cfg: PipelineConfig) -> dict:
    if name == "all":
        result: dict = {}
        for stage in STAGE_ORDER:
            result[stage] = _STAGES[stage](cfg)
        return result
    if name not in _STAGES:
        raise PipelineError(f"unknown subcommand {name!r}")
    return {name: _STAGES[name](cfg)}
