"""Pipeline configuration: a single JSON document with strict validation.

Unknown keys are rejected with their full path so typos fail fast.  Seeds
must come from the config (or the --seed flag); nothing falls back to the
wall clock.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .align import SECONDS_PER_DAY, AlignmentParams
from .dedupcluster import DedupParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    transcripts_path: Path
    articles_path: Path
    outlets_path: Path
    workdir: Path
    feature_paths: tuple[Path, ...]
    seed: int
    speaker_filter: Optional[str]
    keyword_filter: Optional[str]
    alignment: AlignmentParams
    exhaustive_match: bool
    dedup: DedupParams
    dedup_window_seconds: int
    min_overlap: int
    holdout_count: Optional[int]
    holdout_seed: int
    lambda_grid: Optional[tuple[float, ...]]
    completion_max_iters: int
    completion_tol: float
    ensemble_num_graphs: int
    ensemble_swaps_per_graph: Optional[int]
    ensemble_seed: int
    latent_rank: int
    latent_source: str
    describe_keyword: str
    describe_min_citers: int
    report_top_k: int
    report_dpi: int
    report_max_tracks: int
    config_dict: dict = field(repr=False, compare=False)


_SCHEMA: dict[str, Any] = {
    "paths": {
        "transcripts": str,
        "articles": str,
        "outlets": str,
        "workdir": str,
        "features": list,
    },
    "seed": int,
    "corpus": {"speaker_filter": (str, type(None)), "keyword_filter": (str, type(None))},
    "alignment": {
        "min_quote_words": int,
        "max_lag_days": (int, float),
        "sim_threshold": (int, float),
        "gap_penalty": (int, float),
        "mismatch_penalty": (int, float),
        "match_score": (int, float),
        "exhaustive": bool,
    },
    "dedup": {"max_norm_distance": (int, float), "window_days": (int, float)},
    "cluster": {"min_overlap": int},
    "holdout": {"count": (int, type(None)), "seed": (int, type(None))},
    "completion": {
        "lambda_grid": (list, type(None)),
        "max_iters": int,
        "tol": (int, float),
    },
    "ensemble": {
        "num_graphs": int,
        "swaps_per_graph": (int, type(None)),
        "seed": (int, type(None)),
    },
    "latent": {"rank": int, "source": str},
    "describe": {"keyword": str, "min_citers": int},
    "report": {"top_k": int, "dpi": int, "max_tracks": int},
}


def _check_keys(data: dict, schema: dict, prefix: str = "") -> None:
    for key, value in data.items():
        path = f"{prefix}{key}"
        if key not in schema:
            raise ConfigError(f"unknown key {path!r}")
        expected = schema[key]
        if isinstance(expected, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{path!r} must be an object")
            _check_keys(value, expected, prefix=f"{path}.")
        else:
            if isinstance(value, bool) and expected is int:
                raise ConfigError(f"{path!r} must be an integer")
            if not isinstance(value, expected):
                raise ConfigError(f"{path!r} has the wrong type")


def load_config(
    path: str | Path,
    seed_override: Optional[int] = None,
    workdir_override: Optional[str | Path] = None,
) -> PipelineConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return parse_config(
        raw,
        base_dir=path.parent,
        seed_override=seed_override,
        workdir_override=workdir_override,
    )


def parse_config(
    raw: dict,
    base_dir: Path = Path("."),
    seed_override: Optional[int] = None,
    workdir_override: Optional[str | Path] = None,
) -> PipelineConfig:
    _check_keys(raw, _SCHEMA)
    paths = raw.get("paths", {})
    for required in ("transcripts", "articles", "outlets"):
        if required not in paths:
            raise ConfigError(f"missing required key 'paths.{required}'")
    if workdir_override is None and "workdir" not in paths:
        raise ConfigError("missing required key 'paths.workdir'")
    if seed_override is None and "seed" not in raw:
        raise ConfigError("missing required key 'seed' (seeds have no default)")
    seed = int(seed_override if seed_override is not None else raw["seed"])

    def resolve(p: str | Path) -> Path:
        p = Path(p)
        return p if p.is_absolute() else base_dir / p

    corpus_cfg = raw.get("corpus", {})
    align_cfg = raw.get("alignment", {})
    alignment = AlignmentParams(
        min_quote_words=align_cfg.get("min_quote_words", 6),
        max_lag_seconds=int(align_cfg.get("max_lag_days", 7) * SECONDS_PER_DAY),
        sim_threshold=float(align_cfg.get("sim_threshold", -0.4)),
        gap_penalty=float(align_cfg.get("gap_penalty", -1.0)),
        mismatch_penalty=float(align_cfg.get("mismatch_penalty", -1.0)),
        match_score=float(align_cfg.get("match_score", 0.0)),
    )
    dedup_cfg = raw.get("dedup", {})
    holdout_cfg = raw.get("holdout", {})
    completion_cfg = raw.get("completion", {})
    ensemble_cfg = raw.get("ensemble", {})
    latent_cfg = raw.get("latent", {})
    describe_cfg = raw.get("describe", {})
    report_cfg = raw.get("report", {})
    latent_source = latent_cfg.get("source", "model")
    if latent_source not in ("model", "observed"):
        raise ConfigError("'latent.source' must be 'model' or 'observed'")
    lambda_grid = completion_cfg.get("lambda_grid")
    if lambda_grid is not None:
        lambda_grid = tuple(float(x) for x in lambda_grid)
    workdir = Path(workdir_override) if workdir_override is not None else resolve(paths["workdir"])
    return PipelineConfig(
        transcripts_path=resolve(paths["transcripts"]),
        articles_path=resolve(paths["articles"]),
        outlets_path=resolve(paths["outlets"]),
        workdir=workdir,
        feature_paths=tuple(resolve(p) for p in paths.get("features", [])),
        seed=seed,
        speaker_filter=corpus_cfg.get("speaker_filter"),
        keyword_filter=corpus_cfg.get("keyword_filter"),
        alignment=alignment,
        exhaustive_match=bool(align_cfg.get("exhaustive", False)),
        dedup=DedupParams(float(dedup_cfg.get("max_norm_distance", 0.2))),
        dedup_window_seconds=int(dedup_cfg.get("window_days", 14) * SECONDS_PER_DAY),
        min_overlap=int(raw.get("cluster", {}).get("min_overlap", 5)),
        holdout_count=holdout_cfg.get("count"),
        holdout_seed=int(holdout_cfg.get("seed") if holdout_cfg.get("seed") is not None else seed),
        lambda_grid=lambda_grid,
        completion_max_iters=int(completion_cfg.get("max_iters", 500)),
        completion_tol=float(completion_cfg.get("tol", 1e-9)),
        ensemble_num_graphs=int(ensemble_cfg.get("num_graphs", 200)),
        ensemble_swaps_per_graph=ensemble_cfg.get("swaps_per_graph"),
        ensemble_seed=int(
            ensemble_cfg.get("seed") if ensemble_cfg.get("seed") is not None else seed
        ),
        latent_rank=int(latent_cfg.get("rank", 3)),
        latent_source=latent_source,
        describe_keyword=describe_cfg.get("keyword", "Obama"),
        describe_min_citers=int(describe_cfg.get("min_citers", 5)),
        report_top_k=int(report_cfg.get("top_k", 10)),
        report_dpi=int(report_cfg.get("dpi", 100)),
        report_max_tracks=int(report_cfg.get("max_tracks", 6)),
        config_dict=raw,
    )
