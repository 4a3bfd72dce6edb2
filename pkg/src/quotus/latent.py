"""Latent bias space: SVD embedding, feature projections, correlations.

Outlets embed as rows of U and quote clusters as rows of V in the SVD
X = U S V^T of the normalized quote matrix (or of the completed low-rank
model).  A row-scaled feature-by-cluster matrix F projects into the same
space as L = F V S^(-1), so that L S V^T reconstructs F's component inside
the row space of V^T.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy import stats

from .complete import CompletionModel, QuoteMatrix
from .corpus import Tokenizer, Transcript
from .dedupcluster import QuoteCluster


class LatentError(ValueError):
    pass


@dataclass(frozen=True)
class LatentSpace:
    outlet_ids: tuple[str, ...]
    cluster_ids: tuple[str, ...]
    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    @property
    def rank(self) -> int:
        return len(self.s)

    def outlet_coordinates(self) -> np.ndarray:
        """Outlet embedding scaled by the singular values (rows of U S)."""
        return self.u * self.s

    def cluster_coordinates(self) -> np.ndarray:
        return self.v * self.s


def _fix_signs(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Deterministic orientation: largest-magnitude entry of each V column > 0.
    for k in range(v.shape[1]):
        pivot = int(np.argmax(np.abs(v[:, k])))
        if v[pivot, k] < 0:
            v[:, k] = -v[:, k]
            u[:, k] = -u[:, k]
    return u, v


def decompose(
    matrix: QuoteMatrix,
    rank: int,
    model: Optional[CompletionModel] = None,
) -> LatentSpace:
    """Top-``rank`` SVD of the zero-filled normalized matrix, or of a model.

    Components beyond the numerical rank are dropped with a warning.  The
    sign convention makes repeated decompositions identical.
    """
    if rank < 1:
        raise LatentError("rank must be >= 1")
    if rank > min(matrix.shape):
        raise LatentError(f"rank {rank} exceeds matrix dimensions {matrix.shape}")
    target = model.full_matrix() if model is not None else matrix.training_matrix()
    u, s, vt = np.linalg.svd(target, full_matrices=False)
    cutoff = s[0] * max(target.shape) * np.finfo(float).eps if len(s) else 0.0
    numerical_rank = int((s > cutoff).sum())
    if rank > numerical_rank:
        warnings.warn(
            f"requested rank {rank} exceeds numerical rank {numerical_rank}; "
            "trailing components dropped",
            stacklevel=2,
        )
        rank = numerical_rank
    u, s, v = u[:, :rank].copy(), s[:rank].copy(), vt[:rank].T.copy()
    u, v = _fix_signs(u, v)
    return LatentSpace(matrix.outlet_ids, matrix.cluster_ids, u, s, v)


@dataclass(frozen=True)
class FeatureMatrix:
    """Named feature rows over clusters, with rows scaled to sum to one."""

    name: str
    feature_labels: tuple[str, ...]
    raw: np.ndarray
    scaled: np.ndarray

    @classmethod
    def from_raw(
        cls, name: str, feature_labels: Sequence[str], raw: np.ndarray
    ) -> "FeatureMatrix":
        raw = np.asarray(raw, dtype=float)
        if raw.ndim != 2 or raw.shape[0] != len(feature_labels):
            raise LatentError("feature matrix must be features x clusters")
        sums = raw.sum(axis=1, keepdims=True)
        scaled = np.divide(raw, sums, out=np.zeros_like(raw), where=sums != 0)
        return cls(name, tuple(feature_labels), raw, scaled)


@dataclass(frozen=True)
class Projection:
    feature_labels: tuple[str, ...]
    l: np.ndarray


def project_features(features: FeatureMatrix, space: LatentSpace) -> Projection:
    """Project scaled feature rows into the latent space: L = F V S^(-1)."""
    if features.scaled.shape[1] != len(space.cluster_ids):
        raise LatentError("feature columns must align with the cluster index")
    if np.any(space.s <= 0):
        raise LatentError("rank-deficient projection")
    l = features.scaled @ space.v / space.s
    return Projection(features.feature_labels, l)


def dominant_topics(weights: FeatureMatrix, margin: float = 0.1) -> FeatureMatrix:
    """Binarize topic weights: a topic is dominant for a cluster when its
    weight beats the runner-up by at least ``margin``."""
    w = weights.raw
    binary = np.zeros_like(w)
    if w.shape[0] == 1:
        binary[0, w[0] > 0] = 1.0
    else:
        order = np.sort(w, axis=0)
        top, second = order[-1], order[-2]
        leaders = np.argmax(w, axis=0)
        dominant = top >= second + margin
        binary[leaders[dominant], np.nonzero(dominant)[0]] = 1.0
    return FeatureMatrix.from_raw(weights.name, weights.feature_labels, binary)


def negation_feature(
    clusters: Sequence[QuoteCluster],
    transcripts: Iterable[Transcript],
    tokenizer: Tokenizer | None = None,
) -> FeatureMatrix:
    """Binary per-cluster flag: span contains "not" or an "n't" contraction."""
    by_id = {t.id: t for t in transcripts}
    values = np.zeros((1, len(clusters)))
    for k, cluster in enumerate(clusters):
        transcript = by_id[cluster.transcript_id]
        span_tokens = transcript.tokens[cluster.span[0] : cluster.span[1]]
        if any(tok == "not" or tok.endswith("n't") for tok in span_tokens):
            values[0, k] = 1.0
    return FeatureMatrix.from_raw("negation", ("negation",), values)


def correlate(
    feature_values: Sequence[float],
    dimension: int,
    space: LatentSpace,
) -> tuple[float, float]:
    """Spearman correlation between a per-cluster feature and a latent axis.

    Ranks use mean-rank tie handling; the p-value comes from the
    t-distribution approximation.
    """
    x = np.asarray(feature_values, dtype=float)
    if dimension < 0 or dimension >= space.rank:
        raise LatentError(f"dimension {dimension} out of range")
    y = space.cluster_coordinates()[:, dimension]
    if len(x) != len(y):
        raise LatentError("feature values must align with the cluster index")
    return spearman(x, y)


def spearman(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Spearman rank correlation with mean-rank ties and t-based p-value."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    if n < 3:
        raise LatentError("need at least 3 paired observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise LatentError("undefined correlation")
    rx = stats.rankdata(x, method="average")
    ry = stats.rankdata(y, method="average")
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    rho = float(rx @ ry / np.sqrt((rx @ rx) * (ry @ ry)))
    if abs(rho) >= 1.0:
        return (1.0 if rho > 0 else -1.0), 0.0
    t = rho * np.sqrt((n - 2) / (1.0 - rho * rho))
    p = 2.0 * float(stats.t.sf(abs(t), df=n - 2))
    return rho, p


def rank_outlets(space: LatentSpace, dimension: int) -> list[tuple[str, float]]:
    """Outlets sorted by their scaled coordinate on one dimension, descending."""
    if dimension < 0 or dimension >= space.rank:
        raise LatentError(f"dimension {dimension} out of range")
    coords = space.outlet_coordinates()[:, dimension]
    order = sorted(range(len(coords)), key=lambda i: (-coords[i], space.outlet_ids[i]))
    return [(space.outlet_ids[i], float(coords[i])) for i in order]


def extremes(
    ranking: Sequence[tuple[str, float]], k: int
) -> dict[str, list[tuple[str, float]]]:
    """Top-k, middle-k (nearest zero), and bottom-k of a ranking."""
    ranked = list(ranking)
    mid = sorted(ranked, key=lambda item: (abs(item[1]), item[0]))[:k]
    mid.sort(key=lambda item: -item[1])
    return {"top": ranked[:k], "middle": mid, "bottom": ranked[-k:]}


def embedding_records(
    space: LatentSpace,
    projections: Optional[Mapping[str, Projection]] = None,
) -> list[dict]:
    """Rows for the embedding export file: outlets, clusters, features."""
    projections = projections or {}
    records: list[dict] = []
    outlet_coords = space.outlet_coordinates()
    for i, outlet_id in enumerate(space.outlet_ids):
        records.append(
            {"entity_id": outlet_id, "kind": "outlet", "coordinates": outlet_coords[i].tolist()}
        )
    cluster_coords = space.cluster_coordinates()
    for j, cluster_id in enumerate(space.cluster_ids):
        records.append(
            {"entity_id": cluster_id, "kind": "cluster", "coordinates": cluster_coords[j].tolist()}
        )
    for name in sorted(projections):
        proj = projections[name]
        for k, label in enumerate(proj.feature_labels):
            records.append(
                {
                    "entity_id": f"{name}:{label}",
                    "kind": "feature",
                    "coordinates": proj.l[k].tolist(),
                }
            )
    return records
