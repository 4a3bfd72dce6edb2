"""Outlet-to-quote bipartite graph, rewiring null model, and surprise.

The proportion-score M(B|A) is the average, over edges (u, v) leaving
category A, of the fraction of v's citers that belong to category B
(excluding u itself).  Surprise standardizes the observed score against
an ensemble of degree-preserving rewirings.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np


class GraphError(ValueError):
    """Raised for degenerate graph queries (empty categories, null variance)."""


@dataclass(frozen=True)
class BipartiteGraph:
    """Directed bipartite graph from outlets to quote clusters.

    Edges are stored as parallel index arrays into ``outlet_ids`` and
    ``cluster_ids``; the edge list is kept in a canonical sorted order so
    identically-constructed graphs compare equal.
    """

    outlet_ids: tuple[str, ...]
    cluster_ids: tuple[str, ...]
    edge_outlets: np.ndarray
    edge_clusters: np.ndarray

    @classmethod
    def from_edges(
        cls,
        edges: Iterable[tuple[str, str]],
        outlet_ids: Optional[Sequence[str]] = None,
        cluster_ids: Optional[Sequence[str]] = None,
    ) -> "BipartiteGraph":
        edges = list(edges)
        if outlet_ids is None:
            outlet_ids = sorted({o for o, _ in edges})
        if cluster_ids is None:
            cluster_ids = sorted({c for _, c in edges})
        o_index = {o: i for i, o in enumerate(outlet_ids)}
        c_index = {c: i for i, c in enumerate(cluster_ids)}
        pairs = sorted({(o_index[o], c_index[c]) for o, c in edges})
        if len(pairs) != len(edges):
            raise GraphError("duplicate edges")
        eo = np.fromiter((p[0] for p in pairs), dtype=np.int64, count=len(pairs))
        ec = np.fromiter((p[1] for p in pairs), dtype=np.int64, count=len(pairs))
        return cls(tuple(outlet_ids), tuple(cluster_ids), eo, ec)

    @property
    def num_edges(self) -> int:
        return len(self.edge_outlets)

    def outlet_degrees(self) -> np.ndarray:
        return np.bincount(self.edge_outlets, minlength=len(self.outlet_ids))

    def cluster_degrees(self) -> np.ndarray:
        return np.bincount(self.edge_clusters, minlength=len(self.cluster_ids))

    def edge_set(self) -> set[tuple[int, int]]:
        return set(zip(self.edge_outlets.tolist(), self.edge_clusters.tolist()))

    def outlet_index(self, ids: Iterable[str]) -> np.ndarray:
        lookup = {o: i for i, o in enumerate(self.outlet_ids)}
        try:
            return np.array(sorted(lookup[o] for o in ids), dtype=np.int64)
        except KeyError as exc:
            raise GraphError(f"unknown outlet id {exc.args[0]!r}") from exc


@dataclass(frozen=True)
class SurpriseResult:
    m_original: float
    m_null_mean: float
    m_null_var: float
    surprise: float


def proportion_score(
    graph: BipartiteGraph,
    category_a: Iterable[str],
    category_b: Iterable[str],
) -> float:
    """M(B|A): how often quotes cited from A are also cited by B.

    For every edge (u, v) with u in A, count the citers of v that lie in B
    other than u, divide by v's total in-degree, and average over A's edges.
    """
    a_idx = graph.outlet_index(category_a)
    b_idx = graph.outlet_index(category_b)
    in_a = np.zeros(len(graph.outlet_ids), dtype=bool)
    in_a[a_idx] = True
    in_b = np.zeros(len(graph.outlet_ids), dtype=bool)
    in_b[b_idx] = True
    return _proportion_score_indexed(
        graph.edge_outlets, graph.edge_clusters, len(graph.cluster_ids), in_a, in_b
    )


def _proportion_score_indexed(
    edge_outlets: np.ndarray,
    edge_clusters: np.ndarray,
    num_clusters: int,
    in_a: np.ndarray,
    in_b: np.ndarray,
) -> float:
    a_edge_mask = in_a[edge_outlets]
    n_out = int(a_edge_mask.sum())
    if n_out == 0:
        raise GraphError("category A has no edges")
    in_deg = np.bincount(edge_clusters, minlength=num_clusters)
    b_citers = np.bincount(
        edge_clusters, weights=in_b[edge_outlets].astype(np.float64), minlength=num_clusters
    )
    v = edge_clusters[a_edge_mask]
    u_in_b = in_b[edge_outlets[a_edge_mask]]
    inner = (b_citers[v] - u_in_b) / in_deg[v]
    return float(inner.sum() / n_out)


def rewire(graph: BipartiteGraph, swaps: int, seed: int) -> BipartiteGraph:
    """Degree-preserving randomization via attempted double-edge swaps.

    Each attempt draws two edge positions; the swap is skipped (still
    consuming an attempt) when the endpoints collide or a replacement edge
    already exists.  Both degree sequences are preserved exactly.
    """
    if graph.num_edges < 2:
        raise GraphError("rewiring needs at least 2 edges")
    rng = np.random.default_rng(seed)
    us = graph.edge_outlets.tolist()
    vs = graph.edge_clusters.tolist()
    num_clusters = len(graph.cluster_ids)
    present = {u * num_clusters + v for u, v in zip(us, vs)}
    draws = rng.integers(0, len(us), size=2 * swaps).tolist()
    for k in range(swaps):
        i = draws[2 * k]
        j = draws[2 * k + 1]
        u1, v1 = us[i], vs[i]
        u2, v2 = us[j], vs[j]
        if u1 == u2 or v1 == v2:
            continue
        e1 = u2 * num_clusters + v1
        e2 = u1 * num_clusters + v2
        if e1 in present or e2 in present:
            continue
        present.remove(u1 * num_clusters + v1)
        present.remove(u2 * num_clusters + v2)
        present.add(e1)
        present.add(e2)
        vs[i], vs[j] = v2, v1
    order = sorted(range(len(us)), key=lambda k: (us[k], vs[k]))
    eo = np.array([us[k] for k in order], dtype=np.int64)
    ec = np.array([vs[k] for k in order], dtype=np.int64)
    return BipartiteGraph(graph.outlet_ids, graph.cluster_ids, eo, ec)


def default_swaps(graph: BipartiteGraph, per_edge: int = 10) -> int:
    return per_edge * graph.num_edges


def surprise(
    graph: BipartiteGraph,
    category_a: Iterable[str],
    category_b: Iterable[str],
    num_graphs: int = 200,
    swaps_per_graph: Optional[int] = None,
    seed: int = 0,
) -> SurpriseResult:
    """Standardized deviation of M(B|A) from the rewiring null model.

    Ensemble graph k is rewired with seed ``seed + k`` so the result does
    not depend on generation order.  The variance is the unbiased (n-1)
    estimate; a zero-variance ensemble is an error.
    """
    if swaps_per_graph is None:
        swaps_per_graph = default_swaps(graph)
    in_a = np.zeros(len(graph.outlet_ids), dtype=bool)
    in_a[graph.outlet_index(category_a)] = True
    in_b = np.zeros(len(graph.outlet_ids), dtype=bool)
    in_b[graph.outlet_index(category_b)] = True
    num_clusters = len(graph.cluster_ids)
    m_orig = _proportion_score_indexed(
        graph.edge_outlets, graph.edge_clusters, num_clusters, in_a, in_b
    )
    samples = np.empty(num_graphs)
    for k in range(num_graphs):
        g = rewire(graph, swaps_per_graph, seed + k)
        samples[k] = _proportion_score_indexed(
            g.edge_outlets, g.edge_clusters, num_clusters, in_a, in_b
        )
    mean = float(samples.mean())
    var = float(samples.var(ddof=1)) if num_graphs > 1 else 0.0
    if var <= 0.0:
        raise GraphError("degenerate null distribution")
    return SurpriseResult(m_orig, mean, var, (m_orig - mean) / var**0.5)


def categories_from_labels(
    labels: Mapping[str, str], names: Sequence[str] = ("dC", "sC", "sL", "dL")
) -> dict[str, list[str]]:
    """Invert an outlet -> label mapping into label -> outlet lists."""
    out: dict[str, list[str]] = {name: [] for name in names}
    for outlet_id in sorted(labels):
        label = labels[outlet_id]
        if label in out:
            out[label].append(outlet_id)
    return out
