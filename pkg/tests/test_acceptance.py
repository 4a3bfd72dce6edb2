"""Acceptance gate: one test per criterion, each printing a pass/fail line.

All expected values are either computed by the independent oracles in
oracles.py, derived analytically from planted constructions, or committed
with the mini-corpus fixture by its generator.
"""

import json
import math
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from oracles import fista_nuclear, metrics_oracle, oracle_align, spearman_oracle
from quotus import jsonl
from quotus.align import AlignmentParams, substring_align
from quotus.bigraph import BipartiteGraph, default_swaps, rewire, surprise
from quotus.cli import main as cli_main
from quotus.complete import (
    Baselines,
    baseline_scores,
    build_matrix,
    confusion_counts,
    fixed_point_residual,
    precision_recall_f1_mcc,
    soft_impute,
    tune_and_evaluate,
    tune_completion,
)
from quotus.corpus import Segment, Transcript
from quotus.dedupcluster import cluster_matches
from quotus.latent import FeatureMatrix, decompose, project_features, rank_outlets, spearman

MINI = Path(__file__).parent / "fixtures" / "mini_corpus"
PARAMS = AlignmentParams()


def transcript_of(tokens, tid="tr", ts=0):
    tokens = tuple(tokens)
    return Transcript(tid, ts, (Segment("S", " ".join(tokens), tokens, 0, len(tokens)),), tokens)


def test_c01_alignment_matches_bruteforce_oracle():
    """500 randomized instances; accept/reject and score equal the all-windows
    NW oracle exactly; under 10 seconds."""
    rng = np.random.default_rng(20240101)
    start = time.monotonic()
    accepted = 0
    for case in range(500):
        m = int(rng.integers(6, 61))
        tr_tokens = [f"v{k}" for k in rng.integers(0, max(4, m // 2), size=m)]
        if case % 2 == 0:
            # Quote = transcript span with injected edits.
            n = int(rng.integers(2, 13))
            a = int(rng.integers(0, m - min(n, m) + 1))
            quote = list(tr_tokens[a : a + n])
            n = len(quote)
            for _ in range(int(rng.integers(0, n))):
                op = rng.integers(0, 3)
                pos = int(rng.integers(0, len(quote)))
                if op == 0:
                    quote[pos] = f"z{rng.integers(0, 1000)}"
                elif op == 1 and len(quote) > 2:
                    del quote[pos]
                elif len(quote) < 12:
                    quote.insert(pos, f"z{rng.integers(0, 1000)}")
        else:
            quote = [f"v{k}" for k in rng.integers(0, 8, size=rng.integers(2, 13))]
        got = substring_align(quote, transcript_of(tr_tokens), PARAMS)
        want = oracle_align(quote, tr_tokens, PARAMS)
        assert (got is None) == (want is None), (quote, tr_tokens)
        if got is not None:
            accepted += 1
            assert got[1] == want[1]
            assert got[0] == want[0]
    elapsed = time.monotonic() - start
    assert elapsed < 10.0, f"took {elapsed:.1f}s"
    assert accepted > 50  # both branches exercised


def test_c02_threshold_boundary_exact():
    """ceil(0.4*|q|) interior edits accepted, one more rejected, |q| in 6..15."""
    for n in range(6, 16):
        budget = math.ceil(0.4 * n - 1e-9)
        tr_tokens = [f"u{i}" for i in range(40)]
        tr = transcript_of(tr_tokens)
        quote = list(tr_tokens[5 : 5 + n])
        for k in range(budget):
            quote[1 + k] = f"x{k}"
        hit = substring_align(quote, tr, PARAMS)
        assert hit is not None, f"|q|={n}: {budget} edits must be accepted"
        assert hit[0] == (5, 5 + n)
        assert hit[1] == -budget / n
        rejected = list(quote)
        assert 1 + budget < n - 1
        rejected[1 + budget] = "xmore"
        assert substring_align(rejected, tr, PARAMS) is None, (
            f"|q|={n}: {budget + 1} edits must be rejected"
        )


def test_c03_clustering_chaining_and_permutation_invariance():
    from quotus.align import MatchRecord

    def match(occ_id, span):
        return MatchRecord(occ_id, "a", "o", "tr1", span[0], span[1], 0.0, "q")

    # Stated chaining spans overlap pairwise by exactly 2 tokens; they chain
    # (one cluster, span [0,26)) at the largest threshold admitting them.
    ms = [match("m1", (0, 10)), match("m2", (8, 18)), match("m3", (16, 26))]
    clusters = cluster_matches(ms, min_overlap=2)
    assert len(clusters) == 1
    assert clusters[0].span == (0, 26)
    # Five-token overlap merges and four-token overlap splits at the default.
    merged = cluster_matches([match("m1", (10, 20)), match("m2", (15, 25))])
    assert len(merged) == 1 and merged[0].span == (10, 25)
    split = cluster_matches([match("m1", (10, 20)), match("m2", (16, 25))])
    assert len(split) == 2
    # Permutation invariance on a random instance.
    rng = np.random.default_rng(3)
    pool = []
    for k in range(50):
        start = int(rng.integers(0, 150))
        pool.append(match(f"m{k:03d}", (start, start + int(rng.integers(6, 18)))))
    reference = cluster_matches(pool)
    for _ in range(20):
        shuffled = [pool[i] for i in rng.permutation(len(pool))]
        assert cluster_matches(shuffled) == reference


def _synthetic_bigraph(seed, n_outlets=50, n_clusters=500, cites=30):
    rng = np.random.default_rng(seed)
    edges = []
    for o in range(n_outlets):
        for c in rng.choice(n_clusters, size=cites, replace=False):
            edges.append((f"o{o:02d}", f"c{c:03d}"))
    return BipartiteGraph.from_edges(
        sorted(set(edges)),
        [f"o{i:02d}" for i in range(n_outlets)],
        [f"c{j:03d}" for j in range(n_clusters)],
    )


def test_c04_rewiring_preserves_degrees_and_mixes():
    g = _synthetic_bigraph(8)
    overlaps = []
    for seed in range(10):
        r = rewire(g, default_swaps(g), seed=seed)
        assert np.array_equal(g.outlet_degrees(), r.outlet_degrees())
        assert np.array_equal(g.cluster_degrees(), r.cluster_degrees())
        overlaps.append(len(g.edge_set() & r.edge_set()) / g.num_edges)
    assert float(np.mean(overlaps)) < 0.60, overlaps


def _er_bigraph(seed, n_o=40, n_c=200, p=0.1):
    rng = np.random.default_rng(seed)
    mat = rng.random((n_o, n_c)) < p
    edges = [(f"o{i:02d}", f"c{j:03d}") for i, j in zip(*np.nonzero(mat))]
    return BipartiteGraph.from_edges(
        edges, [f"o{i:02d}" for i in range(n_o)], [f"c{j:03d}" for j in range(n_c)]
    )


def _planted_affinity(seed, n_outlets=50, n_clusters=500):
    """Category B cites clusters already cited by category A at 3x its base rate."""
    rng = np.random.default_rng(seed)
    edges = set()
    for o in range(10):
        for c in np.nonzero(rng.random(n_clusters) < 0.06)[0]:
            edges.add((o, int(c)))
    a_clusters = {c for _, c in edges}
    base = 0.025
    for o in range(10, 20):
        draws = rng.random(n_clusters)
        for c in range(n_clusters):
            if draws[c] < (3 * base if c in a_clusters else base):
                edges.add((o, c))
    for o in range(20, n_outlets):
        for c in np.nonzero(rng.random(n_clusters) < 0.04)[0]:
            edges.add((o, int(c)))
    return BipartiteGraph.from_edges(
        sorted((f"o{o:02d}", f"c{c:03d}") for o, c in edges),
        [f"o{i:02d}" for i in range(n_outlets)],
        [f"c{j:03d}" for j in range(n_clusters)],
    )


def test_c05_surprise_calibration_and_planted_affinity():
    start = time.monotonic()
    # Null calibration: random categories on null graphs.
    svals = []
    for t in range(100):
        g = _er_bigraph(10_000 + t)
        rng = np.random.default_rng(30_000 + t)
        perm = rng.permutation(40)
        a = [f"o{i:02d}" for i in perm[:8]]
        b = [f"o{i:02d}" for i in perm[8:16]]
        res = surprise(g, a, b, num_graphs=60, swaps_per_graph=3 * g.num_edges, seed=20_000 + t)
        svals.append(res.surprise)
    svals = np.array(svals)
    assert -0.3 <= svals.mean() <= 0.3, svals.mean()
    assert 0.7 <= svals.std(ddof=1) <= 1.4, svals.std(ddof=1)
    # Planted affinity: surprise exceeds 2 in at least 19 of 20 seeds.
    hits = 0
    for seed in range(20):
        g = _planted_affinity(40_000 + seed)
        res = surprise(
            g,
            [f"o{i:02d}" for i in range(10)],
            [f"o{i:02d}" for i in range(10, 20)],
            num_graphs=200,
            swaps_per_graph=10 * g.num_edges,
            seed=50_000 + seed,
        )
        hits += res.surprise > 2.0
    assert hits >= 19, f"only {hits}/20 planted seeds exceeded S=2"
    elapsed = time.monotonic() - start
    assert elapsed < 120.0, f"took {elapsed:.1f}s"


def test_c06_solver_against_proximal_gradient_oracle():
    from quotus.complete import QuoteMatrix

    rng = np.random.default_rng(42)
    target = rng.normal(size=(30, 2)) @ rng.normal(size=(2, 40))
    mask = rng.random((30, 40)) < 0.7
    matrix = QuoteMatrix(
        tuple(f"o{i}" for i in range(30)),
        tuple(f"c{j}" for j in range(40)),
        target,
        mask,
        target,
        target,
    )
    model = soft_impute(matrix, 0.5, max_iters=5000, tol=1e-15)
    z_oracle = fista_nuclear(matrix.training_matrix(), mask, 0.5)
    assert np.linalg.norm(model.full_matrix() - z_oracle) < 1e-4
    trace = np.array(model.objective_trace)
    assert np.all(np.diff(trace) <= 1e-10)
    assert fixed_point_residual(matrix, model) < 1e-6
    sigma_max = float(np.linalg.svd(matrix.training_matrix(), compute_uv=False)[0])
    killed = soft_impute(matrix, sigma_max, max_iters=50, tol=1e-12)
    assert killed.rank == 0 and np.all(killed.full_matrix() == 0)


def test_c07_completion_lifts_over_baselines():
    """Planted rank-3 logistic matrix, ~2% positives: tuned completion beats
    the popularity+propensity baseline by >= 1.5x test MCC in >= 4/5 seeds."""
    start = time.monotonic()
    wins = 0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        u = rng.normal(size=(100, 3))
        v = rng.normal(size=(2000, 3))
        logits = 1.7 * (u @ v.T) - 7.4
        x = rng.random((100, 2000)) < 1.0 / (1.0 + np.exp(-logits))
        assert 0.01 < x.mean() < 0.03
        outlets = [f"o{i:03d}" for i in range(100)]
        clusters = [f"c{j:04d}" for j in range(2000)]
        edges = [(outlets[i], clusters[j]) for i, j in zip(*np.nonzero(x))]
        matrix, dev, test = build_matrix(edges, outlets, clusters, 20_000, 1000 + seed)
        baselines = Baselines.from_matrix(matrix)
        rep_pp = tune_and_evaluate(baseline_scores(baselines, "popularity+propensity"), dev, test)
        sigma = float(np.linalg.svd(matrix.training_matrix(), compute_uv=False)[0])
        grid = [sigma * f for f in (0.5, 0.3, 0.2, 0.12, 0.07, 0.04)]
        _, rep_mc, _ = tune_completion(matrix, dev, test, grid, max_iters=300, tol=1e-7)
        if rep_pp.mcc > 0 and rep_mc.mcc >= 1.5 * rep_pp.mcc:
            wins += 1
    assert wins >= 4, f"only {wins}/5 seeds reached the 1.5x lift"
    elapsed = time.monotonic() - start
    assert elapsed < 300.0, f"took {elapsed:.1f}s"


def test_c08_latent_recovery_projection_and_spearman():
    from quotus.complete import QuoteMatrix

    # Three disjoint outlet/cluster blocks of distinct sizes.
    blocks = [(0, 8, 0, 60), (8, 14, 60, 100), (14, 19, 100, 130)]
    x = np.zeros((19, 130))
    for r0, r1, c0, c1 in blocks:
        x[r0:r1, c0:c1] = 1.0
    from quotus.complete import _views

    mask = np.ones_like(x, dtype=bool)
    xbar, xtilde = _views(x, mask)
    matrix = QuoteMatrix(
        tuple(f"o{i:02d}" for i in range(19)),
        tuple(f"c{j:03d}" for j in range(130)),
        x,
        mask,
        xbar,
        xtilde,
    )
    space = decompose(matrix, 3)
    coords = space.outlet_coordinates()
    assignment = np.argmax(np.abs(coords), axis=1)
    block_of_dim = {}
    for b, (r0, r1, _, _) in enumerate(blocks):
        dims = set(assignment[r0:r1].tolist())
        assert len(dims) == 1, f"block {b} split across dimensions"
        block_of_dim[dims.pop()] = b
    assert len(block_of_dim) == 3  # bijective: 100% purity
    for dim in range(3):
        r0, r1, _, _ = blocks[block_of_dim[dim]]
        ranking = rank_outlets(space, dim)
        top = {o for o, _ in ranking[: r1 - r0]}
        assert top == {f"o{i:02d}" for i in range(r0, r1)}
        scores = dict(ranking)
        assert all(scores[f"o{i:02d}"] > 1e-8 for i in range(r0, r1))
        others = [s for o, s in ranking if o not in top]
        assert all(abs(s) < 1e-8 for s in others)

    # Projection identity L*S = F~ V to 1e-10.
    rng = np.random.default_rng(77)
    f = FeatureMatrix.from_raw("t", ["a", "b", "c"], np.abs(rng.normal(size=(3, 130))))
    proj = project_features(f, space)
    assert np.abs(proj.l * space.s - f.scaled @ space.v).max() < 1e-10

    # Spearman equals the rank-then-Pearson oracle to 1e-12.
    x1 = rng.normal(size=1000)
    y1 = np.round(rng.normal(size=1000), 1)  # heavy ties
    rho, _ = spearman(x1, y1)
    assert abs(rho - spearman_oracle(x1, y1)) < 1e-12
    for _ in range(50):
        n = int(rng.integers(5, 40))
        xs = np.round(rng.normal(size=n), 1)
        ys = rng.normal(size=n)
        rho, _ = spearman(xs, ys)
        assert abs(rho - spearman_oracle(xs, ys)) < 1e-12


def test_c09_end_to_end_determinism_and_fixture_locks(tmp_path):
    expected = json.loads((MINI / "expected.json").read_text())
    workdirs = [tmp_path / "run_a", tmp_path / "run_b"]
    for wd in workdirs:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rc = cli_main(
                ["all", "--config", str(MINI / "config.json"), "--workdir", str(wd)]
            )
        assert rc == 0

    # Byte-identical artifacts across the two runs.
    a, b = workdirs
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), f"{rel} differs"

    # Fixture-locked counts and values.
    work = a
    dropped = [rec for _, rec in jsonl.read_records(work / "match/dropped_articles.jsonl")]
    assert len(dropped) == expected["dedup_dropped"]
    assert sorted([d["dropped_id"], d["kept_id"]] for d in dropped) == expected["dropped_pairs"]
    matches = list(jsonl.read_records(work / "match/matches.jsonl"))
    assert len(matches) == expected["matches"]
    clusters = [rec for _, rec in jsonl.read_records(work / "cluster/clusters.jsonl")]
    assert len(clusters) == expected["clusters"]
    assert sorted(c["cluster_id"] for c in clusters) == expected["cluster_ids"]
    edges = [rec for _, rec in jsonl.read_records(work / "graph/edges.jsonl")]
    assert edges == expected["edge_list"]
    tracks = jsonl.read_json(work / "report/data/token_volume.json")["tracks"]
    track = next(t for t in tracks if t["transcript_id"] == expected["token_volume"]["transcript_id"])
    assert track["overall"] == expected["token_volume"]["overall"]
    assert track["by_category"] == expected["token_volume"]["by_category"]

    # Corpus shape demanded of the fixture.
    ingest = jsonl.read_json(work / "ingest/summary.json")
    assert ingest["transcripts"] >= 5
    assert ingest["articles"] >= 200
    assert ingest["outlets"] >= 12


def test_c10_metric_oracle_exact():
    rng = np.random.default_rng(5150)
    for _ in range(1000):
        n = int(rng.integers(1, 50))
        labels = rng.random(n) < rng.uniform(0.1, 0.9)
        preds = rng.random(n) < rng.uniform(0.1, 0.9)
        got = precision_recall_f1_mcc(*confusion_counts(labels, preds))
        want = metrics_oracle(labels.tolist(), preds.tolist())
        for g, w in zip(got, want):
            assert abs(g - w) < 1e-12
