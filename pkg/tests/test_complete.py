import numpy as np
import pytest

from oracles import fista_nuclear, metrics_oracle
from quotus.complete import (
    Baselines,
    CompletionError,
    QuoteMatrix,
    baseline_scores,
    build_matrix,
    confusion_counts,
    evaluate,
    fixed_point_residual,
    load_model,
    precision_recall_f1_mcc,
    save_model,
    soft_impute,
    tune_and_evaluate,
    tune_completion,
    tune_threshold,
)


def toy_edges():
    return [("o1", "c1"), ("o1", "c2"), ("o2", "c1"), ("o3", "c3")]


def dense_matrix(x, mask=None):
    """QuoteMatrix whose normalized view is `x` itself (solver test harness)."""
    n, m = x.shape
    mask = np.ones_like(x, dtype=bool) if mask is None else mask
    return QuoteMatrix(
        tuple(f"o{i}" for i in range(n)), tuple(f"c{j}" for j in range(m)), x, mask, x, x
    )


class TestBuildMatrix:
    def test_even_split(self):
        m, dev, test = build_matrix(toy_edges(), ["o1", "o2", "o3"], ["c1", "c2", "c3", "c4"], 10, 0)
        assert len(dev) == 5 and len(test) == 5
        assert m.mask.sum() == 12 - 10

    def test_holdout_too_large(self):
        with pytest.raises(CompletionError):
            build_matrix(toy_edges(), ["o1", "o2", "o3"], ["c1", "c2", "c3", "c4"], 12, 0)

    def test_column_weighting(self):
        edges = [(f"o{i}", "c0") for i in range(4)]
        m, _, _ = build_matrix(edges, [f"o{i}" for i in range(4)], ["c0", "c1"], 0, 0)
        nz = m.xbar[:, 0]
        assert np.allclose(nz, 0.5)  # 1/sqrt(4)

    def test_row_normalization(self):
        m, _, _ = build_matrix(toy_edges(), ["o1", "o2", "o3"], ["c1", "c2", "c3"], 0, 0)
        norms = np.linalg.norm(np.where(m.mask, m.xtilde, 0.0), axis=1)
        nonzero = norms[norms > 0]
        assert np.allclose(nonzero, 1.0)

    def test_holdout_reproducible(self):
        _, dev1, test1 = build_matrix(toy_edges(), ["o1", "o2", "o3"], ["c1", "c2", "c3", "c4"], 6, 42)
        _, dev2, test2 = build_matrix(toy_edges(), ["o1", "o2", "o3"], ["c1", "c2", "c3", "c4"], 6, 42)
        assert np.array_equal(dev1.rows, dev2.rows) and np.array_equal(test1.cols, test2.cols)

    def test_holdout_hygiene(self):
        # Flipping the held-out values must not change the normalized views.
        outlets = [f"o{i}" for i in range(6)]
        clusters = [f"c{j}" for j in range(8)]
        rng = np.random.default_rng(0)
        edges = [(o, c) for o in outlets for c in clusters if rng.random() < 0.4]
        m, dev, test = build_matrix(edges, outlets, clusters, 12, seed := 3)
        flipped = m.x.copy()
        rows = np.concatenate([dev.rows, test.rows])
        cols = np.concatenate([dev.cols, test.cols])
        flipped[rows, cols] = 1.0 - flipped[rows, cols]
        from quotus.complete import _views

        xbar2, xtilde2 = _views(flipped, m.mask)
        assert np.array_equal(xbar2, m.xbar)
        assert np.array_equal(xtilde2, m.xtilde)
        model_a = soft_impute(m, 0.3, max_iters=200, tol=1e-12)
        m2 = QuoteMatrix(m.outlet_ids, m.cluster_ids, flipped, m.mask, xbar2, xtilde2)
        model_b = soft_impute(m2, 0.3, max_iters=200, tol=1e-12)
        assert np.array_equal(model_a.full_matrix(), model_b.full_matrix())


class TestBaselines:
    def test_popularity_independent_of_row(self):
        m, _, _ = build_matrix(toy_edges(), ["o1", "o2", "o3"], ["c1", "c2", "c3"], 0, 0)
        b = Baselines.from_matrix(m)
        score = baseline_scores(b, "popularity")
        rows = np.array([0, 1, 2])
        cols = np.array([0, 0, 0])
        assert len(set(score(rows, cols).tolist())) == 1

    def test_fully_cited_cluster_maximal(self):
        edges = [(f"o{i}", "c0") for i in range(3)] + [("o0", "c1")]
        m, _, _ = build_matrix(edges, [f"o{i}" for i in range(3)], ["c0", "c1"], 0, 0)
        b = Baselines.from_matrix(m)
        assert b.mu_q[0] == 1.0
        assert b.mu_q[0] == b.mu_q.max()

    def test_observed_only(self):
        x = np.array([[1.0, 1.0], [1.0, 0.0]])
        mask = np.array([[True, False], [True, True]])
        b = Baselines.from_matrix(dense_matrix(x, mask))
        assert b.mu_q[0] == 1.0
        assert b.mu_q[1] == 0.0  # the held-out 1 is invisible
        assert b.mu_s[0] == 1.0

    def test_unknown_mode(self):
        b = Baselines.from_matrix(dense_matrix(np.eye(2)))
        with pytest.raises(CompletionError):
            baseline_scores(b, "magic")


class TestSoftImpute:
    def _rank2_problem(self, seed=42):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(30, 2)) @ rng.normal(size=(2, 40))
        mask = rng.random((30, 40)) < 0.7
        return dense_matrix(a, mask)

    def test_matches_proximal_gradient_oracle(self):
        m = self._rank2_problem()
        model = soft_impute(m, 0.5, max_iters=5000, tol=1e-15)
        z_oracle = fista_nuclear(m.training_matrix(), m.mask, 0.5)
        assert np.linalg.norm(model.full_matrix() - z_oracle) < 1e-4

    def test_objective_monotone(self):
        m = self._rank2_problem(7)
        model = soft_impute(m, 0.4, max_iters=2000, tol=1e-14)
        trace = np.array(model.objective_trace)
        assert np.all(np.diff(trace) <= 1e-10)

    def test_kill_condition(self):
        m = self._rank2_problem(3)
        sigma_max = np.linalg.svd(m.training_matrix(), compute_uv=False)[0]
        model = soft_impute(m, float(sigma_max), max_iters=50, tol=1e-12)
        assert model.rank == 0
        assert np.all(model.full_matrix() == 0)

    def test_lambda_zero_full_observation_reconstructs(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(10, 12))
        m = dense_matrix(a)
        model = soft_impute(m, 0.0, max_iters=10, tol=1e-15)
        assert np.linalg.norm(model.full_matrix() - a) < 1e-8

    def test_fixed_point_residual(self):
        m = self._rank2_problem(11)
        model = soft_impute(m, 0.5, max_iters=5000, tol=1e-15)
        assert fixed_point_residual(m, model) < 1e-6

    def test_orthonormal_factors(self):
        m = self._rank2_problem(5)
        model = soft_impute(m, 0.3, max_iters=1000, tol=1e-12)
        r = model.rank
        assert np.abs(model.u.T @ model.u - np.eye(r)).max() < 1e-8
        assert np.abs(model.v.T @ model.v - np.eye(r)).max() < 1e-8
        assert np.all(np.diff(model.d) <= 0)

    def test_nonconvergence_warns(self):
        m = self._rank2_problem(9)
        with pytest.warns(UserWarning, match="did not converge"):
            model = soft_impute(m, 0.3, max_iters=3, tol=1e-15)
        assert not model.converged

    def test_lambda_path_nuclear_norm_monotone(self):
        m = self._rank2_problem(13)
        norms = []
        for lam in (2.0, 1.0, 0.5, 0.25, 0.1):
            model = soft_impute(m, lam, max_iters=2000, tol=1e-13)
            norms.append(model.d.sum())
        assert all(a <= b + 1e-8 for a, b in zip(norms, norms[1:]))

    def test_save_load_round_trip(self, tmp_path):
        m = self._rank2_problem(21)
        model = soft_impute(m, 0.5, max_iters=500, tol=1e-12)
        save_model(model, tmp_path / "model")
        loaded = load_model(tmp_path / "model")
        assert np.array_equal(loaded.u, model.u)
        assert np.array_equal(loaded.d, model.d)
        assert np.array_equal(loaded.v, model.v)
        assert loaded.lam == model.lam


class TestMetrics:
    def test_against_oracle_randomized(self):
        rng = np.random.default_rng(17)
        for _ in range(300):
            n = int(rng.integers(1, 60))
            labels = rng.random(n) < 0.4
            preds = rng.random(n) < 0.5
            got = precision_recall_f1_mcc(*confusion_counts(labels, preds))
            want = metrics_oracle(labels.tolist(), preds.tolist())
            for g, w in zip(got, want):
                assert abs(g - w) < 1e-12

    def test_report_consistent_with_counts(self):
        rng = np.random.default_rng(23)
        scores = rng.random(200)
        labels = (rng.random(200) < 0.3).astype(float)
        rep = evaluate(scores, labels, 0.5)
        assert rep.tp + rep.fp + rep.tn + rep.fn == 200
        p, r, f1, mcc = precision_recall_f1_mcc(rep.tp, rep.fp, rep.tn, rep.fn)
        assert (rep.precision, rep.recall, rep.f1, rep.mcc) == (p, r, f1, mcc)


class TestThresholdTuning:
    def test_perfect_scores(self):
        labels = np.array([0, 1, 0, 1, 1, 0], dtype=float)
        th, mcc = tune_threshold(labels.copy(), labels)
        assert mcc == 1.0
        rep = evaluate(labels.copy(), labels, th)
        assert rep.mcc == 1.0 and rep.f1 == 1.0

    def test_constant_scores_zero_mcc(self):
        labels = np.array([0, 1, 0, 1], dtype=float)
        th, mcc = tune_threshold(np.full(4, 0.7), labels)
        assert mcc == 0.0

    def test_single_class_errors(self):
        with pytest.raises(CompletionError, match="threshold tuning undefined"):
            tune_threshold(np.array([0.1, 0.2]), np.array([1.0, 1.0]))

    def test_exhaustive_over_distinct_scores(self):
        rng = np.random.default_rng(31)
        scores = rng.random(80)
        labels = (rng.random(80) < 0.35).astype(float)
        th, best = tune_threshold(scores, labels)
        for cand in np.unique(scores):
            rep = evaluate(scores, labels, float(cand))
            assert rep.mcc <= best + 1e-12

    def test_tune_and_evaluate_uses_frozen_threshold(self):
        rng = np.random.default_rng(37)
        from quotus.complete import EntrySet

        rows = np.arange(100)
        labels_dev = (rng.random(100) < 0.5).astype(float)
        labels_test = (rng.random(100) < 0.5).astype(float)
        dev = EntrySet(rows, rows, labels_dev)
        test = EntrySet(rows, rows, labels_test)
        score_fn = lambda r, c: labels_dev[r]
        rep = tune_and_evaluate(score_fn, dev, test)
        assert rep.threshold == 1.0


class TestTuneCompletion:
    def test_lambda_path_selects_best_dev(self):
        rng = np.random.default_rng(5)
        outlets = [f"o{i}" for i in range(20)]
        clusters = [f"c{j}" for j in range(50)]
        u = rng.normal(size=(20, 2))
        v = rng.normal(size=(50, 2))
        probs = 1 / (1 + np.exp(-(u @ v.T) * 1.5 + 1.0))
        x = rng.random((20, 50)) < probs
        edges = [(outlets[i], clusters[j]) for i, j in zip(*np.nonzero(x))]
        matrix, dev, test = build_matrix(edges, outlets, clusters, 100, 2)
        model, report, path = tune_completion(matrix, dev, test, [1.5, 0.8, 0.4, 0.2], tol=1e-10)
        assert len(path) == 4
        assert [p["lambda"] for p in path] == sorted([p["lambda"] for p in path], reverse=True)
        best_dev = max(p["dev_mcc"] for p in path)
        chosen = [p for p in path if p["lambda"] == model.lam][0]
        assert chosen["dev_mcc"] == best_dev
        nuclear = [p["nuclear_norm"] for p in path]
        assert all(a <= b + 1e-8 for a, b in zip(nuclear, nuclear[1:]))
