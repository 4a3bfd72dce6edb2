"""Quote-matrix construction, baselines, and nuclear-norm matrix completion.

The binary outlet-by-cluster matrix is reweighted in two steps: columns are
scaled by 1/sqrt(citation count) and rows are then normalized to unit
Euclidean norm.  Held-out entries are treated as unobserved everywhere, so
they influence neither the normalizations nor the training residuals.

The completion solver minimizes

    0.5 * ||P_obs(Xt) - P_obs(Z)||_F^2 + lam * ||Z||_*

by iterating the soft-thresholded SVD of the observed data completed with
the current estimate; the objective is non-increasing and the fixed point
satisfies Z = svd_shrink(P_obs(Xt) + P_unobs(Z), lam).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import jsonl


class CompletionError(ValueError):
    pass


@dataclass(frozen=True)
class EntrySet:
    """Matrix positions with their true binary labels."""

    rows: np.ndarray
    cols: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.rows)


@dataclass(frozen=True)
class QuoteMatrix:
    outlet_ids: tuple[str, ...]
    cluster_ids: tuple[str, ...]
    x: np.ndarray
    mask: np.ndarray
    xbar: np.ndarray = field(repr=False)
    xtilde: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.x.shape

    def training_matrix(self) -> np.ndarray:
        """X-tilde with unobserved entries zero-filled."""
        return np.where(self.mask, self.xtilde, 0.0)


def _views(x: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    observed = np.where(mask, x, 0.0)
    col_sums = observed.sum(axis=0)
    xbar = np.zeros_like(observed)
    np.divide(observed, np.sqrt(col_sums), out=xbar, where=col_sums > 0)
    row_norms = np.linalg.norm(xbar, axis=1)
    xtilde = np.zeros_like(xbar)
    np.divide(xbar, row_norms[:, None], out=xtilde, where=row_norms[:, None] > 0)
    return xbar, xtilde


def build_matrix(
    edges: Iterable[tuple[str, str]],
    outlet_ids: Sequence[str],
    cluster_ids: Sequence[str],
    holdout_count: int,
    holdout_seed: int,
) -> tuple[QuoteMatrix, EntrySet, EntrySet]:
    """Build the binary matrix and sample a held-out development/test split.

    Held-out positions are drawn uniformly without replacement over all
    matrix positions; the first half of the draw is the development set and
    the rest the test set.
    """
    n, m = len(outlet_ids), len(cluster_ids)
    total = n * m
    if holdout_count >= total:
        raise CompletionError(
            f"holdout count {holdout_count} must be smaller than matrix size {total}"
        )
    o_index = {o: i for i, o in enumerate(outlet_ids)}
    c_index = {c: i for i, c in enumerate(cluster_ids)}
    x = np.zeros((n, m))
    for outlet_id, cluster_id in edges:
        x[o_index[outlet_id], c_index[cluster_id]] = 1.0
    rng = np.random.default_rng(holdout_seed)
    held = rng.choice(total, size=holdout_count, replace=False)
    rows, cols = np.divmod(held, m)
    mask = np.ones((n, m), dtype=bool)
    mask[rows, cols] = False
    half = holdout_count // 2
    dev = EntrySet(rows[:half], cols[:half], x[rows[:half], cols[:half]])
    test = EntrySet(rows[half:], cols[half:], x[rows[half:], cols[half:]])
    xbar, xtilde = _views(x, mask)
    return QuoteMatrix(tuple(outlet_ids), tuple(cluster_ids), x, mask, xbar, xtilde), dev, test


@dataclass(frozen=True)
class Baselines:
    """Observed-entry means: per-cluster popularity and per-outlet propensity."""

    mu_q: np.ndarray
    mu_s: np.ndarray

    @classmethod
    def from_matrix(cls, matrix: QuoteMatrix) -> "Baselines":
        observed = np.where(matrix.mask, matrix.x, 0.0)
        col_n = matrix.mask.sum(axis=0)
        row_n = matrix.mask.sum(axis=1)
        mu_q = np.divide(
            observed.sum(axis=0), col_n, out=np.zeros(matrix.shape[1]), where=col_n > 0
        )
        mu_s = np.divide(
            observed.sum(axis=1), row_n, out=np.zeros(matrix.shape[0]), where=row_n > 0
        )
        return cls(mu_q, mu_s)


def baseline_scores(
    baselines: Baselines, mode: str
) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Ranking score for entry (i, j): popularity, optionally plus propensity."""
    if mode == "popularity":
        return lambda rows, cols: baselines.mu_q[cols]
    if mode == "popularity+propensity":
        return lambda rows, cols: baselines.mu_q[cols] + baselines.mu_s[rows]
    raise CompletionError(f"unknown baseline mode {mode!r}")


@dataclass(frozen=True)
class CompletionModel:
    u: np.ndarray
    d: np.ndarray
    v: np.ndarray
    lam: float
    objective_trace: tuple[float, ...]
    converged: bool

    @property
    def rank(self) -> int:
        return len(self.d)

    def predict_entries(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        if self.rank == 0:
            return np.zeros(len(rows))
        return np.einsum("ik,k,ik->i", self.u[rows], self.d, self.v[cols])

    def full_matrix(self) -> np.ndarray:
        return (self.u * self.d) @ self.v.T

    def score_fn(self) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
        return self.predict_entries


def _shrink_svd(w: np.ndarray, lam: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    u, s, vt = np.linalg.svd(w, full_matrices=False)
    d = np.maximum(s - lam, 0.0)
    # Components at rounding noise relative to the spectrum count as zero.
    tiny = max(w.shape) * np.finfo(float).eps * (s[0] if len(s) else 0.0)
    r = int((d > tiny).sum())
    return u[:, :r], d[:r], vt[:r].T


def soft_impute(
    matrix: QuoteMatrix,
    lam: float,
    max_iters: int = 500,
    tol: float = 1e-9,
    init: Optional[CompletionModel] = None,
) -> CompletionModel:
    """Soft-thresholded SVD iteration for the nuclear-norm objective.

    Stops when the relative objective decrease falls below ``tol``; if
    ``max_iters`` is exhausted first the model is returned with
    ``converged=False`` and a warning.
    """
    if lam < 0:
        raise CompletionError("lambda must be >= 0")
    x_obs = matrix.training_matrix()
    mask = matrix.mask
    if not mask.any():
        raise CompletionError("observation mask is empty")
    unobs = ~mask
    z = np.zeros_like(x_obs) if init is None else init.full_matrix()
    trace: list[float] = []
    u = np.zeros((x_obs.shape[0], 0))
    d = np.zeros(0)
    v = np.zeros((x_obs.shape[1], 0))
    converged = False
    prev_obj = None
    for _ in range(max_iters):
        w = x_obs.copy()
        w[unobs] = z[unobs]
        u, d, v = _shrink_svd(w, lam)
        z = (u * d) @ v.T
        residual = np.where(mask, x_obs - z, 0.0)
        obj = 0.5 * float((residual**2).sum()) + lam * float(d.sum())
        trace.append(obj)
        if prev_obj is not None and prev_obj - obj <= tol * max(abs(prev_obj), 1.0):
            converged = True
            break
        prev_obj = obj
    if not converged:
        warnings.warn(
            f"soft_impute did not converge in {max_iters} iterations (lambda={lam})",
            stacklevel=2,
        )
    return CompletionModel(u, d, v, lam, tuple(trace), converged)


def fixed_point_residual(matrix: QuoteMatrix, model: CompletionModel) -> float:
    """Frobenius distance between the model and one more solver step."""
    z = model.full_matrix()
    w = matrix.training_matrix()
    w[~matrix.mask] = z[~matrix.mask]
    u, d, v = _shrink_svd(w, model.lam)
    return float(np.linalg.norm(z - (u * d) @ v.T))


def confusion_counts(
    labels: np.ndarray, predictions: np.ndarray
) -> tuple[int, int, int, int]:
    labels = np.asarray(labels, dtype=bool)
    predictions = np.asarray(predictions, dtype=bool)
    tp = int(np.sum(labels & predictions))
    fp = int(np.sum(~labels & predictions))
    tn = int(np.sum(~labels & ~predictions))
    fn = int(np.sum(labels & ~predictions))
    return tp, fp, tn, fn


def precision_recall_f1_mcc(
    tp: int, fp: int, tn: int, fn: int
) -> tuple[float, float, float, float]:
    """Binary metrics with the zero-denominator convention (metric = 0)."""
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = (tp * tn - fp * fn) / math.sqrt(denom) if denom > 0 else 0.0
    return precision, recall, f1, mcc


@dataclass(frozen=True)
class EvalReport:
    precision: float
    recall: float
    f1: float
    mcc: float
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int

    def to_record(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "mcc": self.mcc,
            "threshold": self.threshold,
            "counts": {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn},
        }


def tune_threshold(scores: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """MCC-maximizing decision threshold over the distinct score values.

    Predictions are positive when score >= threshold.  Ties in MCC resolve
    toward the largest threshold.  Returns (threshold, mcc).
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    pos = float(labels.sum())
    neg = float(len(labels) - pos)
    if pos == 0 or neg == 0:
        raise CompletionError("threshold tuning undefined")
    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    y_sorted = labels[order]
    # Last index of each run of equal scores = all entries >= that score.
    last = np.nonzero(np.diff(s_sorted) != 0)[0]
    last = np.concatenate([last, [len(s_sorted) - 1]])
    tp = np.cumsum(y_sorted)[last]
    fp = np.cumsum(1.0 - y_sorted)[last]
    fn = pos - tp
    tn = neg - fp
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    with np.errstate(invalid="ignore", divide="ignore"):
        mcc = np.where(denom > 0, (tp * tn - fp * fn) / np.sqrt(denom), 0.0)
    best = int(np.argmax(mcc))
    return float(s_sorted[last[best]]), float(mcc[best])


def evaluate(scores: np.ndarray, labels: np.ndarray, threshold: float) -> EvalReport:
    preds = np.asarray(scores, dtype=float) >= threshold
    tp, fp, tn, fn = confusion_counts(labels, preds)
    p, r, f1, mcc = precision_recall_f1_mcc(tp, fp, tn, fn)
    return EvalReport(p, r, f1, mcc, threshold, tp, fp, tn, fn)


def tune_and_evaluate(
    score_fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
    dev: EntrySet,
    test: EntrySet,
) -> EvalReport:
    """Tune the cutoff on the development set, report metrics on the test set."""
    dev_scores = np.asarray(score_fn(dev.rows, dev.cols), dtype=float)
    threshold, _ = tune_threshold(dev_scores, dev.labels)
    test_scores = np.asarray(score_fn(test.rows, test.cols), dtype=float)
    return evaluate(test_scores, test.labels, threshold)


def tune_completion(
    matrix: QuoteMatrix,
    dev: EntrySet,
    test: EntrySet,
    lambda_grid: Sequence[float],
    max_iters: int = 500,
    tol: float = 1e-9,
) -> tuple[CompletionModel, EvalReport, list[dict]]:
    """Fit the solver along a descending lambda grid and pick the dev-MCC best.

    Each fit warm-starts from the previous (larger-lambda) solution.  The
    dev-selected threshold is frozen before test evaluation.
    """
    if not lambda_grid:
        raise CompletionError("lambda grid is empty")
    path: list[dict] = []
    best: Optional[tuple[float, CompletionModel, float]] = None
    model: Optional[CompletionModel] = None
    for lam in sorted(set(float(l) for l in lambda_grid), reverse=True):
        model = soft_impute(matrix, lam, max_iters=max_iters, tol=tol, init=model)
        dev_scores = model.predict_entries(dev.rows, dev.cols)
        threshold, dev_mcc = tune_threshold(dev_scores, dev.labels)
        path.append(
            {
                "lambda": lam,
                "rank": model.rank,
                "dev_mcc": dev_mcc,
                "nuclear_norm": float(model.d.sum()),
            }
        )
        if best is None or dev_mcc > best[0]:
            best = (dev_mcc, model, threshold)
    assert best is not None
    _, best_model, threshold = best
    test_scores = best_model.predict_entries(test.rows, test.cols)
    report = evaluate(test_scores, test.labels, threshold)
    return best_model, report, path


def save_model(model: CompletionModel, directory: str | Path) -> None:
    """Write factors as .npy files plus a JSON description of the fit."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.save(directory / "U.npy", model.u)
    np.save(directory / "D.npy", model.d)
    np.save(directory / "V.npy", model.v)
    jsonl.write_json(
        directory / "meta.json",
        {
            "lambda": model.lam,
            "rank": model.rank,
            "objective_trace": list(model.objective_trace),
            "converged": model.converged,
        },
    )


def load_model(directory: str | Path) -> CompletionModel:
    directory = Path(directory)
    meta = jsonl.read_json(directory / "meta.json")
    return CompletionModel(
        u=np.load(directory / "U.npy"),
        d=np.load(directory / "D.npy"),
        v=np.load(directory / "V.npy"),
        lam=float(meta["lambda"]),
        objective_trace=tuple(meta["objective_trace"]),
        converged=bool(meta["converged"]),
    )
