"""Prediction-feature Gram matrices and confidence bonuses.

The bonus of a trajectory is the clipped, scaled root of the summed
Mahalanobis scores of its per-step prediction features under regularized
Gram inverses.  All quadratic forms go through a cached Cholesky
factorization; the regularizer keeps the factor well defined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import DegenerateHistory, SingularCoreTests, StructuralError
from .pomdp import GMatrices, PINV_RCOND, MAX_CONDITION, decodability_alpha
from .psr import PsrModel
from .spaces import History

MIN_LAMBDA = 1e-12


@dataclass(frozen=True)
class FeatureGram:
    """Regularized second-moment matrix of accumulated feature vectors."""

    step: int
    lam: float
    matrix: np.ndarray
    count: int = 0
    _factor: tuple = field(default=None, repr=False, compare=False)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.lam <= MIN_LAMBDA:
            raise StructuralError(f"regularizer must exceed {MIN_LAMBDA:g}")
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise StructuralError("gram matrix must be square")
        if np.abs(self.matrix - self.matrix.T).max() > 1e-12:
            raise StructuralError("gram matrix must be symmetric")
        if self._factor is None:
            object.__setattr__(self, "_factor", scipy.linalg.cho_factor(self.matrix))

    @classmethod
    def fresh(cls, step: int, dim: int, lam: float) -> "FeatureGram":
        return cls(step, lam, lam * np.eye(dim))

    @classmethod
    def build(cls, step: int, dim: int, lam: float, features: Sequence[np.ndarray] | np.ndarray,
              counts: np.ndarray | None = None) -> "FeatureGram":
        """Gram from a batch of features, optionally with multiplicities."""
        mat = lam * np.eye(dim)
        total = 0
        if len(features):
            F = np.asarray(features, dtype=float)
            if counts is None:
                mat = mat + F.T @ F
                total = len(F)
            else:
                mat = mat + (F * counts[:, None]).T @ F
                total = int(counts.sum())
        mat = 0.5 * (mat + mat.T)
        return cls(step, lam, mat, total)

    def score(self, x: np.ndarray) -> float:
        """Mahalanobis score ||x||^2 under the inverse gram."""
        return float(x @ scipy.linalg.cho_solve(self._factor, x))

    def scores(self, X: np.ndarray) -> np.ndarray:
        """Row-wise Mahalanobis scores for a feature matrix."""
        solved = scipy.linalg.cho_solve(self._factor, X.T)
        return np.einsum("ij,ji->i", X, solved)

    @property
    def condition_number(self) -> float:
        svals = np.linalg.svd(self.matrix, compute_uv=False)
        return float(svals[0] / svals[-1])


def accumulate(gram: FeatureGram, feature: np.ndarray) -> FeatureGram:
    """Rank-one update; the factorization is refreshed on construction."""
    if feature.shape != (gram.matrix.shape[0],):
        raise StructuralError(f"feature dim {feature.shape} does not match gram {gram.matrix.shape}")
    updated = gram.matrix + np.outer(feature, feature)
    return FeatureGram(gram.step, gram.lam, 0.5 * (updated + updated.T), gram.count + 1)


@dataclass(frozen=True)
class BonusEvaluator:
    """Maps full trajectories to clipped uncertainty bonuses in [0, 1].

    Features come from ``feature_source``; a per-step linear ``transform``
    (when present) is applied to features before scoring, and the grams must
    have been accumulated over equally transformed features.  Prefix scores
    are cached: evaluators are frozen snapshots.
    """

    grams: tuple[FeatureGram, ...]
    alpha: float
    feature_source: PsrModel
    transform: tuple[np.ndarray, ...] | None = None
    guard: float = 1e-12
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise StructuralError("bonus coefficient must be nonnegative")
        if len(self.grams) != self.feature_source.space.horizon:
            raise StructuralError("need one gram per step 0..H-1")
        if self.transform is not None and len(self.transform) != len(self.grams):
            raise StructuralError("need one transform per step when transforming")

    def prefix_score(self, history: History) -> float:
        """Mahalanobis score of one history's (transformed) feature."""
        key = history.steps
        cached = self._cache.get(key)
        if cached is None:
            feat = self.feature_source.prediction_feature(history, self.guard)
            if self.transform is not None:
                feat = self.transform[len(history)] @ feat
            cached = self.grams[len(history)].score(feat)
            self._cache[key] = cached
        return cached

    def bonus(self, trajectory: History) -> float:
        """min of 1 and alpha times the root of the summed prefix scores.

        Trajectories with a (numerically) zero-probability prefix under the
        feature source get bonus 1: they are maximally uncertain.
        """
        space = self.feature_source.space
        if len(trajectory) != space.horizon:
            raise StructuralError("bonus is defined on full trajectories")
        try:
            total = math.fsum(self.prefix_score(trajectory.prefix(h)) for h in range(space.horizon))
        except DegenerateHistory:
            return 1.0
        return min(self.alpha * math.sqrt(max(total, 0.0)), 1.0)

    def bonus_table(self) -> np.ndarray:
        """Bonuses of all full trajectories in lexicographic order."""
        space = self.feature_source.space
        totals = np.zeros(space.n_trajectories)
        degenerate = np.zeros(space.n_trajectories, dtype=bool)
        for h in range(space.horizon):
            feats = self.feature_source.feature_table(h, self.guard)
            bad = np.isnan(feats[:, 0])
            if self.transform is not None:
                feats = np.where(bad[:, None], 0.0, feats) @ self.transform[h].T
            else:
                feats = np.where(bad[:, None], 0.0, feats)
            scores = self.grams[h].scores(feats)
            reps = space.pair_count ** (space.horizon - h)
            totals += np.repeat(scores, reps)
            degenerate |= np.repeat(bad, reps)
        out = np.minimum(self.alpha * np.sqrt(np.maximum(totals, 0.0)), 1.0)
        out[degenerate] = 1.0
        return out

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "lambda": [g.lam for g in self.grams],
            "grams": [g.matrix.tolist() for g in self.grams],
            "counts": [g.count for g in self.grams],
            "transform": None if self.transform is None else [t.tolist() for t in self.transform],
            "feature_source": self.feature_source.to_dict(),
        }


def bonus(evaluator: BonusEvaluator, trajectory: History) -> float:
    return evaluator.bonus(trajectory)


def evaluator_from_dict(data: dict) -> BonusEvaluator:
    from .psr import psr_model_from_dict

    model = psr_model_from_dict(data["feature_source"])
    grams = tuple(
        FeatureGram(h, lam, np.asarray(mat, dtype=float), count)
        for h, (lam, mat, count) in enumerate(zip(data["lambda"], data["grams"], data["counts"]))
    )
    transform = data["transform"]
    return BonusEvaluator(
        grams,
        data["alpha"],
        model,
        None if transform is None else tuple(np.asarray(t, dtype=float) for t in transform),
    )


def decodable_transform(g_hat: GMatrices) -> tuple[np.ndarray, ...]:
    """Per-step pseudo-inverses projecting features onto state coordinates.

    The step-``h`` transform inverts the window-test matrix anchored one
    step later, mapping a d_h feature to an S-vector (the belief when the
    feature comes from the matching model).
    """
    alpha = decodability_alpha(g_hat)
    if alpha <= 0:
        raise SingularCoreTests("window-test matrices are rank deficient")
    out = []
    for G in g_hat.matrices:
        svals = np.linalg.svd(G, compute_uv=False)
        if svals[0] / svals[G.shape[1] - 1] > MAX_CONDITION:
            raise SingularCoreTests(f"window-test matrix condition exceeds {MAX_CONDITION:g}")
        out.append(np.linalg.pinv(G, rcond=PINV_RCOND))
    return tuple(out)


def ground_truth_gram(true_model: PsrModel, dataset, lam: float) -> tuple[FeatureGram, ...]:
    """Per-step grams of the true model's features over a dataset (diagnostic)."""
    from .estimation import DatasetFamily  # local import to avoid a cycle

    assert isinstance(dataset, DatasetFamily)
    grams = []
    for h in range(true_model.space.horizon):
        feats = [
            true_model.prediction_feature(entry.trajectory.prefix(h))
            for entry in dataset.buckets[h]
        ]
        grams.append(FeatureGram.build(h, true_model.dims[h], lam, np.asarray(feats).reshape(len(feats), -1) if feats else []))
    return tuple(grams)


# -- executable inequality checks ---------------------------------------------


def elliptical_potential_check(
    vectors: Sequence[np.ndarray], lam: float, B: float, rank_tol: float = 1e-8
) -> tuple[float, float, bool]:
    """Summed clipped Mahalanobis scores against the log-det budget.

    Uses grams that include the current vector, which only lowers the left
    side relative to the prediction-ordered form.
    """
    if not len(vectors):
        raise StructuralError("need at least one vector")
    X = np.asarray(vectors, dtype=float)
    K, dim = X.shape
    gram = lam * np.eye(dim)
    terms = []
    for x in X:
        gram = gram + np.outer(x, x)
        score = float(x @ np.linalg.solve(gram, x))
        terms.append(min(score, B))
    lhs = math.fsum(terms)
    svals = np.linalg.svd(X, compute_uv=False)
    r = int(np.sum(svals > rank_tol * svals[0])) if svals.size and svals[0] > 0 else 0
    rhs = (1.0 + B) * r * math.log(1.0 + K / lam)
    return lhs, rhs, lhs <= rhs + 1e-9


def transfer_score_check(
    x_vectors: Sequence[np.ndarray],
    y_vectors: Sequence[np.ndarray],
    subset: Sequence[int],
    lam: float,
    rank_tol: float = 1e-8,
) -> tuple[np.ndarray, np.ndarray, bool]:
    """Score-transfer bound between two vector sequences.

    Both grams are regularized with ``lam`` (the unregularized second sum
    may be singular); the bound is valid in that form.  Returns per-index
    left and right sides and whether every comparison holds.
    """
    X = np.asarray(x_vectors, dtype=float)
    Y = np.asarray(y_vectors, dtype=float)
    if X.shape != Y.shape:
        raise StructuralError("sequences must have equal shapes")
    subset = list(subset)
    if any(not 0 <= j < len(X) for j in subset):
        raise StructuralError("subset index out of range")
    A = lam * np.eye(X.shape[1]) + sum(np.outer(X[j], X[j]) for j in subset)
    Bm = lam * np.eye(X.shape[1]) + sum(np.outer(Y[j], Y[j]) for j in subset)
    def _rank(M: np.ndarray) -> int:
        svals = np.linalg.svd(M, compute_uv=False)
        return int(np.sum(svals > rank_tol * svals[0])) if svals.size and svals[0] > 0 else 0

    r = max(_rank(X), _rank(Y))
    drift = math.sqrt(math.fsum(float(np.dot(X[j] - Y[j], X[j] - Y[j])) for j in subset))
    lhs = np.sqrt(np.einsum("ij,ji->i", X, np.linalg.solve(A, X.T)))
    y_scores = np.sqrt(np.einsum("ij,ji->i", Y, np.linalg.solve(Bm, Y.T)))
    diffs = np.linalg.norm(X - Y, axis=1)
    rhs = diffs / math.sqrt(lam) + (1.0 + 2.0 * math.sqrt(r) * drift / math.sqrt(lam)) * y_scores
    return lhs, rhs, bool(np.all(lhs <= rhs + 1e-9))
