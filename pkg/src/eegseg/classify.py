"""Binary RBF-kernel SVM with decision scores, ranking metrics, stratified
cross-validated grid search, and a simulated classifier for window scores.

The SVM solves the soft-margin dual with an SMO-style solver (maximal
violating pair selection, KKT tolerance 1e-3 by default). Features are
normalized to zero mean / unit standard deviation per component using
training statistics only; constant components get standard deviation 1 so
they contribute nothing after centering.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateFolds,
    DimensionMismatch,
    NonPositiveHyperparameter,
    NoPositives,
    SingleClassData,
)

_EPS = 1e-12


# --------------------------------------------------------------------------
# kernel and solver
# --------------------------------------------------------------------------

def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    """exp(-gamma * ||x - z||^2) for all row pairs of a and b."""
    sq = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


def _smo_solve(kmat: np.ndarray, y: np.ndarray, c_bound: np.ndarray,
               tol: float, max_iter: int):
    """Minimize 0.5 a'Qa - e'a s.t. 0 <= a <= C, y'a = 0 (Q = yy' * K).

    Maximal-violating-pair working set selection; stops when the KKT gap
    drops to ``tol``. Returns (alpha, bias, dual objective, iterations).
    """
    n = len(y)
    alpha = np.zeros(n)
    grad = -np.ones(n)
    it = 0
    while it < max_iter:
        ygrad = -y * grad
        up = ((y > 0) & (alpha < c_bound - _EPS)) | ((y < 0) & (alpha > _EPS))
        low = ((y > 0) & (alpha > _EPS)) | ((y < 0) & (alpha < c_bound - _EPS))
        if not up.any() or not low.any():
            break
        i = int(np.argmax(np.where(up, ygrad, -np.inf)))
        j = int(np.argmin(np.where(low, ygrad, np.inf)))
        gap = ygrad[i] - ygrad[j]
        if gap <= tol:
            break
        eta = kmat[i, i] + kmat[j, j] - 2.0 * kmat[i, j]
        if eta <= _EPS:
            eta = _EPS
        s = y[i] * y[j]
        # feasible segment for alpha_j given the equality constraint
        if s > 0:
            lo = max(0.0, alpha[i] + alpha[j] - c_bound[i])
            hi = min(c_bound[j], alpha[i] + alpha[j])
        else:
            lo = max(0.0, alpha[j] - alpha[i])
            hi = min(c_bound[j], c_bound[i] + alpha[j] - alpha[i])
        if hi - lo <= _EPS:
            # numerically stuck pair; treat as converged at this gap
            break
        delta = y[j] * gap / eta
        aj_new = np.clip(alpha[j] + delta, lo, hi)
        dj = aj_new - alpha[j]
        if abs(dj) < _EPS:
            break
        di = -s * dj
        grad += di * (y * y[i] * kmat[:, i]) + dj * (y * y[j] * kmat[:, j])
        alpha[i] += di
        alpha[j] += dj
        it += 1

    # bias from free vectors where available, else the KKT midpoint
    fx = (alpha * y) @ kmat
    free = (alpha > _EPS) & (alpha < c_bound - _EPS)
    if free.any():
        bias = float(np.mean(y[free] - fx[free]))
    else:
        ygrad = -y * grad
        up = ((y > 0) & (alpha < c_bound - _EPS)) | ((y < 0) & (alpha > _EPS))
        low = ((y > 0) & (alpha > _EPS)) | ((y < 0) & (alpha < c_bound - _EPS))
        hi = np.max(np.where(up, ygrad, -np.inf)) if up.any() else 0.0
        lo = np.min(np.where(low, ygrad, np.inf)) if low.any() else 0.0
        bias = float((hi + lo) / 2.0)
    objective = 0.5 * float(alpha @ grad - alpha.sum())
    return alpha, bias, objective, it


@dataclass
class SvmModel:
    """Trained RBF-SVM: support vectors live in normalized feature space."""

    support_vectors: np.ndarray
    dual_coef: np.ndarray           # alpha_i * y_i, |alpha_i| <= C
    bias: float
    gamma: float
    C: float
    norm_mean: np.ndarray
    norm_std: np.ndarray
    dual_objective: float = 0.0
    n_iter: int = 0

    @property
    def n_features(self) -> int:
        return len(self.norm_mean)


def train_svm(features, labels, C: float, gamma: float, tol: float = 1e-3,
              max_iter: int | None = None, balanced: bool = False) -> SvmModel:
    """Train a binary RBF-SVM; labels True = target (score sign +).

    ``balanced=True`` scales each class's box constraint by the inverse class
    frequency; the default mirrors a plain single-C setup.
    """
    x = np.asarray(features, dtype=float)
    lab = np.asarray(labels, dtype=bool)
    if x.ndim != 2 or len(x) != len(lab):
        raise DimensionMismatch(f"features {x.shape} do not match {len(lab)} labels")
    if lab.all() or not lab.any():
        raise SingleClassData("training data must contain both classes")
    if C <= 0 or gamma <= 0:
        raise NonPositiveHyperparameter(f"C and gamma must be > 0, got C={C}, gamma={gamma}")
    n = len(x)
    if max_iter is None:
        max_iter = max(100_000, 50 * n)

    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std <= _EPS, 1.0, std)
    z = (x - mean) / std
    y = np.where(lab, 1.0, -1.0)

    c_bound = np.full(n, float(C))
    if balanced:
        n_pos = int(lab.sum())
        n_neg = n - n_pos
        c_bound[lab] = C * n / (2.0 * n_pos)
        c_bound[~lab] = C * n / (2.0 * n_neg)

    kmat = rbf_kernel(z, z, gamma)
    alpha, bias, objective, it = _smo_solve(kmat, y, c_bound, tol, max_iter)

    sv = alpha > _EPS
    return SvmModel(
        support_vectors=z[sv].copy(),
        dual_coef=(alpha * y)[sv].copy(),
        bias=bias,
        gamma=float(gamma),
        C=float(C),
        norm_mean=mean,
        norm_std=std,
        dual_objective=objective,
        n_iter=it,
    )


def decision_scores(model: SvmModel, features) -> np.ndarray:
    """Signed distances to the separating surface for a batch of vectors."""
    x = np.atleast_2d(np.asarray(features, dtype=float))
    if x.shape[1] != model.n_features:
        raise DimensionMismatch(
            f"expected {model.n_features} features, got {x.shape[1]}"
        )
    z = (x - model.norm_mean) / model.norm_std
    k = rbf_kernel(z, model.support_vectors, model.gamma)
    return k @ model.dual_coef + model.bias


def decision_score(model: SvmModel, x) -> float:
    """Signed score for one vector; the sign is the predicted class."""
    return float(decision_scores(model, np.asarray(x, dtype=float)[None, :])[0])


# --------------------------------------------------------------------------
# ranking metrics
# --------------------------------------------------------------------------

def auc(scores, labels) -> float:
    """Area under the ROC curve as the Mann-Whitney pair statistic.

    Equals P(score_target > score_distractor) + 0.5 * P(tie) over all
    target/distractor pairs.
    """
    s = np.asarray(scores, dtype=float)
    lab = np.asarray(labels, dtype=bool)
    if len(s) != len(lab):
        raise DimensionMismatch(f"{len(s)} scores vs {len(lab)} labels")
    n_pos = int(lab.sum())
    n_neg = len(lab) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassData("AUC requires both classes")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    ranks = np.empty(len(s), dtype=float)
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    u = ranks[lab].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Mean of precision values at each positive's rank.

    Scores are sorted descending; equal scores keep their input order, which
    makes the metric deterministic.
    """
    s = np.asarray(scores, dtype=float)
    lab = np.asarray(labels, dtype=bool)
    if len(s) != len(lab):
        raise DimensionMismatch(f"{len(s)} scores vs {len(lab)} labels")
    if not lab.any():
        raise NoPositives("average precision requires at least one positive")
    order = np.argsort(-s, kind="stable")
    hits = lab[order]
    cum = np.cumsum(hits)
    ranks = np.arange(1, len(s) + 1)
    return float(np.mean(cum[hits] / ranks[hits]))


# --------------------------------------------------------------------------
# cross-validated grid search
# --------------------------------------------------------------------------

def stratified_folds(labels, folds: int, seed: int) -> list[np.ndarray]:
    """Deterministic stratified fold index sets; every fold gets both classes."""
    lab = np.asarray(labels, dtype=bool)
    pos = np.flatnonzero(lab)
    neg = np.flatnonzero(~lab)
    if len(pos) < folds or len(neg) < folds:
        raise DegenerateFolds(
            f"cannot build {folds} stratified folds from {len(pos)} positives "
            f"and {len(neg)} negatives"
        )
    rng = np.random.default_rng(seed)
    rng.shuffle(pos)
    rng.shuffle(neg)
    return [np.sort(np.concatenate([pos[k::folds], neg[k::folds]])) for k in range(folds)]


def grid_search_cv(features, labels, c_grid, gamma_grid, folds: int = 5,
                   seed: int = 0, tol: float = 1e-3) -> tuple[float, float, float]:
    """Pick (C, gamma) maximizing mean fold AUC; ties go to smaller C, then gamma.

    Folds are stratified and fixed across the whole grid, so the search is
    deterministic for a given seed.
    """
    x = np.asarray(features, dtype=float)
    lab = np.asarray(labels, dtype=bool)
    c_values = sorted(float(c) for c in c_grid)
    g_values = sorted(float(g) for g in gamma_grid)
    if not c_values or not g_values:
        raise NonPositiveHyperparameter("grids must be non-empty")
    fold_idx = stratified_folds(lab, folds, seed)
    all_idx = np.arange(len(lab))

    best = None
    for c in c_values:
        for g in g_values:
            fold_aucs = []
            for held in fold_idx:
                train = np.setdiff1d(all_idx, held, assume_unique=False)
                model = train_svm(x[train], lab[train], c, g, tol=tol)
                fold_aucs.append(auc(decision_scores(model, x[held]), lab[held]))
            mean_auc = float(np.mean(fold_aucs))
            if best is None or mean_auc > best[2]:
                best = (c, g, mean_auc)
    return best


# --------------------------------------------------------------------------
# simulated classifier scores
# --------------------------------------------------------------------------

@dataclass
class ScoreSimSpec:
    """Simulated window classifier: Bernoulli decision then Gaussian score.

    A target window is called target with probability ``hit_prob``; a
    distractor window is called target with probability
    ``distractor_hit_prob`` (default symmetric error, 1 - hit_prob). The
    emitted score is drawn from the Gaussian conditioned on the simulated
    decision, not on the true label.
    """

    hit_prob: float = 0.68
    distractor_hit_prob: float = 0.32
    mu_target: float = 1.0
    sd_target: float = 0.5
    mu_distractor: float = -1.0
    sd_distractor: float = 0.5

    def __post_init__(self):
        from .errors import InvalidSpec

        if not (0.0 <= self.hit_prob <= 1.0 and 0.0 <= self.distractor_hit_prob <= 1.0):
            raise InvalidSpec("hit probabilities must be in [0, 1]")
        if self.sd_target <= 0 or self.sd_distractor <= 0:
            raise InvalidSpec("score standard deviations must be > 0")


def simulate_window_scores(grid_labels, spec: ScoreSimSpec, seed: int) -> np.ndarray:
    """Draw one simulated classifier score per window.

    ``grid_labels`` is a flat boolean vector (True = window overlaps the
    object). Deterministic for a fixed seed.
    """
    labels = np.asarray(grid_labels, dtype=bool).ravel()
    rng = np.random.default_rng(seed)
    u = rng.uniform(size=labels.size)
    called_target = np.where(labels, u < spec.hit_prob, u < spec.distractor_hit_prob)
    z = rng.standard_normal(labels.size)
    mu = np.where(called_target, spec.mu_target, spec.mu_distractor)
    sd = np.where(called_target, spec.sd_target, spec.sd_distractor)
    return mu + sd * z


# --------------------------------------------------------------------------
# model serialization (versioned JSON; round-trips preserve decision scores)
# --------------------------------------------------------------------------

_MODEL_FORMAT = "eegseg-svm"
_MODEL_VERSION = 1


def save_model(model: SvmModel, path) -> None:
    doc = {
        "format": _MODEL_FORMAT,
        "version": _MODEL_VERSION,
        "C": model.C,
        "gamma": model.gamma,
        "bias": model.bias,
        "dual_objective": model.dual_objective,
        "n_iter": model.n_iter,
        "norm_mean": model.norm_mean.tolist(),
        "norm_std": model.norm_std.tolist(),
        "dual_coef": model.dual_coef.tolist(),
        "support_vectors": [row.tolist() for row in model.support_vectors],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_model(path) -> SvmModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != _MODEL_FORMAT or doc.get("version") != _MODEL_VERSION:
        raise DimensionMismatch(
            f"unsupported model file: format={doc.get('format')} version={doc.get('version')}"
        )
    return SvmModel(
        support_vectors=np.array(doc["support_vectors"], dtype=float).reshape(
            len(doc["dual_coef"]), len(doc["norm_mean"])
        ),
        dual_coef=np.array(doc["dual_coef"], dtype=float),
        bias=float(doc["bias"]),
        gamma=float(doc["gamma"]),
        C=float(doc["C"]),
        norm_mean=np.array(doc["norm_mean"], dtype=float),
        norm_std=np.array(doc["norm_std"], dtype=float),
        dual_objective=float(doc["dual_objective"]),
        n_iter=int(doc["n_iter"]),
    )
