"""Learning segmentation parameters on training images.

learn_alpha sweeps a fixed grid of absolute thresholds per image and averages
the per-image Jaccard maximizers. learn_filter_params jointly sweeps filter
width and relative threshold (70 sigma values plus sigma=0, 100 p values) per
image and averages the optimal pairs. random_search samples parameter triples
uniformly and returns the error minimizer.

Ties always go to the smallest parameter (lexicographically for pairs), and
everything is deterministic given its seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .eegmap import EEGMap, gaussian_filter
from .errors import EmptyTrainingSet, InvalidSpec, MapNotNormalized

# 100 uniform threshold candidates strictly inside (0, 1)
ALPHA_GRID = np.linspace(0.0, 1.0, 102)[1:-1]


@dataclass(frozen=True)
class ParamSpace:
    """Search box for (p1, p2, sigma) and the random-search budget."""

    sigma_range: tuple = (0.0, 70.0)
    p1_range: tuple = (0.0, 0.5)
    p2_range: tuple = (0.5, 1.0)
    n_trials: int = 1000

    def __post_init__(self):
        s_lo, s_hi = self.sigma_range
        p1_lo, p1_hi = self.p1_range
        p2_lo, p2_hi = self.p2_range
        if not (0 <= s_lo < s_hi):
            raise InvalidSpec(f"bad sigma_range {self.sigma_range}")
        if not (0 <= p1_lo < p1_hi <= 0.5):
            raise InvalidSpec(f"bad p1_range {self.p1_range}")
        if not (0.5 <= p2_lo < p2_hi <= 1.0):
            raise InvalidSpec(f"bad p2_range {self.p2_range}")
        if self.n_trials < 1:
            raise InvalidSpec("n_trials must be >= 1")


@dataclass
class LearnedParams:
    """Per-user parameters for the three mask-production configurations."""

    alpha: float = 0.5                       # configuration A
    filter_p: float = 0.66                   # configuration B
    filter_sigma: float = 32.0
    trimap_p1: float = 0.17                  # configuration C
    trimap_p2: float = 0.73
    trimap_sigma: float = 25.0
    fold: int = -1                           # provenance: training fold id
    user: int = -1

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "filter_p": self.filter_p,
            "filter_sigma": self.filter_sigma,
            "trimap_p1": self.trimap_p1,
            "trimap_p2": self.trimap_p2,
            "trimap_sigma": self.trimap_sigma,
            "fold": self.fold,
            "user": self.user,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LearnedParams":
        return cls(**d)


def _jaccard_over_cutoffs(values: np.ndarray, gt: np.ndarray, cutoffs: np.ndarray) -> np.ndarray:
    """Jaccard of (values > c) against gt for every cutoff c, in O(n log n).

    Pixels are sorted once; for each cutoff the predicted-foreground count and
    its ground-truth overlap come from suffix sums.
    """
    v = values.ravel()
    g = gt.ravel()
    order = np.argsort(v, kind="mergesort")
    vs = v[order]
    gs = g[order]
    suffix_gt = np.concatenate([np.cumsum(gs[::-1])[::-1], [0]])
    n = len(vs)
    gt_total = int(g.sum())
    pos = np.searchsorted(vs, cutoffs, side="right")
    predicted = n - pos
    inter = suffix_gt[pos]
    union = gt_total + predicted - inter
    out = np.empty(len(cutoffs), dtype=float)
    empty = union == 0
    out[empty] = 1.0
    out[~empty] = inter[~empty] / union[~empty]
    return out


def _require_normalized(maps) -> list:
    maps = list(maps)
    for m in maps:
        if not isinstance(m, EEGMap) or not m.normalized:
            raise MapNotNormalized("parameter learning expects normalized maps")
    return maps


def learn_alpha(train_maps, gts, grid=None) -> float:
    """Average of the per-image Jaccard-maximizing absolute thresholds."""
    maps = _require_normalized(train_maps)
    gts = list(gts)
    if not maps or len(maps) != len(gts):
        raise EmptyTrainingSet(f"need matching non-empty maps and masks, got {len(maps)}/{len(gts)}")
    grid = ALPHA_GRID if grid is None else np.asarray(grid, dtype=float)
    best_alphas = []
    for m, gt in zip(maps, gts):
        scores = _jaccard_over_cutoffs(m.to_pixels(), gt.bits, grid)
        best_alphas.append(float(grid[int(np.argmax(scores))]))  # argmax -> first/smallest
    return float(np.mean(best_alphas))


def learn_filter_params(train_maps, gts, n_sigma: int = 70, n_p: int = 100,
                        sigma_max: float = 70.0) -> tuple[float, float]:
    """Joint exhaustive sweep over filter sigma and relative threshold p.

    Per image, all (sigma, p) combinations are scored and the Jaccard
    maximizer kept (ties to the smallest sigma, then p); the returned pair is
    the mean over images.
    """
    maps = _require_normalized(train_maps)
    gts = list(gts)
    if not maps or len(maps) != len(gts):
        raise EmptyTrainingSet(f"need matching non-empty maps and masks, got {len(maps)}/{len(gts)}")
    sigmas = np.concatenate([[0.0], np.linspace(sigma_max / n_sigma, sigma_max, n_sigma)])
    p_grid = np.linspace(0.0, 1.0, n_p)
    best_pairs = []
    for m, gt in zip(maps, gts):
        pixels = m.to_pixels()
        best = (-1.0, 0.0, 0.0)
        for sigma in sigmas:
            filtered = gaussian_filter(pixels, sigma).values
            lo, hi = float(filtered.min()), float(filtered.max())
            if hi <= lo:
                continue
            cutoffs = lo + p_grid * (hi - lo)
            scores = _jaccard_over_cutoffs(filtered, gt.bits, cutoffs)
            k = int(np.argmax(scores))
            if scores[k] > best[0]:
                best = (float(scores[k]), float(sigma), float(p_grid[k]))
        best_pairs.append((best[2], best[1]))
    mean_p = float(np.mean([p for p, _ in best_pairs]))
    mean_sigma = float(np.mean([s for _, s in best_pairs]))
    return mean_p, mean_sigma


def random_search(objective, space: ParamSpace, seed: int, log_path=None):
    """Uniformly sample n_trials (p1, p2, sigma) triples; return the minimizer.

    The whole sample is drawn up front, so the winning triple depends only on
    (seed, space) and the tie rule (first sampled wins), never on evaluation
    order. An optional CSV log records every trial for reproduction.
    """
    rng = np.random.default_rng(seed)
    n = space.n_trials
    p1s = rng.uniform(space.p1_range[0], space.p1_range[1], n)
    p2s = rng.uniform(space.p2_range[0], space.p2_range[1], n)
    sigmas = rng.uniform(space.sigma_range[0], space.sigma_range[1], n)
    errors = np.empty(n, dtype=float)
    for i in range(n):
        errors[i] = float(objective(p1s[i], p2s[i], sigmas[i]))
    best = int(np.argmin(errors))  # argmin -> first minimal trial
    if log_path is not None:
        with open(log_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["seed", "trial", "p1", "p2", "sigma", "error"])
            for i in range(n):
                writer.writerow([seed, i, repr(float(p1s[i])), repr(float(p2s[i])),
                                 repr(float(sigmas[i])), repr(float(errors[i]))])
    return float(p1s[best]), float(p2s[best]), float(sigmas[best]), float(errors[best])
