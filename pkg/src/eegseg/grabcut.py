"""GrabCut segmentation seeded by a trimap.

The classic formulation: per-region Gaussian mixture color models over RGB,
an 8-connected pairwise smoothness term lam * exp(-beta * ||c_p - c_q||^2) /
dist(p, q) with beta = 1 / (2 * mean ||c_p - c_q||^2) per image, and exact
min-cut relabeling. Pixels seeded DEFINITE_BACKGROUND stay background
forever; PROBABLE_* pixels may switch sides each iteration.

Colors are handled as floats on the 0..255 scale, so mixture densities stay
below 1 for realistic clusters and the derived data terms are positive.
Where a degenerate cluster still produces a negative log-density, terminal
capacities are shifted per pixel (adding a constant to both of a pixel's
terminal links does not change the minimizing cut).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .eegmap import DEFINITE_BACKGROUND, PROBABLE_FOREGROUND, Trimap
from .errors import EmptyForeground, TooFewPixels
from .imaging import BinaryMask, Image
from .maxflow import HARD_LINK, FlowNetwork, max_flow

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class Gmm:
    """Gaussian mixture over RGB colors.

    weights sum to 1; covariances are kept positive definite by a small
    diagonal regularizer. Components with zero weight are inert placeholders.
    """

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        self.covs = np.asarray(self.covs, dtype=float)

    @property
    def n_components(self) -> int:
        return len(self.weights)


def _component_log_density(mean, cov, x):
    """log N(x; mean, cov) for x of shape (n, d)."""
    d = mean.shape[0]
    chol = np.linalg.cholesky(cov)
    diff = x - mean
    sol = np.linalg.solve(chol, diff.T)
    maha = np.sum(sol * sol, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (d * _LOG_2PI + logdet + maha)


def _mixture_log_density(g: Gmm, x: np.ndarray) -> np.ndarray:
    """log sum_k w_k N_k(x), computed stably in log space."""
    n = x.shape[0]
    comp = np.full((g.n_components, n), -np.inf)
    for k in range(g.n_components):
        if g.weights[k] <= 0.0:
            continue
        comp[k] = np.log(g.weights[k]) + _component_log_density(g.means[k], g.covs[k], x)
    top = comp.max(axis=0)
    top = np.where(np.isfinite(top), top, 0.0)
    s = np.exp(comp - top).sum(axis=0)
    with np.errstate(divide="ignore"):
        out = top + np.log(s)
    # inert mixture (all weights zero) cannot happen for fitted models; guard anyway
    return np.where(s > 0.0, out, -745.0)


def gmm_neg_loglik(g: Gmm, pixel) -> float | np.ndarray:
    """Negative log mixture density, the data term of the segmentation energy.

    Accepts one RGB triple or an (n, 3) batch. Regularized covariances keep
    the density away from zero, so the value is always finite.
    """
    x = np.asarray(pixel, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    out = -_mixture_log_density(g, x)
    return float(out[0]) if single else out


def _kmeanspp_centers(x: np.ndarray, k: int, rng) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[j] = x[rng.integers(n)]
            continue
        centers[j] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))
    return centers


def _hard_assignment_params(x, assign, k, reg):
    d = x.shape[1]
    weights = np.zeros(k)
    means = np.zeros((k, d))
    covs = np.tile(np.eye(d), (k, 1, 1))
    for j in range(k):
        sel = x[assign == j]
        if len(sel) == 0:
            continue
        weights[j] = len(sel) / len(x)
        means[j] = sel.mean(axis=0)
        cov = np.cov(sel.T, bias=True) if len(sel) > 1 else np.zeros((d, d))
        covs[j] = np.atleast_2d(cov) + reg * np.eye(d)
    return Gmm(weights, means, covs)


def _em_refine(g: Gmm, x: np.ndarray, max_iter: int, tol: float, reg: float) -> Gmm:
    """EM iterations from an existing model; likelihood is non-decreasing."""
    n, d = x.shape
    k = g.n_components
    weights = g.weights.copy()
    means = g.means.copy()
    covs = g.covs.copy()
    prev_ll = None
    for _ in range(max_iter):
        logr = np.full((k, n), -np.inf)
        for j in range(k):
            if weights[j] <= 0.0:
                continue
            logr[j] = np.log(weights[j]) + _component_log_density(means[j], covs[j], x)
        top = logr.max(axis=0)
        r = np.exp(logr - top)
        norm = r.sum(axis=0)
        ll = float(np.sum(top + np.log(norm)))
        r /= norm
        nk = r.sum(axis=1)
        for j in range(k):
            if nk[j] < 1e-10:
                weights[j] = 0.0
                continue
            weights[j] = nk[j] / n
            means[j] = (r[j] @ x) / nk[j]
            diff = x - means[j]
            covs[j] = (diff.T * r[j]) @ diff / nk[j] + reg * np.eye(d)
        weights = weights / weights.sum()
        if prev_ll is not None and abs(ll - prev_ll) < tol * max(abs(prev_ll), 1.0):
            break
        prev_ll = ll
    return Gmm(weights, means, covs)


def fit_gmm(pixels, k: int = 5, seed: int = 0, max_iter: int = 100,
            tol: float = 1e-5, reg: float = 1e-6) -> Gmm:
    """Fit a k-component mixture by EM from k-means++ initialization.

    Stops when the relative log-likelihood change drops below ``tol`` or
    after ``max_iter`` EM iterations. Covariances carry a +reg diagonal, so
    constant-color inputs fit without failure.
    """
    x = np.asarray(pixels, dtype=float)
    x = np.atleast_2d(x)
    if x.shape[0] < k:
        raise TooFewPixels(f"need at least {k} pixels, got {x.shape[0]}")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp_centers(x, k, rng)
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    init = _hard_assignment_params(x, d2.argmin(axis=1), k, reg)
    return _em_refine(init, x, max_iter=max_iter, tol=tol, reg=reg)


@dataclass
class GrabcutState:
    """Final state of one GrabCut run, for inspection and tests."""

    foreground: np.ndarray          # (H, W) bool, current labels
    fg_model: Gmm
    bg_model: Gmm
    iterations_run: int
    energy_history: list = field(default_factory=list)


def _neighbor_pairs(height: int, width: int):
    """8-connected undirected pixel pairs and their center distances."""
    idx = np.arange(height * width).reshape(height, width)
    pairs = []
    dists = []
    for dy, dx, dist in ((0, 1, 1.0), (1, 0, 1.0), (1, 1, np.sqrt(2.0)), (1, -1, np.sqrt(2.0))):
        ys = slice(0, height - dy)
        xs = slice(max(0, -dx), width - max(0, dx))
        ys2 = slice(dy, height)
        xs2 = slice(max(0, dx), width + min(0, dx))
        a = idx[ys, xs].ravel()
        b = idx[ys2, xs2].ravel()
        pairs.append(np.stack([a, b], axis=1))
        dists.append(np.full(len(a), dist))
    return np.concatenate(pairs), np.concatenate(dists)


def _smoothness_weights(colors, pairs, dists, lam):
    diff = colors[pairs[:, 0]] - colors[pairs[:, 1]]
    sq = np.sum(diff * diff, axis=1)
    mean_sq = sq.mean() if len(sq) else 0.0
    beta = 0.0 if mean_sq <= 0.0 else 1.0 / (2.0 * mean_sq)
    return lam * np.exp(-beta * sq) / dists


def _segmentation_energy(d_fg, d_bg, fg_flat, pairs, weights):
    data = float(d_fg[fg_flat].sum() + d_bg[~fg_flat].sum())
    cut = fg_flat[pairs[:, 0]] != fg_flat[pairs[:, 1]]
    return data + float(weights[cut].sum())


def run_grabcut(image: Image, seed_trimap: Trimap, iterations: int = 5,
                k: int = 5, lam: float = 50.0, seed: int = 0,
                return_state: bool = False, debug_csv=None):
    """Segment an image from a trimap seed.

    PROBABLE_FOREGROUND pixels start as foreground, everything else as
    background; DEFINITE_BACKGROUND pixels are clamped to background for the
    whole run. Each iteration refits both color models on the current
    partition, rebuilds the graph, and relabels by exact min-cut. Stops early
    once fewer than 0.1% of pixels change. With iterations=0 the seed
    foreground is returned unchanged.

    Returns the final foreground BinaryMask, or (mask, GrabcutState) when
    return_state is set.
    """
    if (seed_trimap.height, seed_trimap.width) != (image.height, image.width):
        raise EmptyForeground(
            f"trimap {seed_trimap.width}x{seed_trimap.height} does not match image "
            f"{image.width}x{image.height}"
        )
    h, w = image.height, image.width
    n = h * w
    tri = seed_trimap.labels.ravel()
    fg = tri == PROBABLE_FOREGROUND
    hard_bg = tri == DEFINITE_BACKGROUND
    if not fg.any():
        raise EmptyForeground("trimap has no probable-foreground pixels")
    if int(fg.sum()) < k or int((~fg).sum()) < k:
        raise TooFewPixels(
            f"need at least k={k} pixels on each side of the seed, got "
            f"{int(fg.sum())} foreground / {int((~fg).sum())} background"
        )
    colors = image.pixels.reshape(n, 3).astype(float)

    if iterations == 0:
        mask = BinaryMask(fg.reshape(h, w))
        if return_state:
            ss = np.random.SeedSequence(seed)
            s_fg, s_bg = (int(c.generate_state(1)[0] % (2**32)) for c in ss.spawn(2))
            state = GrabcutState(fg.reshape(h, w).copy(),
                                 fit_gmm(colors[fg], k, s_fg),
                                 fit_gmm(colors[~fg], k, s_bg), 0, [])
            return mask, state
        return mask

    pairs, dists = _neighbor_pairs(h, w)
    weights = _smoothness_weights(colors, pairs, dists, lam)

    ss = np.random.SeedSequence(seed)
    s_fg, s_bg = (int(c.generate_state(1)[0] % (2**32)) for c in ss.spawn(2))
    fg_model = fit_gmm(colors[fg], k, s_fg)
    bg_model = fit_gmm(colors[~fg], k, s_bg)

    pixel_ids = np.arange(n)
    energy_history = []
    changes_history = []
    iterations_run = 0
    for _ in range(iterations):
        d_fg = gmm_neg_loglik(fg_model, colors)
        d_bg = gmm_neg_loglik(bg_model, colors)

        # terminal capacities: source link pays for a background label,
        # sink link for a foreground label; per-pixel shift keeps them >= 0
        src_cap = d_bg.copy()
        snk_cap = d_fg.copy()
        shift = np.minimum(np.minimum(src_cap, snk_cap), 0.0)
        src_cap -= shift
        snk_cap -= shift
        src_cap[hard_bg] = 0.0
        snk_cap[hard_bg] = HARD_LINK

        frm = np.concatenate([pairs[:, 0], np.full(n, n), pixel_ids])
        to = np.concatenate([pairs[:, 1], pixel_ids, np.full(n, n + 1)])
        cap = np.concatenate([weights, src_cap, snk_cap])
        rcap = np.concatenate([weights, np.zeros(n), np.zeros(n)])
        net = FlowNetwork.from_arcs(n, frm, to, cap, rcap)
        _, source_side = max_flow(net)

        new_fg = source_side & ~hard_bg
        changed = int(np.count_nonzero(new_fg != fg))
        fg = new_fg
        iterations_run += 1
        energy_history.append(_segmentation_energy(d_fg, d_bg, fg, pairs, weights))
        changes_history.append(changed)

        if not fg.any() or int(fg.sum()) < k or int((~fg).sum()) < k:
            break
        if changed < 0.001 * n:
            break

        # warm EM refit; keep a refit only if it does not worsen the data term
        cand_fg = _em_refine(fg_model, colors[fg], max_iter=8, tol=1e-4, reg=1e-6)
        if gmm_neg_loglik(cand_fg, colors[fg]).sum() <= gmm_neg_loglik(fg_model, colors[fg]).sum():
            fg_model = cand_fg
        cand_bg = _em_refine(bg_model, colors[~fg], max_iter=8, tol=1e-4, reg=1e-6)
        if gmm_neg_loglik(cand_bg, colors[~fg]).sum() <= gmm_neg_loglik(bg_model, colors[~fg]).sum():
            bg_model = cand_bg

    if debug_csv is not None:
        with open(debug_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "energy", "changed_pixels"])
            for i, (e, c) in enumerate(zip(energy_history, changes_history)):
                writer.writerow([i, repr(e), c])

    mask = BinaryMask(fg.reshape(h, w))
    if return_state:
        state = GrabcutState(fg.reshape(h, w).copy(), fg_model, bg_model,
                             iterations_run, energy_history)
        return mask, state
    return mask
