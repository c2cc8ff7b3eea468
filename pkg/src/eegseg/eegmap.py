"""Confidence maps over window grids: normalization, Gaussian filtering,
thresholding, trimap construction, and multi-user averaging.

An EEGMap holds one real score per grid window and can be expanded to pixel
resolution. Filtering always happens at pixel scale, where the filter width
sigma is expressed in pixels.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .errors import (
    ConstantMap,
    EmptyForeground,
    EmptyList,
    GeometryMismatch,
    InvalidThresholdOrder,
    MapNotNormalized,
    NegativeSigma,
)
from .imaging import BinaryMask, WindowGrid, rasterize

# Trimap pixel labels. "Definitely foreground" is deliberately never emitted
# by map seeding; only these three states exist.
DEFINITE_BACKGROUND = 0
PROBABLE_BACKGROUND = 1
PROBABLE_FOREGROUND = 2


@dataclass(frozen=True)
class EEGMap:
    """Per-window score grid with its window geometry.

    ``scores`` has shape (rows, cols). ``normalized`` records whether the map
    has been passed through :func:`normalize_map` (min 0, max 1).
    """

    cols: int
    rows: int
    window_width: int
    window_height: int
    scores: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        sc = np.asarray(self.scores, dtype=float)
        if sc.shape != (self.rows, self.cols):
            raise GeometryMismatch(
                f"scores shape {sc.shape} does not match grid {self.rows}x{self.cols}"
            )
        if not np.all(np.isfinite(sc)):
            raise GeometryMismatch("map scores must be finite")
        object.__setattr__(self, "scores", sc)

    @property
    def width(self) -> int:
        return self.cols * self.window_width

    @property
    def height(self) -> int:
        return self.rows * self.window_height

    def geometry(self) -> tuple[int, int, int, int]:
        return (self.cols, self.rows, self.window_width, self.window_height)

    def to_pixels(self) -> np.ndarray:
        """Expand window scores to a (height, width) pixel array."""
        grid = WindowGrid(
            self.cols, self.rows, self.window_width, self.window_height,
            np.zeros((self.rows, self.cols), dtype=bool),
        )
        return rasterize(grid, self.scores.ravel())


@dataclass(frozen=True)
class FilteredMap:
    """Pixel-resolution real map, typically the output of gaussian_filter.

    Values are unnormalized; relative thresholds refer to the dynamic range.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise GeometryMismatch(f"expected 2-d value array, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise GeometryMismatch("filtered map values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Trimap:
    """Per-pixel seed labels for GrabCut.

    labels is (height, width) uint8 over {DEFINITE_BACKGROUND,
    PROBABLE_BACKGROUND, PROBABLE_FOREGROUND}.
    """

    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.uint8)
        if lab.ndim != 2:
            raise GeometryMismatch(f"expected 2-d label array, got shape {lab.shape}")
        if lab.max(initial=0) > PROBABLE_FOREGROUND:
            raise GeometryMismatch("trimap labels must be 0, 1, or 2")
        object.__setattr__(self, "labels", lab)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def counts(self) -> tuple[int, int, int]:
        """Pixel counts as (definite_bg, probable_bg, probable_fg)."""
        return (
            int(np.count_nonzero(self.labels == DEFINITE_BACKGROUND)),
            int(np.count_nonzero(self.labels == PROBABLE_BACKGROUND)),
            int(np.count_nonzero(self.labels == PROBABLE_FOREGROUND)),
        )


def map_from_scores(grid: WindowGrid, scores) -> EEGMap:
    """Wrap flat row-major window scores in an EEGMap with grid geometry."""
    vals = np.asarray(scores, dtype=float).ravel()
    if vals.size != grid.n_windows:
        raise GeometryMismatch(f"expected {grid.n_windows} scores, got {vals.size}")
    return EEGMap(
        grid.cols, grid.rows, grid.window_width, grid.window_height,
        vals.reshape(grid.rows, grid.cols),
    )


def normalize_map(m: EEGMap) -> EEGMap:
    """Rescale scores to span [0, 1]: (X - min) / (max - min).

    Idempotent and invariant under positive affine transforms of the input.
    Raises ConstantMap when the map has no dynamic range.
    """
    lo = float(m.scores.min())
    hi = float(m.scores.max())
    if hi <= lo:
        raise ConstantMap("cannot normalize a constant map")
    scaled = (m.scores - lo) / (hi - lo)
    return replace(m, scores=scaled, normalized=True)


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Unit-sum 1-d Gaussian kernel truncated at radius ceil(3*sigma).

    The 2-d filter kernel is the outer product of this kernel with itself,
    which equals exp(-(x^2+y^2)/(2 sigma^2)) on the square support; since the
    truncated kernel is renormalized to unit sum, the leading constant of the
    continuous kernel is irrelevant.
    """
    if sigma < 0:
        raise NegativeSigma(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.ones(1)
    radius = int(np.ceil(3.0 * sigma))
    d = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-(d * d) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_filter(m, sigma: float) -> FilteredMap:
    """Convolve a pixel map with a truncated, unit-sum Gaussian kernel.

    ``m`` may be a 2-d array, an EEGMap (rasterized first), or a FilteredMap.
    Borders are handled by reflection (mirror, edge sample not repeated), so a
    constant map stays constant and the mean is preserved. sigma = 0 is the
    identity.
    """
    if isinstance(m, EEGMap):
        values = m.to_pixels()
    elif isinstance(m, FilteredMap):
        values = m.values
    else:
        values = np.asarray(m, dtype=float)
        if values.ndim != 2:
            raise GeometryMismatch(f"expected 2-d pixel map, got shape {values.shape}")
    if sigma < 0:
        raise NegativeSigma(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return FilteredMap(values.copy())
    k = gaussian_kernel_1d(sigma)
    out = ndimage.convolve1d(values, k, axis=0, mode="mirror")
    out = ndimage.convolve1d(out, k, axis=1, mode="mirror")
    return FilteredMap(out)


def threshold_absolute(m: EEGMap, alpha: float) -> BinaryMask:
    """Binarize a normalized map at pixel scale: foreground iff value > alpha.

    Boundary ties go to background, so alpha = 1 yields an empty mask.
    """
    if not m.normalized:
        raise MapNotNormalized("threshold_absolute requires a normalized map")
    if not 0.0 <= alpha <= 1.0:
        raise MapNotNormalized(f"alpha must be in [0, 1], got {alpha}")
    return BinaryMask(m.to_pixels() > alpha)


def relative_cutoff(f: FilteredMap, p: float) -> float:
    """Cutoff at fraction p of the dynamic range: min + p * (max - min)."""
    lo = float(f.values.min())
    hi = float(f.values.max())
    if hi <= lo:
        raise ConstantMap("relative threshold undefined on a constant map")
    return lo + p * (hi - lo)


def threshold_relative(f: FilteredMap, p: float) -> BinaryMask:
    """Binarize at a cutoff expressed as fraction p of the map's dynamic range."""
    if not 0.0 <= p <= 1.0:
        raise InvalidThresholdOrder(f"p must be in [0, 1], got {p}")
    return BinaryMask(f.values > relative_cutoff(f, p))


def make_trimap(f: FilteredMap, p1: float, p2: float) -> Trimap:
    """Split a filtered map into three seed bands with two relative cutoffs.

    value <= cutoff(p1)            -> DEFINITE_BACKGROUND
    cutoff(p1) < value <= cutoff(p2) -> PROBABLE_BACKGROUND
    value > cutoff(p2)             -> PROBABLE_FOREGROUND

    p1 must lie in [0, 0.5) and p2 in [0.5, 1]. Raises EmptyForeground when no
    pixel clears the upper cutoff.
    """
    if not (0.0 <= p1 < 0.5) or not (0.5 <= p2 <= 1.0) or p1 >= p2:
        raise InvalidThresholdOrder(
            f"need p1 in [0, 0.5) and p2 in [0.5, 1] with p1 < p2, got ({p1}, {p2})"
        )
    a1 = relative_cutoff(f, p1)
    a2 = relative_cutoff(f, p2)
    labels = np.full(f.values.shape, DEFINITE_BACKGROUND, dtype=np.uint8)
    labels[f.values > a1] = PROBABLE_BACKGROUND
    fg = f.values > a2
    if not fg.any():
        raise EmptyForeground(f"no pixel exceeds the upper cutoff {a2:.6g} (p2={p2})")
    labels[fg] = PROBABLE_FOREGROUND
    return Trimap(labels)


def average_maps(maps) -> EEGMap:
    """Pointwise mean of same-geometry maps, then normalize_map."""
    maps = list(maps)
    if not maps:
        raise EmptyList("average_maps needs at least one map")
    geo = maps[0].geometry()
    for m in maps[1:]:
        if m.geometry() != geo:
            raise GeometryMismatch(f"map geometry {m.geometry()} differs from {geo}")
    mean = np.mean([m.scores for m in maps], axis=0)
    return normalize_map(replace(maps[0], scores=mean, normalized=False))


# --------------------------------------------------------------------------
# Serialization: CSV score matrix + JSON sidecar with geometry, rendered PGM
# for visual inspection.
# --------------------------------------------------------------------------

def save_map_csv(m: EEGMap, csv_path, sidecar_path=None) -> None:
    """Write scores as a rows x cols CSV; geometry goes to a JSON sidecar."""
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in m.scores:
            writer.writerow([repr(float(v)) for v in row])
    if sidecar_path is None:
        sidecar_path = str(csv_path) + ".json"
    meta = {
        "cols": m.cols,
        "rows": m.rows,
        "window_width": m.window_width,
        "window_height": m.window_height,
        "normalized": m.normalized,
    }
    with open(sidecar_path, "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_map_csv(csv_path, sidecar_path=None) -> EEGMap:
    if sidecar_path is None:
        sidecar_path = str(csv_path) + ".json"
    with open(sidecar_path) as fh:
        meta = json.load(fh)
    with open(csv_path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    return EEGMap(
        meta["cols"], meta["rows"], meta["window_width"], meta["window_height"],
        np.array(rows, dtype=float), normalized=bool(meta["normalized"]),
    )


def render_pgm(values, path) -> None:
    """Render a map (EEGMap, FilteredMap, or array) as 8-bit grayscale PGM.

    Values are min-max scaled to 0..255; a constant map renders mid-gray.
    """
    from .imaging import write_pgm

    if isinstance(values, EEGMap):
        arr = values.to_pixels()
    elif isinstance(values, FilteredMap):
        arr = values.values
    else:
        arr = np.asarray(values, dtype=float)
    lo, hi = float(arr.min()), float(arr.max())
    if hi > lo:
        gray = np.round(255.0 * (arr - lo) / (hi - lo)).astype(np.uint8)
    else:
        gray = np.full(arr.shape, 128, dtype=np.uint8)
    write_pgm(gray, path)
