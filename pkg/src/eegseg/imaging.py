"""Images, binary masks, window grids, rasterization, Jaccard scoring, and file I/O.

Pixel data is stored row-major in numpy arrays: images as ``(height, width, 3)``
uint8, masks as ``(height, width)`` bool. Window indices are row-major too
(index = row * cols + col). All types are treated as immutable values; the
operations below never modify their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image as _PILImage

from .errors import DimensionMismatch, LengthMismatch, NonDivisibleDims


@dataclass(frozen=True)
class Image:
    """8-bit RGB image, shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise DimensionMismatch(f"expected (H, W, 3) uint8 pixels, got shape {px.shape}")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class BinaryMask:
    """Boolean foreground mask, shape (height, width). True = foreground."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=bool)
        if b.ndim != 2 or b.shape[0] < 1 or b.shape[1] < 1:
            raise DimensionMismatch(f"expected (H, W) boolean mask, got shape {b.shape}")
        object.__setattr__(self, "bits", b)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def area(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class WindowGrid:
    """Partition of an image into equal rectangular windows.

    ``labels`` holds one boolean per window (shape (rows, cols)); True marks a
    target window, i.e. one that overlaps the object of interest.
    """

    cols: int
    rows: int
    window_width: int
    window_height: int
    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=bool)
        if lab.shape != (self.rows, self.cols):
            raise DimensionMismatch(
                f"labels shape {lab.shape} does not match grid {self.rows}x{self.cols}"
            )
        object.__setattr__(self, "labels", lab)

    @property
    def n_windows(self) -> int:
        return self.cols * self.rows

    @property
    def image_width(self) -> int:
        return self.cols * self.window_width

    @property
    def image_height(self) -> int:
        return self.rows * self.window_height

    def flat_labels(self) -> np.ndarray:
        """Window labels as a flat row-major vector of length n_windows."""
        return self.labels.ravel().copy()


def partition_grid(image_dims: tuple[int, int], grid: tuple[int, int]) -> WindowGrid:
    """Split a width x height image into cols x rows equal windows.

    Raises NonDivisibleDims unless both dimensions divide evenly. Labels start
    all False; use :func:`label_windows` to mark targets.
    """
    width, height = image_dims
    cols, rows = grid
    if width <= 0 or height <= 0 or cols <= 0 or rows <= 0:
        raise NonDivisibleDims(f"dims and grid must be positive, got {image_dims}, {grid}")
    if width % cols != 0 or height % rows != 0:
        raise NonDivisibleDims(
            f"{width}x{height} image not divisible into a {cols}x{rows} grid"
        )
    return WindowGrid(
        cols=cols,
        rows=rows,
        window_width=width // cols,
        window_height=height // rows,
        labels=np.zeros((rows, cols), dtype=bool),
    )


def label_windows(grid: WindowGrid, gt: BinaryMask, min_overlap: float = 0.0) -> WindowGrid:
    """Mark as target every window whose ground-truth overlap reaches min_overlap.

    A window is a target iff the fraction of its pixels set in ``gt`` is
    >= min_overlap and at least one pixel is set. With the default
    min_overlap=0, any object pixel makes the window a target.
    """
    if not 0.0 <= min_overlap <= 1.0:
        raise DimensionMismatch(f"min_overlap must be in [0, 1], got {min_overlap}")
    if (gt.height, gt.width) != (grid.image_height, grid.image_width):
        raise DimensionMismatch(
            f"mask {gt.width}x{gt.height} does not cover grid "
            f"{grid.image_width}x{grid.image_height}"
        )
    counts = gt.bits.reshape(grid.rows, grid.window_height, grid.cols, grid.window_width)
    counts = counts.sum(axis=(1, 3))
    frac = counts / float(grid.window_width * grid.window_height)
    labels = (counts > 0) & (frac >= min_overlap)
    return WindowGrid(grid.cols, grid.rows, grid.window_width, grid.window_height, labels)


def jaccard(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection-over-union of two masks; 1.0 when both are empty."""
    if a.bits.shape != b.bits.shape:
        raise DimensionMismatch(f"mask shapes differ: {a.bits.shape} vs {b.bits.shape}")
    inter = int(np.count_nonzero(a.bits & b.bits))
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        return 1.0
    return inter / union


def rasterize(grid: WindowGrid, values) -> np.ndarray:
    """Expand per-window values to pixel resolution.

    ``values`` is flat row-major, one real per window. Every pixel of window w
    carries values[w] in the returned (height, width) float array.
    """
    vals = np.asarray(values, dtype=float).ravel()
    if vals.size != grid.n_windows:
        raise LengthMismatch(f"expected {grid.n_windows} values, got {vals.size}")
    tiles = vals.reshape(grid.rows, grid.cols)
    return np.repeat(np.repeat(tiles, grid.window_height, axis=0), grid.window_width, axis=1)


# --------------------------------------------------------------------------
# File I/O: PNG via Pillow, binary PPM (P6) / PGM (P5) from scratch.
# Masks are PGM with 0 = background, 255 = foreground; round-trips are
# bit-exact.
# --------------------------------------------------------------------------

def write_png(image: Image, path) -> None:
    _PILImage.fromarray(image.pixels, mode="RGB").save(path, format="PNG")


def read_png(path) -> Image:
    with _PILImage.open(path) as im:
        return Image(np.asarray(im.convert("RGB"), dtype=np.uint8))


def write_ppm(image: Image, path) -> None:
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (image.width, image.height))
        fh.write(image.pixels.tobytes())


def _read_netpbm_header(fh, magic: bytes):
    if fh.read(2) != magic:
        raise DimensionMismatch(f"not a {magic.decode()} file")
    fields = []
    while len(fields) < 3:
        line = fh.readline()
        if not line:
            raise DimensionMismatch("truncated netpbm header")
        line = line.split(b"#", 1)[0]
        fields.extend(int(tok) for tok in line.split())
    width, height, maxval = fields[:3]
    if maxval != 255:
        raise DimensionMismatch(f"only maxval 255 supported, got {maxval}")
    return width, height


def read_ppm(path) -> Image:
    with open(path, "rb") as fh:
        width, height = _read_netpbm_header(fh, b"P6")
        data = fh.read(width * height * 3)
    px = np.frombuffer(data, dtype=np.uint8).reshape(height, width, 3)
    return Image(px.copy())


def write_pgm(gray: np.ndarray, path) -> None:
    """Write an 8-bit grayscale (height, width) array as binary PGM."""
    arr = np.asarray(gray, dtype=np.uint8)
    if arr.ndim != 2:
        raise DimensionMismatch(f"expected 2-d grayscale array, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (arr.shape[1], arr.shape[0]))
        fh.write(arr.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        width, height = _read_netpbm_header(fh, b"P5")
        data = fh.read(width * height)
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width).copy()


def write_mask(mask: BinaryMask, path) -> None:
    write_pgm(np.where(mask.bits, 255, 0).astype(np.uint8), path)


def read_mask(path) -> BinaryMask:
    return BinaryMask(read_pgm(path) >= 128)
