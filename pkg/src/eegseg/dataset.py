"""Synthetic image/mask pairs: one colored object on a textured background.

Scenes keep the benchmark's flavor: a single object of limited-complexity
shape (disc, rectangle, or smooth blob) over a background with a gentle
gradient, sinusoidal texture, and pixel noise. A configurable number of
images are "camouflage" scenes whose object color matches the background,
the known failure mode of color-model segmentation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpec
from .imaging import BinaryMask, Image

_SHAPES = ("disc", "rect", "blob")


@dataclass(frozen=True)
class DatasetSpec:
    n_images: int = 22
    width: int = 96
    height: int = 72
    area_fraction: tuple = (0.10, 0.20)   # object area as fraction of image
    n_camouflage: int = 2
    noise_sd: float = 7.0                 # pixel noise, 0..255 scale
    texture_amp: float = 9.0              # background sinusoid amplitude
    min_color_dist: float = 90.0          # object/background separation (normal scenes)
    camouflage_offset: float = 10.0       # object/background separation (camouflage)

    def __post_init__(self):
        lo, hi = self.area_fraction
        if self.n_images < 1 or not (0.01 <= lo <= hi <= 0.5):
            raise InvalidSpec(f"bad dataset spec: n={self.n_images}, area={self.area_fraction}")
        if self.width < 16 or self.height < 16:
            raise InvalidSpec("images must be at least 16x16")
        if not 0 <= self.n_camouflage <= self.n_images:
            raise InvalidSpec("n_camouflage out of range")


def _background(spec: DatasetSpec, rng) -> np.ndarray:
    h, w = spec.height, spec.width
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    base = rng.uniform(50.0, 205.0, size=3)
    img = np.empty((h, w, 3))
    for c in range(3):
        grad = rng.uniform(-25, 25) * (xx / w) + rng.uniform(-25, 25) * (yy / h)
        fx, fy = rng.integers(1, 4), rng.integers(1, 4)
        phase = rng.uniform(0, 2 * np.pi)
        tex = spec.texture_amp * np.sin(2 * np.pi * (fx * xx / w + fy * yy / h) + phase)
        img[:, :, c] = base[c] + grad + tex
    return img, base


def _shape_mask(spec: DatasetSpec, rng, shape: str, area_target: float) -> np.ndarray:
    h, w = spec.height, spec.width
    total = h * w
    margin = 3
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    if shape == "disc":
        r = np.sqrt(area_target * total / np.pi)
        cx = rng.uniform(r + margin, w - r - margin)
        cy = rng.uniform(r + margin, h - r - margin)
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    if shape == "rect":
        aspect = rng.uniform(0.6, 1.6)
        rw = int(round(np.sqrt(area_target * total * aspect)))
        rh = int(round(area_target * total / max(rw, 1)))
        rw = min(max(rw, 3), w - 2 * margin)
        rh = min(max(rh, 3), h - 2 * margin)
        x0 = rng.integers(margin, w - margin - rw + 1)
        y0 = rng.integers(margin, h - margin - rh + 1)
        mask = np.zeros((h, w), dtype=bool)
        mask[y0 : y0 + rh, x0 : x0 + rw] = True
        return mask
    # smooth blob: disc with a low-order radial perturbation, rescaled to the
    # target area in a couple of corrections
    r0 = np.sqrt(area_target * total / np.pi)
    amps = rng.uniform(0.0, 0.22, size=4)
    phases = rng.uniform(0, 2 * np.pi, size=4)
    cx = rng.uniform(1.35 * r0 + margin, w - 1.35 * r0 - margin)
    cy = rng.uniform(1.35 * r0 + margin, h - 1.35 * r0 - margin)
    scale = 1.0
    mask = None
    for _ in range(3):
        theta = np.arctan2(yy - cy, xx - cx)
        rad = scale * r0 * (
            1.0 + sum(a * np.cos((k + 2) * theta + p) for k, (a, p) in enumerate(zip(amps, phases)))
        )
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= rad * rad
        actual = mask.sum() / total
        if actual <= 0:
            scale *= 1.5
            continue
        if abs(actual - area_target) / area_target < 0.02:
            break
        scale *= np.sqrt(area_target / actual)
    return mask


def _object_color(base: np.ndarray, rng, camouflage: bool, spec: DatasetSpec) -> np.ndarray:
    if camouflage:
        return np.clip(base + rng.uniform(-spec.camouflage_offset, spec.camouflage_offset, 3), 0, 255)
    for _ in range(64):
        cand = rng.uniform(25.0, 230.0, size=3)
        if np.linalg.norm(cand - base) >= spec.min_color_dist:
            return cand
    # deterministic fallback: push to the far corner of the color cube
    return np.where(base < 128.0, 230.0, 25.0)


def generate_dataset(spec: DatasetSpec, seed: int) -> list[tuple[Image, BinaryMask]]:
    """Deterministic list of (image, mask) pairs for a given seed.

    The last ``n_camouflage`` scenes use an object color inside the
    background's color distribution; all masks are exact and non-empty.
    """
    children = np.random.SeedSequence(seed).spawn(spec.n_images)
    out = []
    lo, hi = spec.area_fraction
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        camouflage = i >= spec.n_images - spec.n_camouflage
        shape = _SHAPES[i % len(_SHAPES)]
        area = rng.uniform(lo, hi)
        bg, base = _background(spec, rng)
        mask = _shape_mask(spec, rng, shape, area)
        color = _object_color(base, rng, camouflage, spec)

        img = bg.copy()
        obj_tex = rng.uniform(0.3, 0.8) * spec.texture_amp
        yy, xx = np.mgrid[0 : spec.height, 0 : spec.width].astype(float)
        phase = rng.uniform(0, 2 * np.pi)
        wave = obj_tex * np.sin(2 * np.pi * (2 * xx / spec.width + yy / spec.height) + phase)
        for c in range(3):
            img[:, :, c][mask] = color[c] + wave[mask]
        img += rng.normal(0.0, spec.noise_sd, img.shape)
        pixels = np.clip(np.round(img), 0, 255).astype(np.uint8)
        out.append((Image(pixels), BinaryMask(mask)))
    return out
