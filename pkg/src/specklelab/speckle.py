"""Fully developed multiplicative speckle.

Images are plain 2-D ``float64`` numpy arrays on a linear intensity scale.
Clean images live in [0, 1]; noisy and ratio images are unbounded above.

The speckle field ``N`` is unit-mean Gamma with shape ``L`` and rate ``L``
(variance ``1/L``), and a noisy observation is ``Y = X * N``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

# ITU-R BT.601 luma weights
LUMA_601 = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class SpeckleConfig:
    looks: int = 1
    seed: int = 0

    def __post_init__(self):
        if int(self.looks) != self.looks or self.looks < 1:
            raise ValueError(f"looks must be a positive integer, got {self.looks!r}")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")


@dataclass(frozen=True)
class PatchSpec:
    patch_size: int = 65
    stride: int = 65
    max_patches: int | None = None
    shuffle_seed: int | None = None

    def __post_init__(self):
        if self.patch_size < 1:
            raise ValueError("patch_size must be >= 1")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.max_patches is not None and self.max_patches < 0:
            raise ValueError("max_patches must be >= 0")


def as_gray(image, name: str = "image") -> np.ndarray:
    """Validate and return ``image`` as a 2-D float64 array."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} has an empty dimension: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _marsaglia_tsang(rng: np.random.Generator, shape: float, count: int) -> np.ndarray:
    # Gamma(shape, 1) for shape >= 1 by squeeze-and-reject
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    out = np.empty(count, dtype=np.float64)
    filled = 0
    while filled < count:
        m = int((count - filled) * 1.05) + 16
        x = rng.standard_normal(m)
        u = rng.random(m)
        v = (1.0 + c * x) ** 3
        positive = v > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            log_v = np.log(np.where(positive, v, 1.0))
            log_u = np.log(u)
        accept = positive & (
            (u < 1.0 - 0.0331 * x**4) | (log_u < 0.5 * x * x + d * (1.0 - v + log_v))
        )
        draws = d * v[accept]
        take = min(draws.size, count - filled)
        out[filled : filled + take] = draws[:take]
        filled += take
    return out


def gamma_speckle_field(cfg: SpeckleConfig, height: int, width: int) -> np.ndarray:
    """Draw an ``height x width`` field of i.i.d. unit-mean Gamma(L, L) samples.

    The field is a pure function of ``(cfg.seed, cfg.looks, height, width)``.
    """
    if height < 1 or width < 1:
        raise ValueError(f"speckle field dimensions must be >= 1, got {height}x{width}")
    rng = np.random.default_rng(cfg.seed)
    draws = _marsaglia_tsang(rng, float(cfg.looks), height * width)
    return (draws / cfg.looks).reshape(height, width)


def apply_speckle(clean, noise) -> np.ndarray:
    """Multiplicative corruption ``Y = X * N``."""
    clean = as_gray(clean, "clean")
    noise = as_gray(noise, "noise")
    if clean.shape != noise.shape:
        raise ShapeError(f"clean {clean.shape} and noise {noise.shape} differ in shape")
    return clean * noise


def gamma_pdf(n, looks: int):
    """Unit-mean Gamma density ``L^L n^(L-1) exp(-L n) / Gamma(L)``.

    Accepts a scalar or an array; evaluated in log space so large ``L`` does
    not overflow.
    """
    if looks < 1:
        raise ValueError("looks must be >= 1")
    arr = np.asarray(n, dtype=np.float64)
    if np.any(arr < 0):
        raise ValueError("gamma_pdf is defined for n >= 0 only")
    L = float(looks)
    if looks == 1:
        out = np.exp(-arr)
    else:
        with np.errstate(divide="ignore"):
            log_p = L * math.log(L) + (L - 1.0) * np.log(arr) - L * arr - math.lgamma(L)
        out = np.exp(log_p)
    return float(out) if out.ndim == 0 else out


def patch_positions(height: int, width: int, patch_size: int, stride: int) -> list[tuple[int, int]]:
    """Top-left anchors of every whole patch, row-major. No padding."""
    if patch_size > height or patch_size > width:
        raise ValueError(f"patch {patch_size} does not fit in a {height}x{width} image")
    rows = range(0, height - patch_size + 1, stride)
    cols = range(0, width - patch_size + 1, stride)
    return [(r, c) for r in rows for c in cols]


def extract_patches(image, spec: PatchSpec) -> list[np.ndarray]:
    """Sliding-window patches, optionally shuffled then truncated."""
    image = as_gray(image)
    pos = patch_positions(*image.shape, spec.patch_size, spec.stride)
    if spec.shuffle_seed is not None:
        order = np.random.default_rng(spec.shuffle_seed).permutation(len(pos))
        pos = [pos[i] for i in order]
    if spec.max_patches is not None:
        pos = pos[: spec.max_patches]
    k = spec.patch_size
    return [image[r : r + k, c : c + k].copy() for r, c in pos]


def to_grayscale(pixels: np.ndarray, maxval: float) -> np.ndarray:
    """Convert an (H, W) or (H, W, 3[+alpha]) integer/float array to [0, 1] gray."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim == 3:
        if arr.shape[2] < 3:
            arr = arr[..., 0]
        else:
            arr = arr[..., 0] * LUMA_601[0] + arr[..., 1] * LUMA_601[1] + arr[..., 2] * LUMA_601[2]
    if arr.ndim != 2:
        raise ShapeError(f"cannot convert array of shape {np.shape(pixels)} to gray")
    return arr / float(maxval)


def synthetic_scene(size: int = 512, seed: int = 7) -> np.ndarray:
    """Deterministic clean test scene in [0.05, 1]: blocks, discs, ramps and stripes.

    Stands in for an optical corpus when none is available. Intensities stay
    above zero so ratio images are well defined everywhere.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = 0.35 + 0.25 * xx * (1 - yy)
    for _ in range(14):
        h, w = rng.integers(size // 16, size // 4, 2)
        r, c = rng.integers(0, size - h), rng.integers(0, size - w)
        img[r : r + h, c : c + w] = rng.uniform(0.1, 0.95)
    for _ in range(10):
        cy, cx = rng.uniform(0, 1, 2)
        rad = rng.uniform(0.02, 0.09)
        img[(yy - cy) ** 2 + (xx - cx) ** 2 < rad**2] = rng.uniform(0.1, 1.0)
    band = (yy > 0.7) & (xx < 0.3)
    img[band] = 0.5 + 0.35 * np.sign(np.sin(2 * np.pi * 24 * xx[band]))
    # small bright targets, a few pixels wide
    for _ in range(40):
        r, c = rng.integers(2, size - 4, 2)
        img[r : r + 3, c : c + 3] = 1.0
    return np.clip(img, 0.05, 1.0)
