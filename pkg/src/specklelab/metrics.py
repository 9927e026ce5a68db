"""Despeckling quality measures.

Reference-based: :func:`psnr`, :func:`ssim`, :func:`snr`.
No-reference: :func:`ratio_image`, :func:`ratio_kl`, :func:`enl`.

``psnr`` and ``snr`` return :data:`IDENTICAL` (``+inf``) when the test image
equals the reference; reports spell it ``identical``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .loss import LossConfig, hard_histogram, kl_divergence, reference_gamma_pmf
from .model import DEFAULT_FLOOR

IDENTICAL = math.inf
METRIC_NAMES = ("psnr", "ssim", "snr", "enl", "ratio_kl")


def _pair(reference, test) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(reference, dtype=np.float64)
    b = np.asarray(test, dtype=np.float64)
    if a.ndim != 2 or a.shape != b.shape:
        raise ShapeError(f"need two 2-D images of equal shape, got {a.shape} and {b.shape}")
    return a, b


def psnr(reference, test, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)`` in dB."""
    if peak <= 0:
        raise ValueError("peak must be > 0")
    a, b = _pair(reference, test)
    err = float(np.mean((a - b) ** 2))
    if err == 0:
        return IDENTICAL
    return 10.0 * math.log10(peak * peak / err)


def snr(reference, test) -> float:
    """``10 log10(var(reference) / MSE)`` in dB."""
    a, b = _pair(reference, test)
    var = float(np.var(a))
    if var == 0:
        raise ValueError("snr is undefined for a constant reference")
    err = float(np.mean((a - b) ** 2))
    if err == 0:
        return IDENTICAL
    return 10.0 * math.log10(var / err)


def ssim(reference, test, window: int = 8, k1: float = 0.01, k2: float = 0.03,
         data_range: float = 1.0) -> float:
    """Mean SSIM over every ``window x window`` uniform window (population moments)."""
    a, b = _pair(reference, test)
    if a.shape[0] < window or a.shape[1] < window:
        raise ValueError(f"image {a.shape} is smaller than the {window}x{window} window")
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2

    def local_mean(x):
        return sliding_window_view(x, (window, window)).mean(axis=(-2, -1))

    mu_a, mu_b = local_mean(a), local_mean(b)
    var_a = local_mean(a * a) - mu_a * mu_a
    var_b = local_mean(b * b) - mu_b * mu_b
    cov = local_mean(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ratio_image(noisy, filtered, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """``Y / max(X_hat, floor)``; pure speckle for an ideal filter."""
    if floor <= 0:
        raise ValueError("floor must be > 0")
    y, x = _pair(noisy, filtered)
    return y / np.maximum(x, floor)


def ratio_kl(ratio, looks: int, cfg: LossConfig | None = None) -> float:
    """KL (bits) of the hard-binned ratio pixels against the Gamma(L, L) pmf. Lower is better."""
    cfg = cfg or LossConfig()
    pmf = hard_histogram(ratio, cfg, looks)
    return kl_divergence(pmf, reference_gamma_pmf(looks, cfg), cfg.epsilon_floor)


def enl(region) -> float:
    """Equivalent number of looks ``mean^2 / var`` of a homogeneous region."""
    r = np.asarray(region, dtype=np.float64)
    if r.size < 16:
        raise ValueError("enl needs at least 16 pixels")
    var = float(np.var(r))
    if var == 0:
        raise ValueError("enl is undefined for a constant region")
    return float(np.mean(r)) ** 2 / var


def _fmt(v: float) -> str:
    if v == IDENTICAL:
        return "identical"
    return repr(float(v))


@dataclass
class MetricsReport:
    """Per-image metric rows, their means, and provenance."""

    rows: dict[str, dict[str, float]] = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def add(self, image_id: str, values: dict[str, float]):
        unknown = set(values) - set(METRIC_NAMES)
        if unknown:
            raise ValueError(f"unknown metric names {sorted(unknown)}")
        self.rows[image_id] = dict(values)

    @property
    def names(self) -> list[str]:
        seen = {k for row in self.rows.values() for k in row}
        return [n for n in METRIC_NAMES if n in seen]

    def aggregate(self) -> dict[str, float]:
        """Per-metric mean; a column that is ``identical`` everywhere stays ``identical``."""
        out = {}
        for name in self.names:
            vals = [row[name] for row in self.rows.values() if name in row]
            out[name] = float(np.mean(vals))
        return out

    def to_csv(self, path) -> Path:
        path = Path(path)
        names = self.names
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["image", *names])
            for image_id, row in self.rows.items():
                w.writerow([image_id, *(_fmt(row[n]) if n in row else "" for n in names)])
            agg = self.aggregate()
            w.writerow(["mean", *(_fmt(agg[n]) for n in names)])
        return path

    def to_json(self, path) -> Path:
        path = Path(path)
        doc = {
            "metrics": self.names,
            "rows": {k: {n: _fmt(v) for n, v in row.items()} for k, row in self.rows.items()},
            "aggregate": {n: _fmt(v) for n, v in self.aggregate().items()},
            "provenance": self.provenance,
        }
        path.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n", encoding="utf-8")
        return path
