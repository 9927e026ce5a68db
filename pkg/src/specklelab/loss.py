"""Hybrid despeckling cost: pixel MSE plus a KL term on the removed noise.

    loss = mean((X_hat - X)^2) + lam * KL(p_hat || p_gamma)

``p_hat`` is a soft histogram of the estimated speckle ``Y / max(X_hat, floor)``
and ``p_gamma`` is the unit-mean Gamma(L, L) law integrated over the same
bins. KL is measured in bits. The soft histogram uses a triangular kernel
so the KL term is piecewise-differentiable in every pixel of ``X_hat``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ShapeError
from .speckle import gamma_pdf

LOG2E = 1.0 / math.log(2.0)


@dataclass(frozen=True)
class LossConfig:
    lam: float = 1.0
    bins: int = 64
    range_max: float | None = None  # None -> 8 * (1 + 3 / sqrt(L))
    soft_bandwidth: float = 1.0
    epsilon_floor: float = 1e-8
    division_floor: float = 1e-3
    detach_kl: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.bins < 2:
            raise ValueError("need at least 2 bins")
        if self.range_max is not None and self.range_max <= 0:
            raise ValueError("range_max must be > 0")
        if self.soft_bandwidth <= 0.5:
            # at or below half a bin some values would fall between kernels
            raise ValueError("soft_bandwidth must exceed 0.5 bin widths")
        if self.epsilon_floor <= 0 or self.division_floor <= 0:
            raise ValueError("floors must be > 0")

    def n_max(self, looks: int) -> float:
        if self.range_max is not None:
            return float(self.range_max)
        return 8.0 * (1.0 + 3.0 / math.sqrt(looks))

    def edges(self, looks: int) -> np.ndarray:
        return np.linspace(0.0, self.n_max(looks), self.bins + 1)


@dataclass(frozen=True)
class Pmf:
    bin_edges: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        e, p = np.asarray(self.bin_edges, float), np.asarray(self.probs, float)
        if e.ndim != 1 or p.ndim != 1 or e.size != p.size + 1:
            raise ShapeError(f"need B+1 edges for B probabilities, got {e.size} and {p.size}")
        if p.size < 2:
            raise ValueError("a pmf needs at least 2 bins")
        if np.any(np.diff(e) <= 0):
            raise ValueError("bin edges must be strictly increasing")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"probabilities must be >= 0 and sum to 1 (sum={p.sum()!r})")
        object.__setattr__(self, "bin_edges", e)
        object.__setattr__(self, "probs", p)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)


@dataclass
class SoftHistogram:
    """Soft-binned pmf and the sparse derivative of each bin w.r.t. each value.

    Value ``i`` contributes ``weight[i, s]`` to bin ``index[i, s]``; the
    derivative of that contribution w.r.t. the value is ``dweight[i, s]``
    (already divided by the value count, zero where the value was clamped).
    """

    pmf: Pmf
    index: np.ndarray
    weight: np.ndarray
    dweight: np.ndarray
    shape: tuple = field(default=())

    def vjp(self, grad_probs: np.ndarray) -> np.ndarray:
        """Pull a gradient w.r.t. the bin probabilities back onto the values."""
        g = np.asarray(grad_probs, dtype=np.float64)[self.index]
        return (g * self.dweight).sum(axis=1).reshape(self.shape)

    def jacobian(self) -> np.ndarray:
        """Dense ``(bins, values)`` matrix d probs / d values."""
        n = self.index.shape[0]
        jac = np.zeros((self.pmf.probs.size, n))
        rows = np.repeat(np.arange(n)[:, None], self.index.shape[1], axis=1)
        np.add.at(jac, (self.index, rows), self.dweight)
        return jac


def mse(prediction, reference) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient ``2 (X_hat - X) / count``."""
    prediction = np.asarray(prediction, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if prediction.shape != reference.shape:
        raise ShapeError(f"prediction {prediction.shape} vs reference {reference.shape}")
    diff = prediction - reference
    return float(np.mean(diff * diff)), (2.0 / diff.size) * diff


def soft_histogram(values, cfg: LossConfig, looks: int = 1) -> SoftHistogram:
    """Triangular-kernel soft histogram on ``cfg.edges(looks)``.

    Each value is spread over the bin centers within ``soft_bandwidth`` bin
    widths of it, with weights ``1 - |v - c| / (h w)`` normalized to sum to
    one. With the default bandwidth of 1 this is linear interpolation
    between the two nearest centers. Values beyond the outer centers are
    clamped onto them and get zero derivative.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("soft_histogram needs at least one value")
    if not np.all(np.isfinite(values)):
        raise ValueError("soft_histogram values must be finite")
    edges = cfg.edges(looks)
    nbins = cfg.bins
    width = edges[1] - edges[0]
    h = cfg.soft_bandwidth
    v = values.ravel()
    n = v.size

    u_raw = (v - 0.5 * width) / width  # position in bin-center units
    inside = (u_raw >= 0) & (u_raw <= nbins - 1)
    u = np.clip(u_raw, 0.0, nbins - 1.0)
    base = np.floor(u)
    reach = math.ceil(h)
    offsets = np.arange(-reach + 1, reach + 1)
    idx = base[:, None].astype(np.int64) + offsets[None, :]
    dist = u[:, None] - idx
    k = 1.0 - np.abs(dist) / h
    live = (k > 0) & (idx >= 0) & (idx < nbins)
    k = np.where(live, k, 0.0)
    dk = np.where(live, -np.sign(dist) / h, 0.0)
    z = k.sum(axis=1, keepdims=True)
    weight = k / z
    dweight = (dk - weight * dk.sum(axis=1, keepdims=True)) / z
    dweight *= (inside / (width * n))[:, None]
    idx = np.clip(idx, 0, nbins - 1)

    probs = np.bincount(idx.ravel(), weights=weight.ravel(), minlength=nbins) / n
    return SoftHistogram(Pmf(edges, probs), idx, weight, dweight, values.shape)


def hard_histogram(values, cfg: LossConfig, looks: int = 1) -> Pmf:
    """Ordinary counting histogram on the same bins; out-of-range values go to the edge bins."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("hard_histogram needs at least one value")
    edges = cfg.edges(looks)
    counts, _ = np.histogram(np.clip(values, edges[0], edges[-1]), bins=edges)
    return Pmf(edges, counts / values.size)


@lru_cache(maxsize=64)
def _gamma_bin_masses(looks: int, edges: tuple) -> np.ndarray:
    nodes, wts = np.polynomial.legendre.leggauss(16)
    e = np.asarray(edges)
    lo, hi = e[:-1, None], e[1:, None]
    x = 0.5 * (hi - lo) * nodes[None, :] + 0.5 * (hi + lo)
    mass = 0.5 * (hi - lo)[:, 0] * (gamma_pdf(x, looks) * wts[None, :]).sum(axis=1)
    return mass / mass.sum()


def reference_gamma_pmf(looks: int, cfg: LossConfig) -> Pmf:
    """Gamma(L, L) mass per bin by 16-node Gauss-Legendre, renormalized over the range."""
    if looks < 1:
        raise ValueError("looks must be >= 1")
    edges = cfg.edges(looks)
    return Pmf(edges, _gamma_bin_masses(int(looks), tuple(edges.tolist())).copy())


def _floored(p: np.ndarray, eps: float) -> tuple[np.ndarray, float]:
    q = p + eps
    s = q.sum()
    return q / s, s


def kl_divergence(p_hat: Pmf, p_ref: Pmf, epsilon_floor: float = 1e-8) -> float:
    """``sum p_hat * log2(p_hat / p_ref)`` after flooring both pmfs by ``epsilon_floor``."""
    return _kl_and_grad(p_hat, p_ref, epsilon_floor)[0]


def _kl_and_grad(p_hat: Pmf, p_ref: Pmf, eps: float) -> tuple[float, np.ndarray]:
    if p_hat.bin_edges.shape != p_ref.bin_edges.shape or not np.array_equal(
        p_hat.bin_edges, p_ref.bin_edges
    ):
        raise ValueError("kl_divergence needs both pmfs on identical bins")
    q, s = _floored(p_hat.probs, eps)
    r, _ = _floored(p_ref.probs, eps)
    log_ratio = np.log2(q / r)
    kl = float(np.sum(q * log_ratio))
    # d/dq of sum q log2(q/r) is log2(q/r) + log2(e); the constant cancels
    # through the renormalization q = (p + eps) / s
    g = log_ratio + LOG2E
    grad = (g - np.dot(g, q)) / s
    return max(kl, 0.0), grad


@dataclass
class LossResult:
    total: float
    mse: float
    kl: float
    grad: np.ndarray


def total_loss(noisy, prediction, reference, cfg: LossConfig, looks: int) -> LossResult:
    """MSE(X_hat, X) + lam * KL(soft-hist of Y / max(X_hat, floor) || Gamma pmf).

    One histogram is built over every pixel passed in. The returned gradient
    is w.r.t. ``prediction`` and includes the KL path through the division
    unless ``cfg.detach_kl`` is set.
    """
    noisy = np.asarray(noisy, dtype=np.float64)
    prediction = np.asarray(prediction, dtype=np.float64)
    if noisy.shape != prediction.shape:
        raise ShapeError(f"noisy {noisy.shape} vs prediction {prediction.shape}")
    mse_value, grad = mse(prediction, reference)

    floor = cfg.division_floor
    safe = np.maximum(prediction, floor)
    noise_hat = noisy / safe
    if not np.all(np.isfinite(noise_hat)):
        # let the caller see which term went bad instead of failing inside the histogram
        nan = float("nan")
        return LossResult(nan, mse_value, nan, np.full_like(prediction, nan))
    hist = soft_histogram(noise_hat, cfg, looks)
    kl, dkl_dp = _kl_and_grad(hist.pmf, reference_gamma_pmf(looks, cfg), cfg.epsilon_floor)

    if cfg.lam != 0 and not cfg.detach_kl:
        dkl_dn = hist.vjp(dkl_dp)
        dn_dx = np.where(prediction > floor, -noisy / (safe * safe), 0.0)
        grad = grad + cfg.lam * (dkl_dn * dn_dx)
    return LossResult(mse_value + cfg.lam * kl, mse_value, kl, grad)
