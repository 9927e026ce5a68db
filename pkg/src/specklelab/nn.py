"""A small dense-tensor network engine in float64.

Tensors are numpy arrays shaped ``(batch, channels, height, width)``.
Forward functions take an optional :class:`Tape`; when one is given they
record a closure that, on :meth:`Tape.backward`, maps the upstream gradient
to the input gradient and accumulates parameter gradients under
``"<name>.<field>"`` keys.

Conventions:

* convolution is cross-correlation (kernel not flipped), stride 1,
  zero padding ``(K - 1) // 2`` so spatial size is preserved;
* the ReLU subgradient at exactly 0 is 0;
* batch normalization normalizes with the biased batch variance and keeps
  running statistics as ``r <- momentum * r + (1 - momentum) * batch``;
* SGD uses classical momentum: ``v <- mu * v + g``, ``p <- p - lr * v``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, StateError


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int = 3

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be >= 1")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel size must be a positive odd integer, got {self.kernel}")

    @property
    def padding(self) -> int:
        return (self.kernel - 1) // 2


@dataclass
class LayerParams:
    """Learnable conv weights/bias plus optional batch-norm state."""

    weights: np.ndarray
    bias: np.ndarray
    bn_scale: np.ndarray | None = None
    bn_shift: np.ndarray | None = None
    bn_running_mean: np.ndarray | None = None
    bn_running_var: np.ndarray | None = None
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.9

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ShapeError(f"weights must be (M, N, K, K), got {self.weights.shape}")
        m = self.weights.shape[0]
        if self.bias.shape != (m,):
            raise ShapeError(f"bias must have shape ({m},), got {self.bias.shape}")
        if self.has_bn:
            for name in ("bn_shift", "bn_running_mean", "bn_running_var"):
                if getattr(self, name) is None or getattr(self, name).shape != (m,):
                    raise ShapeError(f"{name} must have shape ({m},)")
            if self.bn_epsilon <= 0:
                raise ValueError("bn_epsilon must be > 0")
            if not 0 < self.bn_momentum < 1:
                raise ValueError("bn_momentum must lie in (0, 1)")
            if np.any(self.bn_running_var < 0):
                raise ValueError("bn_running_var must be >= 0")

    @property
    def has_bn(self) -> bool:
        return self.bn_scale is not None

    @property
    def spec(self) -> ConvSpec:
        m, n, k, _ = self.weights.shape
        return ConvSpec(n, m, k)

    def arrays(self) -> dict[str, np.ndarray]:
        """Every buffer by field name, learnable or not."""
        out = {"weights": self.weights, "bias": self.bias}
        if self.has_bn:
            out.update(
                bn_scale=self.bn_scale,
                bn_shift=self.bn_shift,
                bn_running_mean=self.bn_running_mean,
                bn_running_var=self.bn_running_var,
            )
        return out

    def learnable(self) -> dict[str, np.ndarray]:
        out = {"weights": self.weights, "bias": self.bias}
        if self.has_bn:
            out.update(bn_scale=self.bn_scale, bn_shift=self.bn_shift)
        return out


def he_init(spec: ConvSpec, seed, batchnorm: bool = True,
            bn_epsilon: float = 1e-5, bn_momentum: float = 0.9) -> LayerParams:
    """Weights ~ Normal(0, 2 / (N K^2)), zero bias, identity batch-norm.

    ``seed`` is anything :func:`numpy.random.default_rng` accepts.
    """
    rng = np.random.default_rng(seed)
    fan_in = spec.in_channels * spec.kernel**2
    shape = (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel)
    weights = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
    m = spec.out_channels
    bn = {}
    if batchnorm:
        bn = dict(bn_scale=np.ones(m), bn_shift=np.zeros(m),
                  bn_running_mean=np.zeros(m), bn_running_var=np.ones(m))
    return LayerParams(weights, np.zeros(m), bn_epsilon=bn_epsilon, bn_momentum=bn_momentum, **bn)


class Tape:
    """Records backward closures during a forward pass."""

    def __init__(self):
        self._ops: list[Callable[[np.ndarray, dict], np.ndarray]] = []
        self._out_shape: tuple | None = None
        self.grads: dict[str, np.ndarray] = {}

    def __len__(self):
        return len(self._ops)

    def record(self, op: Callable[[np.ndarray, dict], np.ndarray], out_shape: tuple):
        self._ops.append(op)
        self._out_shape = out_shape

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        """Run the recorded ops in reverse; returns d(loss)/d(input)."""
        if not self._ops:
            raise StateError("backward called before any forward pass was recorded")
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != self._out_shape:
            raise ShapeError(f"upstream gradient {upstream.shape} != output {self._out_shape}")
        self.grads = {}
        g = upstream
        for op in reversed(self._ops):
            g = op(g, self.grads)
        return g


def _accumulate(grads: dict, key: str, value: np.ndarray):
    if key in grads:
        grads[key] = grads[key] + value
    else:
        grads[key] = value


def _im2col(x: np.ndarray, kernel: int) -> np.ndarray:
    """Columns of shape ``(N*K*K, B*H*W)``; rows ordered (channel, ki, kj)."""
    b, n, h, w = x.shape
    p = (kernel - 1) // 2
    xp = np.pad(x.transpose(1, 0, 2, 3), ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))  # (n, b, h, w, K, K)
    return win.transpose(0, 4, 5, 1, 2, 3).reshape(n * kernel * kernel, b * h * w)


def conv2d_forward(x: np.ndarray, p: LayerParams, spec: ConvSpec | None = None,
                   tape: Tape | None = None, name: str = "conv") -> np.ndarray:
    """Same-size 2-D cross-correlation plus bias: ``out[m] = sum_n w[m,n] * x[n] + b[m]``."""
    spec = spec or p.spec
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise ShapeError(f"expected (B, {spec.in_channels}, H, W) input, got {x.shape}")
    if p.weights.shape != (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel):
        raise ShapeError(f"weights {p.weights.shape} do not match {spec}")
    b, n, h, w = x.shape
    m, k = spec.out_channels, spec.kernel
    cols = _im2col(x, k)
    wmat = p.weights.reshape(m, -1)
    out = (wmat @ cols + p.bias[:, None]).reshape(m, b, h, w)
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))

    if tape is not None:
        weights = p.weights

        def backward(dout, grads):
            dmat = np.ascontiguousarray(dout.transpose(1, 0, 2, 3)).reshape(m, -1)
            _accumulate(grads, f"{name}.weights", (dmat @ cols.T).reshape(weights.shape))
            _accumulate(grads, f"{name}.bias", dmat.sum(axis=1))
            # input gradient: correlate dout with the flipped, channel-swapped kernels
            wflip = weights[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(n, -1)
            dx = (wflip @ _im2col(dout, k)).reshape(n, b, h, w)
            return np.ascontiguousarray(dx.transpose(1, 0, 2, 3))

        tape.record(backward, out.shape)
    return out


def relu_forward(x: np.ndarray, tape: Tape | None = None) -> np.ndarray:
    out = np.maximum(x, 0.0)
    if tape is not None:
        mask = x > 0
        tape.record(lambda dout, grads: dout * mask, out.shape)
    return out


def batchnorm_forward(x: np.ndarray, p: LayerParams, mode: str = "train",
                      tape: Tape | None = None, name: str = "bn") -> np.ndarray:
    """Per-channel batch normalization.

    ``train`` normalizes with batch statistics and updates the running
    averages in place; ``infer`` uses the running statistics only.
    """
    if not p.has_bn:
        raise ValueError("layer has no batch-norm parameters")
    if x.ndim != 4 or x.shape[1] != p.bn_scale.shape[0]:
        raise ShapeError(f"expected {p.bn_scale.shape[0]} channels, got input {x.shape}")
    gamma = p.bn_scale[None, :, None, None]
    beta = p.bn_shift[None, :, None, None]
    if mode == "infer":
        inv = 1.0 / np.sqrt(p.bn_running_var + p.bn_epsilon)
        out = (x - p.bn_running_mean[None, :, None, None]) * inv[None, :, None, None] * gamma + beta
        if tape is not None:
            scale = inv[None, :, None, None] * gamma
            xhat = (x - p.bn_running_mean[None, :, None, None]) * inv[None, :, None, None]

            def backward_infer(dout, grads):
                _accumulate(grads, f"{name}.bn_scale", (dout * xhat).sum(axis=(0, 2, 3)))
                _accumulate(grads, f"{name}.bn_shift", dout.sum(axis=(0, 2, 3)))
                return dout * scale

            tape.record(backward_infer, out.shape)
        return out
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")

    count = x.shape[0] * x.shape[2] * x.shape[3]
    if count < 2:
        raise ValueError("batch-norm in train mode needs at least 2 values per channel")
    mean = x.mean(axis=(0, 2, 3))
    centered = x - mean[None, :, None, None]
    var = (centered**2).mean(axis=(0, 2, 3))
    inv = 1.0 / np.sqrt(var + p.bn_epsilon)
    xhat = centered * inv[None, :, None, None]
    out = xhat * gamma + beta

    mom = p.bn_momentum
    p.bn_running_mean[...] = mom * p.bn_running_mean + (1.0 - mom) * mean
    p.bn_running_var[...] = mom * p.bn_running_var + (1.0 - mom) * var

    if tape is not None:

        def backward(dout, grads):
            _accumulate(grads, f"{name}.bn_scale", (dout * xhat).sum(axis=(0, 2, 3)))
            _accumulate(grads, f"{name}.bn_shift", dout.sum(axis=(0, 2, 3)))
            dxhat = dout * gamma
            s1 = dxhat.mean(axis=(0, 2, 3))[None, :, None, None]
            s2 = (dxhat * xhat).mean(axis=(0, 2, 3))[None, :, None, None]
            return (dxhat - s1 - xhat * s2) * inv[None, :, None, None]

        tape.record(backward, out.shape)
    return out


@dataclass
class OptimState:
    learning_rate: float = 2e-6
    momentum: float = 0.9
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")


def sgd_momentum_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                      state: OptimState) -> None:
    """One classical-momentum step, updating ``params`` and ``state`` in place.

    Parameters without a gradient entry are left untouched.
    """
    for key, g in grads.items():
        if key not in params:
            raise KeyError(f"gradient for unknown parameter {key!r}")
        p = params[key]
        if g.shape != p.shape:
            raise ShapeError(f"{key}: gradient {g.shape} != parameter {p.shape}")
        v = state.velocity.get(key)
        if v is None:
            v = state.velocity[key] = np.zeros_like(p)
        elif v.shape != p.shape:
            raise ShapeError(f"{key}: velocity {v.shape} != parameter {p.shape}")
        v *= state.momentum
        v += g
        p -= state.learning_rate * v
