"""The despeckling CNN: a plain stack of same-size convolutions.

Layer ``i`` (0-based, ``L`` layers total) is ``conv -> BN -> ReLU`` where
BN is present for ``i < L - 1`` and ReLU for ``0 < i < L - 1``. The network
maps a noisy intensity image directly to an estimate of the clean one.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import (ConfigMismatchError, HeaderError, ShapeError, StateError, TruncatedError,
                     VersionError)
from .nn import ConvSpec, LayerParams, Tape, batchnorm_forward, conv2d_forward, he_init, relu_forward
from .speckle import as_gray

CHECKPOINT_MAGIC = b"KLDNN1\n"
CHECKPOINT_VERSION = 1
DEFAULT_FLOOR = 1e-3


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 10
    hidden_channels: int = 64
    kernel: int = 3
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.9
    relu_before_bn: bool = False

    def __post_init__(self):
        if self.num_layers < 2:
            raise ValueError("num_layers must be >= 2")
        if self.hidden_channels < 1:
            raise ValueError("hidden_channels must be >= 1")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError("kernel must be a positive odd integer")

    def has_bn(self, i: int) -> bool:
        return i < self.num_layers - 1

    def has_relu(self, i: int) -> bool:
        return 0 < i < self.num_layers - 1

    def channels(self, i: int) -> tuple[int, int]:
        """(in, out) channels of layer ``i``."""
        n = 1 if i == 0 else self.hidden_channels
        m = 1 if i == self.num_layers - 1 else self.hidden_channels
        return n, m

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


class Model:
    def __init__(self, config: ModelConfig, layers: list[LayerParams], mode: str = "train"):
        if len(layers) != config.num_layers:
            raise ShapeError(f"config wants {config.num_layers} layers, got {len(layers)}")
        for i, layer in enumerate(layers):
            n, m = config.channels(i)
            want = (m, n, config.kernel, config.kernel)
            if layer.weights.shape != want:
                raise ShapeError(f"layer {i}: weights {layer.weights.shape}, expected {want}")
            if layer.has_bn != config.has_bn(i):
                raise ShapeError(f"layer {i}: batch-norm presence disagrees with config")
        self.config = config
        self.layers = layers
        self.mode = mode
        self._tape: Tape | None = None

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "Model":
        """He-initialized model; layer ``i`` draws from seed sequence ``(seed, i)``."""
        layers = []
        for i in range(config.num_layers):
            n, m = config.channels(i)
            layers.append(he_init(ConvSpec(n, m, config.kernel), np.random.SeedSequence([seed, i]),
                                  batchnorm=config.has_bn(i), bn_epsilon=config.bn_epsilon,
                                  bn_momentum=config.bn_momentum))
        return cls(config, layers)

    def parameters(self) -> dict[str, np.ndarray]:
        """Learnable arrays keyed ``layer<i>.<field>``; the arrays are live views."""
        return {f"layer{i}.{k}": v for i, layer in enumerate(self.layers)
                for k, v in layer.learnable().items()}

    def buffers(self) -> dict[str, np.ndarray]:
        """Every stored array, including batch-norm running statistics."""
        return {f"layer{i}.{k}": v for i, layer in enumerate(self.layers)
                for k, v in layer.arrays().items()}

    def forward(self, x: np.ndarray, mode: str | None = None) -> np.ndarray:
        """Predict the clean image for a ``(B, 1, H, W)`` batch.

        In train mode batch-norm uses batch statistics and the pass is recorded
        for :meth:`backward`.
        """
        mode = mode or self.mode
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeError(f"model input must be (B, 1, H, W), got {x.shape}")
        k = self.config.kernel
        if x.shape[2] < k or x.shape[3] < k:
            raise ShapeError(f"input {x.shape[2]}x{x.shape[3]} smaller than kernel {k}")
        tape = Tape() if mode == "train" else None
        for i, layer in enumerate(self.layers):
            name = f"layer{i}"
            x = conv2d_forward(x, layer, tape=tape, name=name)
            relu = self.config.has_relu(i)
            if relu and self.config.relu_before_bn:
                x = relu_forward(x, tape)
            if layer.has_bn:
                x = batchnorm_forward(x, layer, mode, tape=tape, name=name)
            if relu and not self.config.relu_before_bn:
                x = relu_forward(x, tape)
        self._tape = tape
        return x

    def backward(self, upstream: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
        """Gradients of the last train-mode forward: (parameter grads, input grad)."""
        if self._tape is None:
            raise StateError("backward needs a preceding train-mode forward pass")
        dx = self._tape.backward(upstream)
        return self._tape.grads, dx

    def predict(self, image) -> np.ndarray:
        """Despeckle a single 2-D image in infer mode, clamped to >= 0."""
        image = as_gray(image)
        out = self.forward(image[None, None], mode="infer")[0, 0]
        return np.maximum(out, 0.0)


def predict_noise(noisy, prediction, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """Estimated speckle ``Y / max(X_hat, floor)``."""
    if floor <= 0:
        raise ValueError("floor must be > 0")
    noisy = np.asarray(noisy, dtype=np.float64)
    prediction = np.asarray(prediction, dtype=np.float64)
    if noisy.shape != prediction.shape:
        raise ShapeError(f"noisy {noisy.shape} and prediction {prediction.shape} differ")
    return noisy / np.maximum(prediction, floor)


# checkpoint files


def save_checkpoint(model: Model, path, metadata: Mapping | None = None) -> Path:
    """Write ``model`` (and JSON-serializable ``metadata``) to ``path``."""
    lines = [f"format_version={CHECKPOINT_VERSION}"]
    lines += [f"model.{k}={json.dumps(v)}" for k, v in asdict(model.config).items()]
    lines += [f"meta.{k}={json.dumps(v)}" for k, v in (metadata or {}).items()]
    out = [CHECKPOINT_MAGIC, ("\n".join(lines) + "\n\n").encode("utf-8")]
    for name, arr in model.buffers().items():
        out.append(f"{name} {arr.size}\n".encode("ascii"))
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    path = Path(path)
    path.write_bytes(b"".join(out))
    return path


def _parse_header(buf: bytes) -> tuple[dict, dict, int]:
    if not buf.startswith(CHECKPOINT_MAGIC):
        if buf.startswith(b"KLDNN") and buf[5:6].isdigit():
            raise VersionError(f"unsupported checkpoint magic {buf[:7]!r}")
        raise HeaderError("section 'magic': not a KLDNN checkpoint")
    end = buf.find(b"\n\n", len(CHECKPOINT_MAGIC) - 1)
    if end < 0:
        raise TruncatedError("section 'header': no terminating blank line")
    try:
        text = buf[len(CHECKPOINT_MAGIC) : end].decode("utf-8")
    except UnicodeDecodeError:
        raise HeaderError("section 'header': not UTF-8") from None
    entries = {}
    for line in text.splitlines():
        key, sep, value = line.partition("=")
        if not sep:
            raise HeaderError(f"section 'header': malformed line {line!r}")
        entries[key] = value
    version = entries.pop("format_version", None)
    if version is None:
        raise HeaderError("section 'header': missing format_version")
    if version != str(CHECKPOINT_VERSION):
        raise VersionError(f"checkpoint format_version {version} not supported "
                           f"(this build reads {CHECKPOINT_VERSION})")
    model_cfg, meta = {}, {}
    try:
        for key, value in entries.items():
            section, _, name = key.partition(".")
            if section == "model":
                model_cfg[name] = json.loads(value)
            elif section == "meta":
                meta[name] = json.loads(value)
            else:
                raise HeaderError(f"section 'header': unknown key {key!r}")
    except json.JSONDecodeError as exc:
        raise HeaderError(f"section 'header': bad value ({exc})") from None
    return model_cfg, meta, end + 2


def load_checkpoint(path, expected: ModelConfig | Mapping | None = None) -> tuple[Model, dict]:
    """Read a checkpoint; returns ``(model, metadata)`` with the model in infer mode.

    ``expected`` (a config or a partial mapping of config fields) is checked
    against the stored configuration and any disagreement raises
    :class:`ConfigMismatchError`.
    """
    buf = Path(path).read_bytes()
    cfg_dict, meta, pos = _parse_header(buf)
    try:
        config = ModelConfig.from_dict(cfg_dict)
    except (TypeError, ValueError) as exc:
        raise HeaderError(f"section 'header': invalid model config ({exc})") from None
    if expected is not None:
        want = asdict(expected) if isinstance(expected, ModelConfig) else dict(expected)
        have = asdict(config)
        diffs = {k: (have.get(k), v) for k, v in want.items() if have.get(k) != v}
        if diffs:
            detail = ", ".join(f"{k}: stored {a!r} vs requested {b!r}" for k, (a, b) in diffs.items())
            raise ConfigMismatchError(f"checkpoint config mismatch ({detail})")

    template = Model.init(config, seed=0)
    for name, arr in template.buffers().items():
        nl = buf.find(b"\n", pos)
        if nl < 0:
            raise TruncatedError(f"section '{name}': missing buffer header")
        try:
            got_name, count = buf[pos:nl].decode("ascii").split()
            count = int(count)
        except (UnicodeDecodeError, ValueError):
            raise HeaderError(f"section '{name}': malformed buffer header") from None
        if got_name != name or count != arr.size:
            raise HeaderError(f"section '{name}': found '{got_name}' with {count} values, "
                              f"expected {arr.size}")
        start, stop = nl + 1, nl + 1 + 8 * count
        if stop > len(buf):
            raise TruncatedError(f"section '{name}': payload truncated "
                                 f"({len(buf) - start} of {8 * count} bytes)")
        arr[...] = np.frombuffer(buf, dtype="<f8", count=count, offset=start).reshape(arr.shape)
        pos = stop
    if pos != len(buf):
        raise HeaderError(f"section 'trailer': {len(buf) - pos} unexpected trailing bytes")
    template.mode = "infer"
    return template, meta
