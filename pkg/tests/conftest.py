import numpy as np
import pytest

_CRITERIA: list[tuple[str, bool, str]] = []


def central_difference(f, arr: np.ndarray, index, step: float = 1e-5) -> float:
    """d f / d arr[index] by a central difference, perturbing ``arr`` in place."""
    old = arr[index]
    arr[index] = old + step
    up = f()
    arr[index] = old - step
    down = f()
    arr[index] = old
    return (up - down) / (2 * step)


def numeric_gradient(f, arr: np.ndarray, step: float = 1e-5) -> np.ndarray:
    out = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        out[idx] = central_difference(f, arr, idx, step)
    return out


def relative_error(analytic, numeric, floor: float = 1e-4) -> float:
    """Norm-wise relative error; ``floor`` absorbs finite-difference noise on zero gradients."""
    a, n = np.asarray(analytic, float), np.asarray(numeric, float)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), floor))


def naive_conv(x, w, b):
    """Zero-padded same-size cross-correlation, one output value at a time."""
    bsz, n, h, wd = x.shape
    m, _, k, _ = w.shape
    p = (k - 1) // 2
    out = np.zeros((bsz, m, h, wd))
    for bi in range(bsz):
        for mi in range(m):
            for r in range(h):
                for c in range(wd):
                    acc = b[mi]
                    for ni in range(n):
                        for i in range(k):
                            for j in range(k):
                                rr, cc = r + i - p, c + j - p
                                if 0 <= rr < h and 0 <= cc < wd:
                                    acc += w[mi, ni, i, j] * x[bi, ni, rr, cc]
                    out[bi, mi, r, c] = acc
    return out


@pytest.fixture
def criterion():
    """Record one acceptance criterion outcome; printed in the terminal summary."""

    def record(name: str, ok: bool, detail: str = ""):
        _CRITERIA.append((name, bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


def identity_model():
    """Two 1x1 layers whose infer-mode composition is exactly the identity."""
    from specklelab.model import Model, ModelConfig

    cfg = ModelConfig(num_layers=2, hidden_channels=1, kernel=1)
    model = Model.init(cfg, seed=0)
    first, last = model.layers
    first.weights[...] = 1.0
    last.weights[...] = 1.0
    first.bn_running_mean[...] = 0.0
    first.bn_running_var[...] = 1.0 - first.bn_epsilon  # sqrt(var + eps) == 1 exactly
    model.mode = "infer"
    return model
