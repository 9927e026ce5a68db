import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from specklelab.errors import ShapeError
from specklelab.speckle import (
    PatchSpec,
    SpeckleConfig,
    apply_speckle,
    extract_patches,
    gamma_pdf,
    gamma_speckle_field,
    to_grayscale,
)


def field(looks, n=1000, seed=0):
    return gamma_speckle_field(SpeckleConfig(looks, seed), n, n).ravel()


def test_unit_mean_l4():
    assert 0.99 <= field(4).mean() <= 1.01


def test_variance_l1():
    assert 0.95 <= field(1).var() <= 1.05


def test_exponential_median_l1():
    frac = np.mean(field(1) > math.log(2))
    assert 0.495 <= frac <= 0.505


@pytest.mark.parametrize("looks", [2, 7])
def test_matches_gamma_cdf(looks):
    from scipy import stats

    draws = field(looks, 300)
    res = stats.kstest(draws, stats.gamma(looks, scale=1 / looks).cdf)
    assert res.pvalue > 1e-3


def test_deterministic_per_seed():
    a = gamma_speckle_field(SpeckleConfig(3, 42), 17, 23)
    b = gamma_speckle_field(SpeckleConfig(3, 42), 17, 23)
    c = gamma_speckle_field(SpeckleConfig(3, 43), 17, 23)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)


def test_mean_within_four_standard_errors_across_seeds():
    looks, m = 2, 100_000
    bound = 4 * math.sqrt(1 / (looks * m))
    hits = [abs(gamma_speckle_field(SpeckleConfig(looks, s), 1, m).mean() - 1) <= bound
            for s in range(100)]
    assert sum(hits) >= 99


@pytest.mark.parametrize("h, w", [(0, 5), (5, 0)])
def test_zero_size_field_rejected(h, w):
    with pytest.raises(ValueError):
        gamma_speckle_field(SpeckleConfig(1, 0), h, w)


def test_invalid_looks():
    with pytest.raises(ValueError):
        SpeckleConfig(0, 0)


def test_apply_speckle_examples():
    x = np.random.default_rng(0).uniform(0, 1, (4, 5))
    n = gamma_speckle_field(SpeckleConfig(1, 1), 4, 5)
    assert np.all(apply_speckle(np.zeros((4, 5)), n) == 0)
    assert np.array_equal(apply_speckle(x, np.ones((4, 5))), x)
    assert apply_speckle([[2.0]], [[0.5]])[0, 0] == 1.0
    with pytest.raises(ShapeError):
        apply_speckle(x, np.ones((5, 4)))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32))
def test_apply_speckle_commutes_with_permutation(h, w, seed):
    rng = np.random.default_rng(seed)
    x, n = rng.uniform(0, 1, (h, w)), rng.uniform(0, 3, (h, w))
    perm = rng.permutation(h * w)
    y = apply_speckle(x, n).ravel()[perm]
    yp = apply_speckle(x.ravel()[perm].reshape(h, w), n.ravel()[perm].reshape(h, w)).ravel()
    assert np.array_equal(y, yp)


def test_gamma_pdf_closed_forms():
    assert gamma_pdf(0.0, 1) == 1.0
    assert gamma_pdf(1.0, 1) == pytest.approx(math.exp(-1), abs=1e-15)
    assert gamma_pdf(0.0, 3) == 0.0


@pytest.mark.parametrize("looks", [1, 2, 4, 16])
def test_gamma_pdf_integrates_to_one(looks):
    total, _ = integrate.quad(gamma_pdf, 0, 50, args=(looks,), points=[1.0], limit=200)
    assert abs(total - 1) < 1e-6


@pytest.mark.parametrize("looks", [1, 3, 16])
def test_gamma_pdf_unit_mean(looks):
    mean, _ = integrate.quad(lambda n: n * gamma_pdf(n, looks), 0, 60, points=[1.0], limit=200)
    assert mean == pytest.approx(1.0, abs=1e-8)


def test_gamma_pdf_negative_rejected():
    with pytest.raises(ValueError):
        gamma_pdf(-0.1, 2)


def test_patch_counts():
    img = np.random.default_rng(0).uniform(size=(256, 256))
    assert len(extract_patches(img, PatchSpec(65, 64))) == 9
    assert len(extract_patches(img, PatchSpec(65, 64, max_patches=4))) == 4
    small = img[:65, :65]
    for stride in (1, 7, 100):
        (only,) = extract_patches(small, PatchSpec(65, stride))
        assert np.array_equal(only, small)


def test_patch_too_large():
    with pytest.raises(ValueError):
        extract_patches(np.zeros((10, 40)), PatchSpec(11, 1))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 5), st.integers(12, 30), st.integers(12, 30),
       st.one_of(st.none(), st.integers(0, 1000)))
def test_patches_are_verbatim_sub_blocks(k, stride, h, w, shuffle):
    img = np.arange(h * w, dtype=float).reshape(h, w)
    patches = extract_patches(img, PatchSpec(k, stride, shuffle_seed=shuffle))
    rows = range(0, h - k + 1, stride)
    cols = range(0, w - k + 1, stride)
    assert len(patches) == len(rows) * len(cols)
    expected = {img[r : r + k, c : c + k].tobytes() for r in rows for c in cols}
    assert {p.tobytes() for p in patches} == expected
    if shuffle is None:
        assert np.array_equal(patches[0], img[:k, :k])


def test_grayscale_luma():
    rgb = np.zeros((1, 3, 3), dtype=np.uint8)
    rgb[0, 0] = (255, 0, 0)
    rgb[0, 1] = (0, 255, 0)
    rgb[0, 2] = (0, 0, 255)
    assert to_grayscale(rgb, 255)[0] == pytest.approx([0.299, 0.587, 0.114])
