import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spirecon.metrics import mse, psnr, quality, ssim

from oracles import ssim_oracle

RNG = np.random.default_rng(8)


def test_mse_examples():
    a = RNG.uniform(size=(4, 4))
    assert mse(a, a) == 0
    b = np.zeros((2, 2))
    c = b.copy()
    c[0, 0] = 1
    assert mse(b, c) == 0.25
    j, k = RNG.uniform(size=(5, 5)), RNG.uniform(size=(5, 5))
    ref = sum((j[u, v] - k[u, v]) ** 2 for u in range(5) for v in range(5)) / 25
    assert abs(mse(j, k) - ref) < 1e-12


def test_psnr_examples():
    b = np.zeros((2, 2))
    c = b.copy()
    c[0, 0] = 1
    assert psnr(b, c) == pytest.approx(6.0206, abs=1e-3)
    assert psnr(np.zeros((1, 1)), np.ones((1, 1)), max_value=255) == pytest.approx(48.1308, abs=1e-3)
    assert psnr(b, b) == math.inf
    with pytest.raises(ValueError):
        psnr(b, c, max_value=0)


def test_ssim_examples():
    j = RNG.uniform(size=(8, 8))
    assert ssim(j, j) == 1.0
    assert ssim(np.full((4, 4), 0.5), np.full((4, 4), 0.25)) == pytest.approx(0.8001, abs=1e-3)
    z = j - j.mean()
    val = ssim(z, -z)
    assert val < 0
    assert abs(val - ssim_oracle(z, -z)) < 1e-12


def test_shape_mismatch():
    with pytest.raises(ValueError):
        mse(np.zeros((2, 2)), np.zeros((3, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_ssim_symmetric_bounded_and_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    j, k = rng.uniform(size=(6, 6)), rng.uniform(size=(6, 6))
    s = ssim(j, k)
    assert s == pytest.approx(ssim(k, j), abs=1e-15)
    assert -1 <= s <= 1
    assert abs(s - ssim_oracle(j, k)) < 1e-12


def test_quality_normalizes_reconstruction():
    truth = np.zeros((4, 4))
    truth[1:3, 1:3] = 1
    rep = quality(truth, 5 * truth + 2)
    assert rep.psnr_db == math.inf and rep.ssim == pytest.approx(1.0) and rep.mse == 0
    assert set(rep.as_dict()) == {"psnr_db", "ssim", "mse"}
