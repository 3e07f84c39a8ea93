import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spirecon.classical import dgi, dgi_raw, minmax, tv_reconstruct, tv_smooth
from spirecon.forward import measure
from spirecon.patterns import PatternSet, pattern_subset, select_patterns

from oracles import dgi_oracle

RNG = np.random.default_rng(5)


def without_dc(n, m):
    full = pattern_subset(n, m + 1)
    return PatternSet(n, full.patterns[1:], full.ordering, full.selected_indices[1:])


@pytest.mark.parametrize("n,sr", [(4, 1.0), (8, 1.0), (8, 0.4)])
def test_dgi_matches_formula_oracle(n, sr):
    ps = select_patterns(n, sr)
    img = RNG.uniform(size=(n, n))
    y = measure(img, ps).values
    ref = dgi_oracle(ps.patterns.tolist(), y.tolist(), n)
    assert np.max(np.abs(dgi_raw(ps, y) - ref)) < 1e-10


def test_dgi_uniform_object_cancels():
    ps = without_dc(8, 20)
    assert len(set(ps.sums.tolist())) == 1
    raw = dgi_raw(ps, measure(np.full((8, 8), 0.7), ps))
    assert np.max(np.abs(raw)) < 1e-12


def test_dgi_single_pattern_is_zero():
    ps = pattern_subset(4, 1)
    raw = dgi_raw(ps, measure(RNG.uniform(size=(4, 4)), ps))
    assert np.max(np.abs(raw)) < 1e-12


def test_dgi_normalization_and_errors():
    ps = select_patterns(8, 0.5)
    res = dgi(ps, measure(RNG.uniform(size=(8, 8)), ps))
    assert res.image.min() == 0 and res.image.max() == 1
    lo, hi = res.normalization
    np.testing.assert_allclose(res.image * (hi - lo) + lo, res.raw, atol=1e-12)
    with pytest.raises(ValueError):
        dgi(ps, np.ones(3))


@settings(max_examples=20, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 2**31 - 1))
def test_dgi_scale_invariance(c, seed):
    ps = select_patterns(8, 0.5)
    y = measure(np.random.default_rng(seed).uniform(size=(8, 8)), ps).values
    np.testing.assert_allclose(dgi(ps, c * y).image, dgi(ps, y).image, atol=1e-9)


def test_minmax_constant_plane():
    img, (lo, hi) = minmax(np.full((3, 3), 2.0))
    assert np.all(img == 0) and lo == hi == 2.0


def test_tv_constant_is_zero():
    assert tv_smooth(np.full((5, 5), 0.3)) == 0.0
    assert tv_smooth(np.eye(4)) > 0


def test_tv_full_sampling_recovers_truth():
    ps = select_patterns(8, 1.0)
    img = RNG.uniform(0.1, 0.9, size=(8, 8))
    rec = tv_reconstruct(ps, measure(img, ps), lambda_tv=0.0, iters=500)
    assert np.max(np.abs(rec - img)) < 1e-3


def test_tv_zero_signal_gives_zero():
    ps = select_patterns(8, 0.3)
    rec = tv_reconstruct(ps, np.zeros(ps.m), lambda_tv=0.5)
    assert np.all(rec == 0)


def test_tv_objective_monotone():
    ps = select_patterns(16, 0.2)
    img = np.zeros((16, 16))
    img[4:12, 6:10] = 1
    hist = []
    tv_reconstruct(ps, measure(img, ps), iters=200, history=hist)
    assert len(hist) > 10
    assert all(b <= a for a, b in zip(hist[:-1], hist[1:]))


def test_tv_errors():
    ps = select_patterns(8, 0.3)
    with pytest.raises(ValueError):
        tv_reconstruct(ps, np.ones(ps.m), iters=0)
    with pytest.raises(ValueError):
        tv_reconstruct(ps, np.ones(ps.m), lambda_tv=-1)
    with pytest.raises(ValueError):
        tv_reconstruct(ps, np.ones(ps.m + 1))
