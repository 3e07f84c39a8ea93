import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spirecon import autodiff as ad
from spirecon.classical import dgi
from spirecon.fixtures import cross
from spirecon.forward import measure
from spirecon.metrics import psnr
from spirecon.networks import Discriminator
from spirecon.neural import (SolverConfig, SolverDivergence, SolveTrace, adversarial_objective,
                             discriminator_loss_from_probs, discriminator_objective, gan_solve,
                             gidc_solve, mse_objective, normalize_signal, safe_log,
                             warm_start_input)
from spirecon.patterns import select_patterns

RNG = np.random.default_rng(17)


def small_problem(sr=0.5):
    ps = select_patterns(8, sr)
    img = cross()
    return ps, img, measure(img, ps)


# -------------------------------------------------------------- objectives

def test_mse_objective_examples():
    a = RNG.normal(size=9)
    assert mse_objective(a, a).item() == 0
    e = np.zeros(9)
    e[0] = 1
    assert mse_objective(a + e, a).item() == pytest.approx(1.0, abs=1e-14)
    b = RNG.normal(size=9)
    ref = sum((x - y) ** 2 for x, y in zip(a, b))
    assert abs(mse_objective(a, b).item() - ref) < 1e-12
    with pytest.raises(ad.ShapeError):
        mse_objective(np.ones(3), np.ones(4))


def test_log_likelihood_values():
    assert -safe_log(np.array(0.5)).item() == pytest.approx(0.6931, abs=1e-4)
    assert -safe_log(np.array(1.0)).item() == 0
    assert -safe_log(np.array(0.0)).item() == pytest.approx(27.63, abs=1e-2)


def test_discriminator_loss_values():
    f = lambda r, e: discriminator_loss_from_probs(np.array(r), np.array(e)).item()
    assert f(0.5, 0.5) == pytest.approx(1.3863, abs=1e-4)
    assert f(1.0, 0.0) == 0
    assert f(0.9, 0.1) == pytest.approx(0.2107, abs=1e-4)


def test_objectives_through_discriminator():
    d = Discriminator(5, seed=0)
    d.views["fc4.w"][:] = 0.0  # output exactly 0.5
    x, y = RNG.normal(size=5), RNG.normal(size=5)
    assert adversarial_objective(d, x).item() == pytest.approx(math.log(2), abs=1e-15)
    assert discriminator_objective(d, x, y).item() == pytest.approx(2 * math.log(2), abs=1e-15)


def test_normalize_examples():
    np.testing.assert_allclose(normalize_signal(np.array([1.0, 3.0]), "mean"), [0.5, 1.5])
    np.testing.assert_allclose(normalize_signal(np.array([3.0, 4.0]), "l2"), [0.6, 0.8])
    x = np.array([2.0, -7.0])
    np.testing.assert_array_equal(normalize_signal(x, "none"), x)
    for mode in ("mean", "l2"):
        with pytest.raises(ValueError):
            normalize_signal(np.zeros(3), mode)


@settings(max_examples=30, deadline=None)
@given(st.integers(-20, 20), st.integers(0, 2**31 - 1), st.sampled_from(["mean", "l2"]))
def test_normalize_is_scale_free_for_binary_scales(k, seed, mode):
    y = np.random.default_rng(seed).uniform(0.1, 2.0, size=12)
    assert normalize_signal(y * 2.0 ** k, mode).tobytes() == normalize_signal(y, mode).tobytes()


# -------------------------------------------------------------- inputs

def test_warm_start_modes():
    ps, img, y = small_problem()
    a = warm_start_input("noise", ps, seed=3)
    assert np.array_equal(a, warm_start_input("noise", ps, seed=3))
    assert a.min() >= 0 and a.max() < 1
    assert np.array_equal(warm_start_input("dgi_warm_start", ps, y), dgi(ps, y).image)
    ext = RNG.uniform(size=(8, 8))
    assert np.array_equal(warm_start_input("external_image", ps, external=ext), ext)
    with pytest.raises(ValueError):
        warm_start_input("external_image", ps, external=ext + 1)
    with pytest.raises(ValueError):
        warm_start_input("external_image", ps, external=np.zeros((4, 4)))
    with pytest.raises(ValueError):
        warm_start_input("bogus", ps)


def test_config_validation():
    for bad in (dict(lr=0), dict(iterations=0), dict(init="x"), dict(signal_normalization="x"),
                dict(record_every=0), dict(disc_steps_per_gen_step=-1)):
        with pytest.raises(ValueError):
            SolverConfig(**bad)
    assert SolverConfig().to_dict()["lr"] == 0.005


# -------------------------------------------------------------- solvers

def test_gan_with_zero_weight_equals_gidc():
    ps, img, y = small_problem()
    cfg = SolverConfig(iterations=15, seed=4, adversarial_weight=0.0, disc_steps_per_gen_step=0,
                       record_every=1)
    a, ta = gan_solve(ps, y, cfg, ground_truth=img)
    b, tb = gidc_solve(ps, y, cfg, ground_truth=img)
    assert a.tobytes() == b.tobytes()
    assert ta.to_tsv() == tb.to_tsv()


@pytest.mark.parametrize("solver", [gan_solve, gidc_solve])
def test_seed_determinism(solver):
    ps, img, y = small_problem()
    cfg = SolverConfig(iterations=8, seed=1, record_every=3)
    a, ta = solver(ps, y, cfg)
    b, tb = solver(ps, y, cfg)
    assert a.tobytes() == b.tobytes() and ta.to_tsv() == tb.to_tsv()
    c, _ = solver(ps, y, SolverConfig(iterations=8, seed=2))
    assert c.tobytes() != a.tobytes()


@pytest.mark.parametrize("solver", [gan_solve, gidc_solve])
def test_scale_equivariance(solver):
    ps, img, y = small_problem()
    cfg = SolverConfig(iterations=6, seed=0, record_every=1)
    a, ta = solver(ps, y, cfg)
    b, tb = solver(ps, 4.0 * y.values, cfg)
    assert a.tobytes() == b.tobytes() and ta.to_tsv() == tb.to_tsv()
    c, _ = solver(ps, 3.0 * y.values, cfg)
    np.testing.assert_allclose(c, a, atol=1e-9)


def test_trace_layout():
    ps, img, y = small_problem()
    out, tr = gan_solve(ps, y, SolverConfig(iterations=7, seed=0, record_every=3), ground_truth=img)
    assert tr.column("iter").tolist() == [0, 3, 6, 7]
    r = tr.at(7)
    assert r["l"] == pytest.approx(r["l_mse"] + r["l_adv"], rel=1e-12)
    assert r["psnr"] > 0 and np.isfinite(r["d_loss"])
    back = SolveTrace.from_tsv(tr.to_tsv())
    assert back.to_tsv() == tr.to_tsv()
    with pytest.raises(KeyError):
        tr.at(5)
    _, tg = gidc_solve(ps, y, SolverConfig(iterations=2, seed=0))
    assert math.isnan(tg.at(2)["l_adv"]) and math.isnan(tg.at(2)["psnr"])


def test_trace_iterations_must_increase():
    tr = SolveTrace()
    tr.append(iter=2, l=0.1)
    with pytest.raises(ValueError):
        tr.append(iter=2, l=0.1)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_carries_trace():
    ps, img, y = small_problem()
    bad = y.values.copy()
    bad[3] = np.inf
    with pytest.raises(SolverDivergence) as info:
        gidc_solve(ps, bad, SolverConfig(iterations=3))
    assert isinstance(info.value.trace, SolveTrace)
    with pytest.raises(ValueError):
        gan_solve(ps, y.values[:-1])


def test_gan_beats_dgi_on_noiseless_cross():
    ps = select_patterns(8, 1.0)
    img = cross()
    y = measure(img, ps)
    out, _ = gan_solve(ps, y, SolverConfig(iterations=400, seed=0))
    assert psnr(img, out) > psnr(img, dgi(ps, y).image)


def test_gidc_fits_full_rank_data():
    ps = select_patterns(8, 1.0)
    img = cross()
    y = measure(img, ps)
    out, _ = gidc_solve(ps, y, SolverConfig(iterations=400, seed=0))
    est = normalize_signal(ps.matrix @ out.ravel())
    meas = normalize_signal(y.values)
    assert np.sum((est - meas) ** 2) / np.sum(meas ** 2) < 1e-2
