from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spirecon.forward import (BucketSignal, NoiseModel, acquire, acquire_cube, apply_noise,
                              load_signal, measure, save_signal_binary, save_signal_text)
from spirecon.patterns import pattern_subset, select_patterns

RNG = np.random.default_rng(21)


def brute_measure(img, rows, n):
    out = []
    for row in rows:
        s = 0.0
        for u in range(n):
            for v in range(n):
                s += float(row[u * n + v]) * float(img[u][v])
        out.append(s)
    return np.array(out)


@pytest.mark.parametrize("n", [4, 8])
def test_measure_matches_double_loop(n):
    ps = select_patterns(n, 1.0)
    img = RNG.uniform(size=(n, n))
    ref = brute_measure(img.tolist(), ps.patterns.tolist(), n)
    assert np.max(np.abs(measure(img, ps).values - ref)) < 1e-10


def test_measure_examples():
    ps = select_patterns(8, 0.5)
    assert np.all(measure(np.zeros((8, 8)), ps).values == 0)
    np.testing.assert_allclose(measure(np.full((8, 8), 0.3), ps).values, 0.3 * ps.sums, rtol=1e-14)
    assert measure(RNG.uniform(size=(8, 8)), ps).m == ps.m
    with pytest.raises(ValueError):
        measure(np.zeros((4, 4)), ps)


def test_materialized_matrix_agrees():
    ps = select_patterns(8, 0.6)
    img = RNG.uniform(size=(8, 8))
    dense = np.array([[float(b) for b in row] for row in ps.patterns])
    assert np.max(np.abs(measure(img, ps).values - dense @ img.ravel())) < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31 - 1))
def test_measure_linearity(a, b, seed):
    rng = np.random.default_rng(seed)
    ps = select_patterns(8, 0.4)
    x, y = rng.uniform(size=(8, 8)), rng.uniform(size=(8, 8))
    lhs = measure(a * x + b * y, ps).values
    rhs = a * measure(x, ps).values + b * measure(y, ps).values
    assert np.max(np.abs(lhs - rhs)) < 1e-10


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_nonnegative_image_gives_nonnegative_signal(seed):
    ps = select_patterns(8, 0.5)
    assert np.all(measure(np.random.default_rng(seed).uniform(size=(8, 8)), ps).values >= 0)


def test_noise_examples():
    img = np.full((64, 64), 0.5)
    assert np.array_equal(apply_noise(img, NoiseModel("image_awgn", 0.0), 3), img)
    a = apply_noise(img, NoiseModel(), 7)
    assert np.array_equal(a, apply_noise(img, NoiseModel(), 7))
    assert 0.04 <= a.std() <= 0.06
    assert a.min() >= 0 and a.max() <= 1
    sig = np.linspace(1, 2, 50)
    b = apply_noise(sig, NoiseModel("bucket_awgn", 0.01), 1)
    assert not np.array_equal(b, sig) and np.max(np.abs(b - sig)) < 0.1
    with pytest.raises(ValueError):
        NoiseModel("poisson")
    with pytest.raises(ValueError):
        NoiseModel(sigma=-1)


def test_acquire_cube_linear_in_channel():
    ps = select_patterns(8, 0.5)
    base = RNG.uniform(size=(8, 8)) / 3
    cube = SimpleNamespace(planes=np.stack([c * base for c in range(3)]),
                           wavelengths=np.array([900.0, 1000.0, 1100.0]))
    sigs = acquire_cube(cube, ps, NoiseModel("none"))
    assert [s.channel_index for s in sigs] == [0, 1, 2]
    assert [s.wavelength for s in sigs] == [900.0, 1000.0, 1100.0]
    for c, s in enumerate(sigs):
        np.testing.assert_allclose(s.values, c * sigs[1].values, atol=1e-12)
    one = SimpleNamespace(planes=base[None], wavelengths=np.array([950.0]))
    assert np.array_equal(acquire_cube(one, ps, NoiseModel("none"))[0].values, measure(base, ps).values)


def test_acquire_cube_channel_seeds():
    ps = select_patterns(8, 0.5)
    base = np.full((8, 8), 0.5)
    cube = SimpleNamespace(planes=np.stack([base] * 4), wavelengths=np.arange(4.0) + 900)
    sigs = acquire_cube(cube, ps, NoiseModel(), seed=10)
    assert len({s.values.tobytes() for s in sigs}) == 4
    np.testing.assert_array_equal(sigs[2].values, acquire(base, ps, NoiseModel(), seed=12).values)


@pytest.mark.parametrize("writer", [save_signal_text, save_signal_binary])
def test_signal_round_trip(tmp_path, writer):
    sig = BucketSignal(RNG.normal(size=37), channel_index=5, wavelength=1234.5)
    path = tmp_path / "s.sig"
    writer(path, sig)
    back = load_signal(path)
    assert back.values.tobytes() == sig.values.tobytes()
    assert back.channel_index == 5 and back.wavelength == 1234.5
    writer(tmp_path / "t.sig", back)
    assert (tmp_path / "t.sig").read_bytes() == path.read_bytes()


def test_signal_file_errors(tmp_path):
    sig = BucketSignal(np.ones(4))
    save_signal_binary(tmp_path / "b.sig", sig)
    raw = (tmp_path / "b.sig").read_bytes()
    (tmp_path / "cut.sig").write_bytes(raw[:-3])
    with pytest.raises(ValueError, match="payload"):
        load_signal(tmp_path / "cut.sig")
    save_signal_text(tmp_path / "t.sig", sig)
    text = (tmp_path / "t.sig").read_text().replace("# m=4", "# m=5")
    (tmp_path / "t.sig").write_text(text)
    with pytest.raises(ValueError, match="m=5"):
        load_signal(tmp_path / "t.sig")
