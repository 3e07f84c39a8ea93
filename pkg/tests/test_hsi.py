import json
import math

import numpy as np
import pytest

from spirecon import hsi
from spirecon.classical import dgi
from spirecon.fixtures import two_level
from spirecon.forward import NoiseModel, acquire
from spirecon.hsi import (CubeChecksumError, CubeHeaderError, CubeLengthError, CubeTruncatedError,
                          PipelineReport, SpectralCube, gaussian_profile, load_cube, pixel_trace,
                          run_pipeline, save_cube, synth_cube)
from spirecon.metrics import quality
from spirecon.neural import SolverConfig
from spirecon.patterns import select_patterns

WL = np.linspace(880, 1600, 8)


def test_cube_validation():
    with pytest.raises(ValueError):
        SpectralCube(np.zeros((2, 4, 4)), [900, 900])
    with pytest.raises(ValueError):
        SpectralCube(np.zeros((2, 4, 4)), [900])
    with pytest.raises(ValueError):
        SpectralCube(np.ones((1, 4, 4)) * 2, [900])
    with pytest.raises(ValueError):
        SpectralCube(np.zeros((1, 4, 3)), [900])


def test_synth_examples():
    base = two_level(16)
    cube = synth_cube(base, WL, lambda lam: 1.0)
    assert all(np.array_equal(p, base) for p in cube.planes)
    cube = synth_cube(base, WL, lambda lam: 0.0 if lam == WL[3] else 0.5)
    assert np.all(cube.planes[3] == 0) and cube.planes[0].max() == 0.5
    with pytest.raises(ValueError, match="profile"):
        synth_cube(base, WL, lambda lam: 1.5)


def test_gaussian_profile_ordering():
    center = 1200.0
    prof = gaussian_profile(center, 300.0)
    cube = synth_cube(two_level(16), WL, prof)
    level = cube.planes[:, 8, 8]
    # direct evaluation of the profile at each wavelength
    np.testing.assert_allclose(level, [math.exp(-4 * math.log(2) * ((w - center) / 300) ** 2) for w in WL],
                               rtol=1e-14)
    by_distance = np.argsort(np.abs(WL - center), kind="stable")
    assert np.all(np.diff(level[by_distance]) <= 0)
    assert prof(center + 150) == pytest.approx(0.5)


def test_pixel_trace_examples():
    base = two_level(16)
    cube = synth_cube(base, WL, lambda lam: 1.0)
    np.testing.assert_array_equal(pixel_trace(cube, (8, 8)), np.ones(8))
    np.testing.assert_array_equal(pixel_trace(cube, (0, 0)), np.zeros(8))
    with pytest.raises(IndexError):
        pixel_trace(cube, (16, 0))


def test_cube_round_trip(tmp_path):
    cube = synth_cube(two_level(8), WL[:3], gaussian_profile(1000, 400))
    path = tmp_path / "c.cube"
    save_cube(path, cube)
    back = load_cube(path)
    assert back == cube
    save_cube(tmp_path / "d.cube", back)
    assert (tmp_path / "d.cube").read_bytes() == path.read_bytes()


def test_cube_errors(tmp_path):
    cube = synth_cube(two_level(8), WL[:3], lambda lam: 0.7)
    path = tmp_path / "c.cube"
    save_cube(path, cube)
    raw = path.read_bytes()
    cases = {
        "trunc": (raw[:-20], CubeTruncatedError),
        "long": (raw + b"\0" * 8, CubeLengthError),
        "header": (b"{not json\n" + raw.split(b"\n", 1)[1], CubeHeaderError),
        "noline": (b"abc", CubeHeaderError),
    }
    flipped = bytearray(raw)
    flipped[-30] ^= 0xFF
    cases["flip"] = (bytes(flipped), CubeChecksumError)
    head, body = raw.split(b"\n", 1)
    doc = json.loads(head)
    doc["channels"] = 4
    doc["wavelengths"] = doc["wavelengths"] + [2000.0]
    from spirecon.hsi import _wl_digest
    doc["wavelength_digest"] = _wl_digest(np.array(doc["wavelengths"]))
    cases["count"] = (json.dumps(doc).encode() + b"\n" + body, CubeTruncatedError)
    for name, (data, err) in cases.items():
        p = tmp_path / f"{name}.cube"
        p.write_bytes(data)
        with pytest.raises(err):
            load_cube(p)
    with pytest.raises(CubeLengthError) as info:
        load_cube(tmp_path / "count.cube")
    assert info.value.expected > info.value.actual


def small_setup(channels=3, n=16):
    cube = synth_cube(two_level(n), WL[:channels], gaussian_profile(1000, 600))
    return cube, select_patterns(n, 0.5)


def test_single_channel_dgi_reduces():
    cube, ps = small_setup(1)
    res = run_pipeline(cube, ps, NoiseModel(), ["dgi"], seed=4)
    sig = acquire(cube.planes[0], ps, NoiseModel(), seed=4)
    ref = dgi(ps, sig).image
    assert np.array_equal(res.reconstructions["dgi"][0], ref)
    row = res.report.rows[0]
    assert row["psnr_db"] == quality(cube.planes[0], ref).psnr_db


def test_report_cardinality_order_and_round_trip(tmp_path):
    cube, ps = small_setup(3)
    cfg = SolverConfig(iterations=3, record_every=1)
    res = run_pipeline(cube, ps, NoiseModel(), ["dgi", "tv", "gidc", "gan"], cfg, tv_iters=20)
    rows = res.report.rows
    assert len(rows) == 12
    assert [(r["channel"], r["solver"]) for r in rows[:4]] == [(0, "dgi"), (0, "tv"), (0, "gidc"), (0, "gan")]
    assert not res.report.failures
    assert set(res.traces) == {(c, s) for c in range(3) for s in ("gidc", "gan")}
    res.report.save(tmp_path)
    back = PipelineReport.from_json((tmp_path / "report.json").read_text())
    assert back.to_json() == res.report.to_json()
    assert back.to_tsv() == (tmp_path / "report.tsv").read_text()
    assert set(json.loads((tmp_path / "report_timings.json").read_text())) == {"0", "1", "2"}
    assert res.cube("gan").channels == 3


def test_channel_independence_and_parallelism():
    cube, ps = small_setup(3)
    cfg = SolverConfig(iterations=3)
    a = run_pipeline(cube, ps, NoiseModel(), ["tv", "gan"], cfg, seed=2, tv_iters=10)
    b = run_pipeline(cube, ps, NoiseModel(), ["tv", "gan"], cfg, seed=2, tv_iters=10,
                     channel_order=[2, 0, 1])
    c = run_pipeline(cube, ps, NoiseModel(), ["tv", "gan"], cfg, seed=2, tv_iters=10, jobs=2)
    for other in (b, c):
        assert other.report.to_json() == a.report.to_json()
        for s in ("tv", "gan"):
            assert other.reconstructions[s].tobytes() == a.reconstructions[s].tobytes()


def test_failures_recorded_and_pipeline_continues():
    cube, ps = small_setup(2)
    planes = cube.planes.copy()
    planes[0] = 0.0  # zero signal: mean normalization impossible
    bad = SpectralCube(planes, cube.wavelengths)
    res = run_pipeline(bad, ps, NoiseModel("none"), ["gidc", "dgi"], SolverConfig(iterations=2))
    status = [(r["channel"], r["solver"], r["status"]) for r in res.report.rows]
    assert status[0] == (0, "gidc", "error")
    assert status[2:] == [(1, "gidc", "ok"), (1, "dgi", "ok")]
    assert np.isnan(res.reconstructions["gidc"][0]).all()
    with pytest.raises(ValueError):
        res.cube("gidc")


def test_pipeline_argument_errors():
    cube, ps = small_setup(2)
    with pytest.raises(ValueError):
        run_pipeline(cube, ps, NoiseModel(), [])
    with pytest.raises(ValueError):
        run_pipeline(cube, ps, NoiseModel(), ["magic"])
    with pytest.raises(ValueError):
        run_pipeline(cube, select_patterns(8, 0.5), NoiseModel(), ["dgi"])
    with pytest.raises(ValueError):
        run_pipeline(cube, ps, NoiseModel(), ["gan"], jobs=2, persist_discriminator=True)


def test_persistent_discriminator_changes_later_channels():
    cube, ps = small_setup(2)
    cfg = SolverConfig(iterations=3)
    fresh = run_pipeline(cube, ps, NoiseModel(), ["gan"], cfg)
    kept = run_pipeline(cube, ps, NoiseModel(), ["gan"], cfg, persist_discriminator=True)
    assert kept.reconstructions["gan"][1].tobytes() != fresh.reconstructions["gan"][1].tobytes()


def test_two_level_pixel_traces_separate():
    n = 16
    cube = synth_cube(two_level(n), WL[:4], lambda lam: 1.0)
    res = run_pipeline(cube, select_patterns(n, 0.5), NoiseModel(), ["tv"], tv_iters=200)
    obj = pixel_trace(res.reconstructions["tv"], (n // 2, n // 2))
    bg = pixel_trace(res.reconstructions["tv"], (1, 1))
    assert obj.min() > 0.8 and bg.max() < 0.2
