import math

import numpy as np
import pytest

from spirecon.experiments import SweepSpec, cell_key, run_sweep, write_sweep, _cell_params
from spirecon.fixtures import cross
from spirecon.forward import NoiseModel
from spirecon.neural import SolverConfig

CFG = SolverConfig(iterations=6, record_every=2)


def test_spec_validation():
    with pytest.raises(ValueError):
        SweepSpec("sr", (), cross())
    with pytest.raises(ValueError):
        SweepSpec("bogus", (1,), cross())
    with pytest.raises(ValueError):
        SweepSpec("lr", (0.1,), cross(), methods=("tv",))
    with pytest.raises(ValueError):
        SweepSpec("init", ("warm",), cross())


def test_iters_sweep_reads_one_run():
    spec = SweepSpec("iters", (2, 4, 6), cross(), methods=("gidc",), seeds=(0,), solver=CFG, sr=0.5)
    res = run_sweep(spec)
    assert [r["value"] for r in res.rows] == [2, 4, 6]
    tr = res.cells[(6, "gidc", 0)].trace
    assert res.cells[(2, "gidc", 0)] is res.cells[(6, "gidc", 0)]
    assert res.rows[1]["psnr_db"] == tr.at(4)["psnr"]


def test_cache_shares_identical_cells():
    cache = {}
    a = SweepSpec("sr", (0.5,), cross(), methods=("gidc",), seeds=(0, 1), solver=CFG)
    b = SweepSpec("lr", (0.005,), cross(), methods=("gidc",), seeds=(1,), solver=CFG, sr=0.5)
    ra = run_sweep(a, cache=cache)
    assert len(cache) == 2
    rb = run_sweep(b, cache=cache)
    assert len(cache) == 2
    assert rb.cells[(0.005, "gidc", 1)] is ra.cells[(0.5, "gidc", 1)]
    assert cell_key(_cell_params(a, 0.5, "gidc", 0)) != cell_key(_cell_params(a, 0.5, "gidc", 1))


def test_failed_cells_recorded():
    # a black scene gives an all-zero signal, which mean normalization rejects
    spec = SweepSpec("sr", (0.5,), np.zeros((8, 8)), methods=("gidc", "dgi"), seeds=(0,),
                     solver=CFG, noise=NoiseModel("none"))
    res = run_sweep(spec)
    assert [r["status"] for r in res.rows] == ["error", "ok"]
    assert math.isnan(res.rows[0]["psnr_db"]) and "zero" in res.rows[0]["error"]


def test_parallel_matches_serial(tmp_path):
    spec = SweepSpec("init", ("noise", "dgi", "tv"), cross(), methods=("gan",), seeds=(0,),
                     solver=CFG, sr=0.5, tv_iters=20)
    a, b = run_sweep(spec), run_sweep(spec, jobs=2)
    assert a.to_json() == b.to_json()
    files = write_sweep(a, tmp_path)
    assert (tmp_path / "psnr_vs_init.svg") in files
    assert len(list((tmp_path / "traces").glob("*.tsv"))) == 3
