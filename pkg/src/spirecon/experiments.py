"""Parameter sweeps over sampling rate, iteration count, learning rate and
generator input.

A sweep is a grid of cells (grid value x method x seed).  Every cell is a
pure function of its parameters, so cells can run in any order or process
and an optional ``cache`` dict lets callers share identical cells between
sweeps.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import reduce
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .classical import DivergenceError, dgi, tv_reconstruct
from .forward import NoiseModel, acquire
from .metrics import quality
from .neural import SolverConfig, SolverDivergence, SolveTrace, gan_solve, gidc_solve
from .patterns import select_patterns
from . import plotting

SWEEP_KINDS = ("sr", "iters", "lr", "init")
METHODS = ("dgi", "tv", "gidc", "gan")
INIT_VALUES = ("noise", "dgi", "tv")
DEFAULT_GRIDS = {"sr": (0.05, 0.10, 0.20, 0.30), "iters": (50, 200, 700, 1000),
                 "lr": (0.0001, 0.001, 0.005, 0.01), "init": INIT_VALUES}
DEFAULT_METHODS = {"sr": ("tv", "gidc", "gan"), "iters": ("gan",), "lr": ("gan",),
                   "init": ("gan",)}
ROW_COLUMNS = ("kind", "value", "method", "seed", "status", "psnr_db", "ssim",
               "l", "l_mse", "l_adv", "d_loss", "error")


@dataclass
class SweepSpec:
    kind: str
    grid: tuple
    truth: np.ndarray
    methods: tuple = ("gan",)
    seeds: tuple = (0,)
    sr: float = 0.30  # sampling rate for every kind except "sr"
    ordering: str = "sequency"
    noise: NoiseModel = field(default_factory=NoiseModel)
    solver: SolverConfig = field(default_factory=SolverConfig)
    tv_iters: int = 500
    tv_lambda: Optional[float] = None

    def __post_init__(self):
        if self.kind not in SWEEP_KINDS:
            raise ValueError(f"unknown sweep kind {self.kind!r}; choose from {SWEEP_KINDS}")
        self.grid = tuple(self.grid)
        self.methods = tuple(self.methods)
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.grid:
            raise ValueError("sweep grid is empty")
        if not self.methods or not self.seeds:
            raise ValueError("sweep needs at least one method and one seed")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {METHODS}")
        if self.kind in ("lr", "init") and set(self.methods) - {"gidc", "gan"}:
            raise ValueError(f"{self.kind} sweeps apply to the network solvers only")
        if self.kind == "init":
            bad = [v for v in self.grid if v not in INIT_VALUES]
            if bad:
                raise ValueError(f"unknown init values {bad}; choose from {INIT_VALUES}")
        self.truth = np.asarray(self.truth, dtype=np.float64)

    def describe(self) -> dict:
        return {"kind": self.kind, "grid": list(self.grid), "methods": list(self.methods),
                "seeds": list(self.seeds), "sr": self.sr, "ordering": self.ordering,
                "noise": asdict(self.noise), "solver": self.solver.to_dict(),
                "tv_iters": self.tv_iters, "tv_lambda": self.tv_lambda,
                "truth_digest": hashlib.sha256(self.truth.tobytes()).hexdigest()[:16],
                "n": int(self.truth.shape[0])}


@dataclass
class CellResult:
    image: Optional[np.ndarray]
    trace: Optional[SolveTrace]
    status: str = "ok"
    error: str = ""
    seconds: float = 0.0  # wall time; never written to sweep tables


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list[dict]
    cells: dict  # (value, method, seed) -> CellResult

    def to_tsv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, delimiter="\t", lineterminator="\n")
        w.writerow(ROW_COLUMNS)
        for r in self.rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in ROW_COLUMNS])
        return buf.getvalue()

    def to_json(self) -> str:
        rows = [{c: (repr(v) if isinstance(v, float) and not math.isfinite(v) else v)
                 for c, v in r.items()} for r in self.rows]
        return json.dumps({"spec": self.spec.describe(), "rows": rows}, indent=1, sort_keys=True) + "\n"

    def select(self, **match) -> list[dict]:
        return [r for r in self.rows if all(r[k] == v for k, v in match.items())]

    def median(self, metric: str, **match) -> float:
        vals = [r[metric] for r in self.select(**match)]
        return float(np.median(vals)) if vals else math.nan


# ---------------------------------------------------------------- cells

def _cell_params(spec: SweepSpec, value, method: str, seed: int) -> dict:
    """Everything a single solve depends on."""
    sr = value if spec.kind == "sr" else spec.sr
    cfg = replace(spec.solver, seed=seed)
    init = "noise"
    if spec.kind == "lr":
        cfg = replace(cfg, lr=float(value))
    elif spec.kind == "iters":
        steps = [int(v) for v in spec.grid]
        every = reduce(math.gcd, steps, cfg.record_every)
        cfg = replace(cfg, iterations=max(steps), record_every=every)
    elif spec.kind == "init":
        init = value
    tv_iters = int(value) if spec.kind == "iters" and method == "tv" else spec.tv_iters
    p = {"method": method, "sr": float(sr), "seed": seed, "ordering": spec.ordering,
         "noise": asdict(spec.noise), "tv_iters": tv_iters, "tv_lambda": spec.tv_lambda,
         "truth": spec.truth, "init": init}
    if method in ("gidc", "gan"):
        p["solver"] = cfg.to_dict()
    return p


def cell_key(params: dict) -> str:
    doc = {k: v for k, v in params.items() if k != "truth"}
    doc["truth"] = hashlib.sha256(params["truth"].tobytes()).hexdigest()
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def run_cell(params: dict) -> CellResult:
    t0 = time.perf_counter()
    res = _run_cell(params)
    res.seconds = time.perf_counter() - t0
    return res


def _run_cell(params: dict) -> CellResult:
    truth = params["truth"]
    n = truth.shape[0]
    ps = select_patterns(n, params["sr"], params["ordering"])
    sig = acquire(truth, ps, NoiseModel(**params["noise"]), seed=params["seed"])
    method = params["method"]
    try:
        if method == "dgi":
            return CellResult(dgi(ps, sig).image, None)
        if method == "tv":
            img = tv_reconstruct(ps, sig, lambda_tv=params["tv_lambda"], iters=params["tv_iters"])
            return CellResult(img, None)
        cfg = SolverConfig(**params["solver"])
        external = None
        if params["init"] == "dgi":
            cfg = replace(cfg, init="dgi_warm_start")
        elif params["init"] == "tv":
            cfg = replace(cfg, init="external_image")
            external = tv_reconstruct(ps, sig, lambda_tv=params["tv_lambda"],
                                      iters=params["tv_iters"])
        solve = gan_solve if method == "gan" else gidc_solve
        img, trace = solve(ps, sig, cfg, ground_truth=truth, external=external)
        return CellResult(img, trace)
    except SolverDivergence as exc:
        return CellResult(None, exc.trace, "numerical_error", str(exc))
    except (DivergenceError, FloatingPointError) as exc:
        return CellResult(None, None, "numerical_error", str(exc))
    except ValueError as exc:
        return CellResult(None, None, "error", str(exc))


def _row(spec, value, method, seed, res: CellResult, at: Optional[int] = None) -> dict:
    row = {"kind": spec.kind, "value": value, "method": method, "seed": seed,
           "status": res.status, "psnr_db": math.nan, "ssim": math.nan, "l": math.nan,
           "l_mse": math.nan, "l_adv": math.nan, "d_loss": math.nan, "error": res.error}
    if res.trace is not None and res.trace.rows:
        last = res.trace.at(at) if at is not None else res.trace.rows[-1]
        row.update({k: float(last[k]) for k in ("l", "l_mse", "l_adv", "d_loss")})
        if at is not None:
            row.update(psnr_db=float(last["psnr"]), ssim=float(last["ssim"]))
    if res.image is not None and at is None:
        q = quality(spec.truth, res.image)
        row.update(psnr_db=q.psnr_db, ssim=q.ssim)
    return row


def run_sweep(spec: SweepSpec, jobs: int = 1, cache: dict | None = None) -> SweepResult:
    """Run every (grid value, method, seed) cell and tabulate one row each.

    Failed cells are recorded with their status and the sweep continues.
    For ``iters`` sweeps of the network solvers a single long run per
    (method, seed) is read off at each grid iteration.
    """
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    cells = [(v, m, s) for v in spec.grid for m in spec.methods for s in spec.seeds]
    params = {c: _cell_params(spec, *c) for c in cells}
    keys = {c: cell_key(p) for c, p in params.items()}
    cache = {} if cache is None else cache
    todo, queued = [], set()
    for c in cells:
        if keys[c] not in cache and keys[c] not in queued:
            todo.append(c)
            queued.add(keys[c])
    if jobs == 1 or len(todo) <= 1:
        done = [run_cell(params[c]) for c in todo]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(todo))) as pool:
            done = list(pool.map(run_cell, [params[c] for c in todo]))
    for c, res in zip(todo, done):
        cache[keys[c]] = res
    results = {c: cache[keys[c]] for c in cells}
    rows = []
    for v, m, s in cells:
        at = int(v) if spec.kind == "iters" and m in ("gidc", "gan") else None
        if at is not None and results[(v, m, s)].trace is not None:
            try:
                rows.append(_row(spec, v, m, s, results[(v, m, s)], at))
                continue
            except KeyError:
                pass
        rows.append(_row(spec, v, m, s, results[(v, m, s)]))
    return SweepResult(spec, rows, results)


# ---------------------------------------------------------------- output

def _slug(v) -> str:
    return str(v).replace(".", "p").replace("-", "m")


def write_sweep(result: SweepResult, out_dir) -> list[Path]:
    """Raw table (TSV + JSON), one trace file per network cell, and SVG plots."""
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    spec = result.spec
    written = [out / "sweep.tsv", out / "sweep.json"]
    written[0].write_text(result.to_tsv())
    written[1].write_text(result.to_json())
    for (v, m, s), res in result.cells.items():
        if res.trace is not None:
            p = out / "traces" / f"{spec.kind}_{_slug(v)}_{m}_s{s}.tsv"
            p.write_text(res.trace.to_tsv())
            written.append(p)
    categorical = spec.kind == "init"
    xs = list(range(len(spec.grid))) if categorical else [float(v) for v in spec.grid]
    series = {}
    for m in spec.methods:
        series[m] = (xs, [result.median("psnr_db", value=v, method=m) for v in spec.grid])
    p = out / f"psnr_vs_{spec.kind}.svg"
    plotting.line_plot(p, series, xlabel=spec.kind, ylabel="PSNR (dB), median over seeds",
                       logx=spec.kind == "lr", xticklabels=[str(v) for v in spec.grid] if categorical else None)
    written.append(p)
    # iteration sweeps share one trace per (method, seed): a single plot
    groups = [None] if spec.kind == "iters" else list(spec.grid)
    for v in groups:
        lines = {f"{m} seed {s}": (res.trace.column("iter"), np.maximum(res.trace.column("l"), 1e-300))
                 for (cv, m, s), res in result.cells.items()
                 if (v is None or cv == v) and res.trace is not None and res.trace.rows}
        if not lines:
            continue
        p = out / ("loss_vs_iteration.svg" if v is None else f"loss_{spec.kind}_{_slug(v)}.svg")
        plotting.line_plot(p, lines, xlabel="iteration", ylabel="generator loss l", logy=True,
                           title="" if v is None else f"{spec.kind} = {v}")
        written.append(p)
    return written
