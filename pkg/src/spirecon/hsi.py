"""Hyperspectral cubes and the per-channel reconstruction pipeline.

All channels share one pattern sequence.  Channel ``c`` draws its noise and
solver randomness from ``seed + c``, so results do not depend on the order
(or process) in which channels are solved.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .classical import DivergenceError, dgi, tv_reconstruct
from .forward import BucketSignal, NoiseModel, acquire
from .metrics import quality
from .networks import Discriminator
from .neural import SolverConfig, SolverDivergence, SolveTrace, gan_solve, gidc_solve
from .patterns import PatternSet

SOLVERS = ("dgi", "tv", "gidc", "gan")


@dataclass(frozen=True, eq=False)
class SpectralCube:
    """``C`` co-registered ``n x n`` planes in [0, 1] with ascending wavelengths (nm)."""

    planes: np.ndarray
    wavelengths: np.ndarray

    def __post_init__(self):
        planes = np.asarray(self.planes, dtype=np.float64)
        wl = np.asarray(self.wavelengths, dtype=np.float64).ravel()
        if planes.ndim != 3 or planes.shape[1] != planes.shape[2] or planes.shape[0] < 1:
            raise ValueError(f"cube planes must be [C, n, n] with C >= 1, got {planes.shape}")
        if wl.size != planes.shape[0]:
            raise ValueError(f"{wl.size} wavelengths for {planes.shape[0]} channels")
        if wl.size > 1 and not np.all(np.diff(wl) > 0):
            raise ValueError("wavelengths must be strictly increasing")
        if not np.all(np.isfinite(planes)) or planes.min() < 0 or planes.max() > 1:
            raise ValueError("cube values must lie in [0, 1]")
        object.__setattr__(self, "planes", planes)
        object.__setattr__(self, "wavelengths", wl)

    @property
    def n(self) -> int:
        return self.planes.shape[1]

    @property
    def channels(self) -> int:
        return self.planes.shape[0]

    def __eq__(self, other) -> bool:
        return (isinstance(other, SpectralCube)
                and self.planes.tobytes() == other.planes.tobytes()
                and self.wavelengths.tobytes() == other.wavelengths.tobytes()
                and self.planes.shape == other.planes.shape)


def gaussian_profile(center: float, fwhm: float, peak: float = 1.0) -> Callable[[float], float]:
    """Transmission that peaks at ``center`` nm with the given full width at half maximum."""
    sigma = fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    return lambda lam: peak * math.exp(-0.5 * ((lam - center) / sigma) ** 2)


def synth_cube(base_image: np.ndarray, wavelengths: Sequence[float],
               profile: Callable[[float], float]) -> SpectralCube:
    """Channel ``c`` is ``clip(profile(wavelength_c) * base_image, 0, 1)``."""
    base = np.asarray(base_image, dtype=np.float64)
    scales = np.array([float(profile(float(lam))) for lam in wavelengths])
    if not np.all(np.isfinite(scales)) or scales.min() < 0 or scales.max() > 1:
        bad = [float(w) for w, s in zip(wavelengths, scales) if not 0 <= s <= 1]
        raise ValueError(f"transmission profile leaves [0, 1] at wavelengths {bad}")
    planes = np.clip(scales[:, None, None] * base[None], 0.0, 1.0)
    return SpectralCube(planes, np.asarray(wavelengths, dtype=np.float64))


def pixel_trace(cube, pixel: tuple[int, int], normalize: str = "channel") -> np.ndarray:
    """Intensity at ``pixel`` in every channel.

    With ``normalize="channel"`` each plane is first min-max scaled to
    [0, 1] (a constant plane maps to zeros); ``"none"`` returns raw values.
    """
    planes = np.asarray(getattr(cube, "planes", cube), dtype=np.float64)
    u, v = pixel
    n = planes.shape[1]
    if not (0 <= u < n and 0 <= v < planes.shape[2]):
        raise IndexError(f"pixel {pixel} outside {n}x{planes.shape[2]} planes")
    vals = planes[:, u, v].copy()
    if normalize == "none":
        return vals
    if normalize != "channel":
        raise ValueError(f"unknown normalization {normalize!r}")
    lo = planes.min(axis=(1, 2))
    hi = planes.max(axis=(1, 2))
    span = hi - lo
    return np.where(span > 0, (vals - lo) / np.where(span > 0, span, 1.0), 0.0)


# ---------------------------------------------------------------- pipeline

REPORT_COLUMNS = ("channel", "wavelength", "solver", "status", "psnr_db", "ssim", "mse", "error")


@dataclass
class PipelineReport:
    """One row per (channel, solver); wall times are kept apart from the rows
    because they are the only non-reproducible quantity."""

    rows: list[dict]
    config_digest: str
    wall_times: dict[int, float] = field(default_factory=dict)

    @property
    def failures(self) -> list[dict]:
        return [r for r in self.rows if r["status"] != "ok"]

    def select(self, solver: str) -> list[dict]:
        return [r for r in self.rows if r["solver"] == solver]

    def to_tsv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, delimiter="\t", lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in REPORT_COLUMNS])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {"config_digest": self.config_digest,
               "rows": [{c: _json_float(r[c]) for c in REPORT_COLUMNS} for r in self.rows]}
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "PipelineReport":
        doc = json.loads(text)
        rows = [{c: _unjson_float(r[c]) if c in ("wavelength", "psnr_db", "ssim", "mse") else r[c]
                 for c in REPORT_COLUMNS} for r in doc["rows"]]
        return cls(rows, doc["config_digest"])

    def save(self, out_dir, stem: str = "report") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.tsv").write_text(self.to_tsv())
        (out / f"{stem}.json").write_text(self.to_json())
        times = {str(c): t for c, t in sorted(self.wall_times.items())}
        (out / f"{stem}_timings.json").write_text(json.dumps(times, indent=1) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def _json_float(v):
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)  # 'inf' / 'nan' keep the document strict JSON
    return v


def _unjson_float(v):
    return float(v) if isinstance(v, str) else v


@dataclass
class PipelineResult:
    reconstructions: dict[str, np.ndarray]  # solver -> [C, n, n]; NaN planes for failures
    report: PipelineReport
    traces: dict[tuple[int, str], SolveTrace]
    wavelengths: np.ndarray

    def cube(self, solver: str) -> SpectralCube:
        planes = self.reconstructions[solver]
        if np.isnan(planes).any():
            raise ValueError(f"{solver}: some channels failed; no complete cube")
        return SpectralCube(planes, self.wavelengths)


def config_digest(patterns: PatternSet, noise: NoiseModel, solvers, config: SolverConfig,
                  seed: int, tv_iters: int, tv_lambda) -> str:
    doc = {"patterns": [patterns.n, patterns.m, patterns.ordering, patterns.indices_digest()],
           "noise": [noise.kind, noise.sigma], "solvers": list(solvers),
           "solver_config": config.to_dict(), "seed": seed, "tv": [tv_iters, tv_lambda]}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def _solve_channel(c: int, plane: np.ndarray, wavelength: float, patterns: PatternSet,
                   noise: NoiseModel, solvers, config: SolverConfig, seed: int, tv_iters: int,
                   tv_lambda, discriminator: Optional[Discriminator] = None):
    t0 = time.perf_counter()
    sig = acquire(plane, patterns, noise, seed + c, c, wavelength)
    rows, planes, traces = [], {}, {}
    for solver in solvers:
        row = {"channel": c, "wavelength": float(wavelength), "solver": solver, "status": "ok",
               "psnr_db": math.nan, "ssim": math.nan, "mse": math.nan, "error": ""}
        try:
            img, tr = _run_solver(solver, patterns, sig, plane, config, seed + c, tv_iters,
                                  tv_lambda, discriminator)
            if tr is not None:
                traces[(c, solver)] = tr
            q = quality(plane, img)
            row.update(psnr_db=q.psnr_db, ssim=q.ssim, mse=q.mse)
            planes[solver] = img
        except (SolverDivergence, DivergenceError, FloatingPointError) as exc:
            row.update(status="numerical_error", error=str(exc))
        except (ValueError, ArithmeticError) as exc:
            row.update(status="error", error=str(exc))
        rows.append(row)
    return c, rows, planes, traces, time.perf_counter() - t0


def _run_solver(solver, patterns, sig: BucketSignal, truth, config, seed, tv_iters, tv_lambda,
                discriminator):
    if solver == "dgi":
        return dgi(patterns, sig).image, None
    if solver == "tv":
        return tv_reconstruct(patterns, sig, lambda_tv=tv_lambda, iters=tv_iters), None
    cfg = replace(config, seed=seed)
    if solver == "gidc":
        return gidc_solve(patterns, sig, cfg, ground_truth=truth)
    if solver == "gan":
        return gan_solve(patterns, sig, cfg, ground_truth=truth, discriminator=discriminator)
    raise ValueError(f"unknown solver {solver!r}")


def _solve_channel_star(args):
    return _solve_channel(*args)


def run_pipeline(cube: SpectralCube, patterns: PatternSet, noise: NoiseModel,
                 solvers: Iterable[str] = ("dgi", "gan"), config: SolverConfig | None = None,
                 seed: int = 0, jobs: int = 1, tv_iters: int = 500, tv_lambda=None,
                 channel_order: Sequence[int] | None = None,
                 persist_discriminator: bool = False) -> PipelineResult:
    """Acquire and reconstruct every channel with every requested solver.

    A failing (channel, solver) pair is recorded in the report and the
    remaining work continues.  ``jobs > 1`` solves channels in a process
    pool of that size; the report is always in channel order.  With
    ``persist_discriminator`` one discriminator is carried from channel to
    channel, which forces sequential execution in channel order.
    """
    solvers = tuple(solvers)
    if not solvers:
        raise ValueError("solver set must be non-empty")
    unknown = [s for s in solvers if s not in SOLVERS]
    if unknown:
        raise ValueError(f"unknown solvers {unknown}; choose from {SOLVERS}")
    if cube.n != patterns.n:
        raise ValueError(f"cube side {cube.n} != pattern side {patterns.n}")
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    config = config or SolverConfig()
    order = list(range(cube.channels)) if channel_order is None else list(channel_order)
    if sorted(order) != list(range(cube.channels)):
        raise ValueError("channel_order must be a permutation of the channel indices")
    if persist_discriminator and "gan" in solvers:
        if jobs > 1 or order != sorted(order):
            raise ValueError("a persistent discriminator needs sequential channel order")
        shared = Discriminator(patterns.m, np.random.default_rng(seed))
    else:
        shared = None
    tasks = [(c, cube.planes[c], float(cube.wavelengths[c]), patterns, noise, solvers, config,
              seed, tv_iters, tv_lambda, shared) for c in order]
    if jobs == 1 or len(tasks) == 1:
        results = [_solve_channel_star(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            results = list(pool.map(_solve_channel_star, tasks))
    results.sort(key=lambda r: r[0])

    n = cube.n
    recon = {s: np.full((cube.channels, n, n), np.nan) for s in solvers}
    rows, traces, walls = [], {}, {}
    for c, crow, planes, ctraces, wall in results:
        rows += crow
        for s, img in planes.items():
            recon[s][c] = img
        traces.update(ctraces)
        walls[c] = wall
    digest = config_digest(patterns, noise, solvers, config, seed, tv_iters, tv_lambda)
    return PipelineResult(recon, PipelineReport(rows, digest, walls), traces, cube.wavelengths.copy())


# ---------------------------------------------------------------- cube files

_CUBE_MAGIC = "SPIRECON-CUBE"
_CUBE_VERSION = 1


class CubeFormatError(ValueError):
    """Base class for unreadable cube files."""


class CubeHeaderError(CubeFormatError):
    pass


class CubeLengthError(CubeFormatError):
    """Payload size disagrees with the header."""

    def __init__(self, msg: str, expected: int, actual: int):
        super().__init__(msg)
        self.expected = expected
        self.actual = actual


class CubeTruncatedError(CubeLengthError):
    pass


class CubeChecksumError(CubeFormatError):
    pass


def _wl_digest(wl: np.ndarray) -> str:
    return hashlib.sha256(wl.astype("<f8").tobytes()).hexdigest()[:16]


def _checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=8).digest()


def save_cube(path, cube: SpectralCube) -> None:
    """Header line, channel-major little-endian float64 planes, 8-byte checksum."""
    header = {"magic": _CUBE_MAGIC, "version": _CUBE_VERSION, "n": cube.n,
              "channels": cube.channels, "wavelengths": [float(w) for w in cube.wavelengths],
              "wavelength_digest": _wl_digest(cube.wavelengths)}
    payload = cube.planes.astype("<f8").tobytes()
    with open(path, "wb") as f:
        f.write((json.dumps(header, sort_keys=True) + "\n").encode())
        f.write(payload)
        f.write(_checksum(payload))


def load_cube(path) -> SpectralCube:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise CubeHeaderError(f"{path}: no header line")
    try:
        header = json.loads(data[:nl])
        if header["magic"] != _CUBE_MAGIC:
            raise CubeHeaderError(f"{path}: bad magic {header['magic']!r}")
        if header["version"] != _CUBE_VERSION:
            raise CubeHeaderError(f"{path}: unsupported version {header['version']}")
        n, c = int(header["n"]), int(header["channels"])
        wl = np.array(header["wavelengths"], dtype=np.float64)
        digest = header["wavelength_digest"]
    except CubeHeaderError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise CubeHeaderError(f"{path}: malformed header ({exc})") from exc
    if wl.size != c or _wl_digest(wl) != digest:
        raise CubeHeaderError(f"{path}: wavelength list does not match its digest/count")
    expected = 8 * c * n * n + 8
    body = data[nl + 1 :]
    if len(body) != expected:
        kind = CubeTruncatedError if len(body) < expected else CubeLengthError
        raise kind(f"{path}: expected {expected} bytes after the header, found {len(body)}",
                   expected, len(body))
    payload, check = body[:-8], body[-8:]
    if _checksum(payload) != check:
        raise CubeChecksumError(f"{path}: checksum mismatch")
    planes = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(c, n, n)
    return SpectralCube(planes, wl)
