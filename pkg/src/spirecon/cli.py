"""Command-line front end.

Every command writes ``config.json`` next to its outputs; passing that file
back with ``--config`` repeats the run with identical arguments (``--out``
and ``--jobs`` may be overridden; neither changes any result).

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import experiments, fixtures, hsi
from .classical import DivergenceError, dgi, tv_reconstruct
from .forward import (NoiseModel, acquire, acquire_cube, load_signal, save_signal_binary,
                      save_signal_text)
from .metrics import quality
from .neural import (INITS, NORMALIZATIONS, SolverConfig, SolverDivergence, gan_solve,
                     gidc_solve)
from .patterns import ORDERINGS, load_patterns, save_patterns, select_patterns
from .plotting import image_row

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- arg types

def _sr(text: str) -> float:
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"sampling rate must lie in (0, 1], got {text}")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _csv(kind):
    def parse(text: str):
        items = [t.strip() for t in text.split(",") if t.strip()]
        if not items:
            raise argparse.ArgumentTypeError("list is empty")
        return [kind(t) for t in items]
    return parse


def _path(text: str) -> str:
    return str(Path(text).resolve())


# ---------------------------------------------------------------- parser

def _solver_flags(p):
    g = p.add_argument_group("network solver")
    g.add_argument("--lr", type=_positive_float, default=0.005)
    g.add_argument("--iterations", type=_positive_int, default=1000)
    g.add_argument("--init", choices=("noise", "dgi", "tv"), default="noise",
                   help="generator input: seeded noise, DGI image or TV image")
    g.add_argument("--adversarial-weight", type=float, default=1.0)
    g.add_argument("--disc-steps", type=int, default=1)
    g.add_argument("--normalization", choices=NORMALIZATIONS, default="mean")
    g.add_argument("--record-every", type=_positive_int, default=10)
    g.add_argument("--tv-iters", type=_positive_int, default=500)
    g.add_argument("--tv-lambda", type=float, default=None)


def _noise_flags(p):
    p.add_argument("--noise", choices=("none", "image_awgn", "bucket_awgn"), default="image_awgn")
    p.add_argument("--sigma", type=float, default=0.05)


def _image_source(p, required=True, prefix=""):
    dest = prefix.replace("-", "_")
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument(f"--{prefix}image", dest=f"{dest}image", type=_path,
                   help="2-D .npy plane in [0, 1]")
    g.add_argument(f"--{prefix}fixture", dest=f"{dest}fixture", choices=sorted(fixtures.FIXTURES))
    return g


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spirecon", description="Single-pixel imaging simulation and reconstruction.")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--jobs", type=_positive_int, default=1)
    parser.add_argument("--out", type=_path, default=str(Path("out").resolve()))
    parser.add_argument("--config", type=_path, default=None,
                        help="config.json from an earlier run to repeat")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("patterns", help="write a Hadamard pattern file")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--sr", type=_sr, default=0.30)
    p.add_argument("--ordering", choices=ORDERINGS, default="sequency")

    p = sub.add_parser("simulate", help="bucket signals from an image or cube")
    p.add_argument("--patterns", type=_path, required=True)
    g = _image_source(p)
    g.add_argument("--cube", type=_path)
    _noise_flags(p)
    p.add_argument("--format", choices=("text", "binary"), default="text")

    p = sub.add_parser("reconstruct", help="reconstruct from bucket signals")
    p.add_argument("--method", choices=experiments.METHODS, required=True)
    p.add_argument("--patterns", type=_path, required=True)
    p.add_argument("--signals", type=_path, nargs="+", required=True,
                   help="one file per channel, in channel order")
    g = _image_source(p, required=False, prefix="truth-")
    g.add_argument("--truth-cube", type=_path)
    _solver_flags(p)

    p = sub.add_parser("sweep", help="run a parameter study")
    p.add_argument("--kind", choices=experiments.SWEEP_KINDS, required=True)
    p.add_argument("--grid", type=str, default=None, help="comma list; default per kind")
    p.add_argument("--methods", type=_csv(str), default=None)
    p.add_argument("--seeds", type=_csv(int), default=None, help="default: --seed")
    p.add_argument("--fixture", choices=sorted(fixtures.FIXTURES), default="four_slit")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--sr", type=_sr, default=0.30)
    _noise_flags(p)
    _solver_flags(p)

    p = sub.add_parser("metrics", help="PSNR / SSIM / MSE of a reconstruction")
    _image_source(p, prefix="truth-")
    p.add_argument("--recon", type=_path, required=True)
    p.add_argument("--raw", action="store_true", help="skip min-max normalization")

    p = sub.add_parser("cube", help="spectral cube utilities")
    csub = p.add_subparsers(dest="cube_command", parser_class=_Parser, required=True)
    c = csub.add_parser("synth", help="synthetic cube from a base image")
    _image_source(c)
    c.add_argument("--n", type=int, default=None)
    c.add_argument("--channels", type=_positive_int, default=8)
    c.add_argument("--wl-min", type=float, default=880.0)
    c.add_argument("--wl-max", type=float, default=1600.0)
    c.add_argument("--profile", choices=("flat", "gaussian"), default="gaussian")
    c.add_argument("--center", type=float, default=1240.0)
    c.add_argument("--fwhm", type=float, default=600.0)
    c.add_argument("--floor", type=float, default=0.0,
                   help="added to the gaussian profile, then capped at 1")
    c = csub.add_parser("inspect", help="describe a cube file")
    c.add_argument("file", type=_path)
    c = csub.add_parser("run", help="acquire and reconstruct every channel of a cube")
    c.add_argument("file", type=_path)
    c.add_argument("--patterns", type=_path, required=True)
    c.add_argument("--solvers", type=_csv(str), default=["dgi", "gan"])
    c.add_argument("--persist-discriminator", action="store_true")
    c.add_argument("--pixel", type=_csv(int), action="append", default=None,
                   help="u,v pixel whose spectral trace is plotted (repeatable)")
    _noise_flags(c)
    _solver_flags(c)
    return parser


# ---------------------------------------------------------------- helpers

def _load_plane(path: str) -> np.ndarray:
    arr = np.load(path, allow_pickle=False)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{path}: expected a square 2-D array, got shape {arr.shape}")
    return arr.astype(np.float64)


def _source_image(args, prefix="", n=None):
    img = getattr(args, f"{prefix}image", None)
    fix = getattr(args, f"{prefix}fixture", None)
    if img:
        return _load_plane(img)
    if fix:
        return fixtures.get(fix, n)
    return None


def _solver_config(args, seed) -> SolverConfig:
    if args.disc_steps < 0:
        raise UsageError("--disc-steps must be >= 0")
    init = {"noise": "noise", "dgi": "dgi_warm_start", "tv": "external_image"}[args.init]
    return SolverConfig(lr=args.lr, iterations=args.iterations, seed=seed,
                        disc_steps_per_gen_step=args.disc_steps, init=init,
                        adversarial_weight=args.adversarial_weight,
                        signal_normalization=args.normalization, record_every=args.record_every)


def _noise(args) -> NoiseModel:
    return NoiseModel(args.noise, args.sigma)


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, default=_json_default) + "\n")


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(type(v))


def _emit_config(args, out: Path) -> None:
    resolved = {k: v for k, v in vars(args).items() if k not in ("config", "out", "jobs")}
    _write_json(out / "config.json", {"tool": "spirecon", "version": 1, "args": resolved})


def _print_rows(rows, columns):
    print("\t".join(columns))
    for r in rows:
        print("\t".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in columns))


# ---------------------------------------------------------------- commands

def cmd_patterns(args, out: Path) -> int:
    ps = select_patterns(args.n, args.sr, args.ordering)
    path = out / "patterns.pat"
    save_patterns(path, ps)
    print(f"n={ps.n}\tm={ps.m}\tsr={ps.sr!r}\tordering={ps.ordering}\tfile={path}")
    return EXIT_OK


def cmd_simulate(args, out: Path) -> int:
    ps = load_patterns(args.patterns)
    save = save_signal_text if args.format == "text" else save_signal_binary
    if args.cube:
        sigs = acquire_cube(hsi.load_cube(args.cube), ps, _noise(args), args.seed)
    else:
        sigs = [acquire(_source_image(args, n=ps.n), ps, _noise(args), args.seed)]
    (out / "signals").mkdir(exist_ok=True)
    print("channel\twavelength\tm\tfile")
    for s in sigs:
        path = out / "signals" / f"ch{s.channel_index:03d}.sig"
        save(path, s)
        print(f"{s.channel_index}\t{s.wavelength}\t{s.m}\t{path}")
    return EXIT_OK


def _reconstruct_one(method, ps, sig, truth, args, seed):
    if method == "dgi":
        return dgi(ps, sig).image, None
    if method == "tv":
        return tv_reconstruct(ps, sig, lambda_tv=args.tv_lambda, iters=args.tv_iters), None
    cfg = _solver_config(args, seed)
    external = None
    if args.init == "tv":
        external = tv_reconstruct(ps, sig, lambda_tv=args.tv_lambda, iters=args.tv_iters)
    solve = gan_solve if method == "gan" else gidc_solve
    return solve(ps, sig, cfg, ground_truth=truth, external=external)


def cmd_reconstruct(args, out: Path) -> int:
    ps = load_patterns(args.patterns)
    sigs = [load_signal(p) for p in args.signals]
    truths = [None] * len(sigs)
    wavelengths = None
    if args.truth_cube:
        cube = hsi.load_cube(args.truth_cube)
        if cube.channels != len(sigs):
            raise ValueError(f"truth cube has {cube.channels} channels, got {len(sigs)} signals")
        truths = list(cube.planes)
        wavelengths = cube.wavelengths
    else:
        t = _source_image(args, prefix="truth_", n=ps.n)
        if t is not None:
            if len(sigs) != 1:
                raise ValueError("a single truth image needs exactly one signal")
            truths = [t]
    rows, planes, status = [], [], EXIT_OK
    for c, (sig, truth) in enumerate(zip(sigs, truths)):
        wl = sig.wavelength if wavelengths is None else float(wavelengths[c])
        row = {"channel": sig.channel_index, "wavelength": math.nan if wl is None else float(wl),
               "solver": args.method, "status": "ok", "psnr_db": math.nan, "ssim": math.nan,
               "mse": math.nan, "error": ""}
        try:
            img, trace = _reconstruct_one(args.method, ps, sig, truth, args, args.seed + c)
        except (SolverDivergence, DivergenceError, FloatingPointError) as exc:
            row.update(status="numerical_error", error=str(exc))
            trace = getattr(exc, "trace", None)
            img = None
            status = max(status, EXIT_NUMERIC)
        stem = f"ch{sig.channel_index:03d}" if len(sigs) > 1 else "image"
        if trace is not None:
            (out / f"{stem}_trace.tsv").write_text(trace.to_tsv())
        if img is not None:
            np.save(out / f"{stem}.npy", img)
            planes.append(img)
            panels = {args.method: img}
            if truth is not None:
                q = quality(truth, img)
                row.update(psnr_db=q.psnr_db, ssim=q.ssim, mse=q.mse)
                panels = {"truth": truth, **panels}
            image_row(out / f"{stem}.svg", panels)
        rows.append(row)
    _print_rows(rows, hsi.REPORT_COLUMNS)
    report = hsi.PipelineReport(rows, config_digest="")
    (out / "report.tsv").write_text(report.to_tsv())
    (out / "report.json").write_text(report.to_json())
    if len(sigs) > 1 and len(planes) == len(sigs):
        wl = wavelengths if wavelengths is not None else np.array(
            [s.wavelength if s.wavelength is not None else float(i) for i, s in enumerate(sigs)])
        hsi.save_cube(out / f"{args.method}.cube", hsi.SpectralCube(np.stack(planes), wl))
    return status


def _grid(kind, text):
    if text is None:
        return experiments.DEFAULT_GRIDS[kind]
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise UsageError("sweep grid is empty")
    if kind == "init":
        return tuple(items)
    if kind == "iters":
        return tuple(int(t) for t in items)
    return tuple(float(t) for t in items)


def cmd_sweep(args, out: Path) -> int:
    grid = _grid(args.kind, args.grid)
    methods = tuple(args.methods or experiments.DEFAULT_METHODS[args.kind])
    seeds = tuple(args.seeds) if args.seeds else (args.seed,)
    truth = fixtures.get(args.fixture, args.n)
    base = _solver_config(args, seeds[0])
    try:
        spec = experiments.SweepSpec(args.kind, grid, truth, methods, seeds, sr=args.sr,
                                     noise=_noise(args), solver=base, tv_iters=args.tv_iters,
                                     tv_lambda=args.tv_lambda)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    res = experiments.run_sweep(spec, jobs=args.jobs)
    experiments.write_sweep(res, out)
    _print_rows(res.rows, experiments.ROW_COLUMNS)
    statuses = {r["status"] for r in res.rows}
    if "numerical_error" in statuses:
        return EXIT_NUMERIC
    return EXIT_DATA if "error" in statuses else EXIT_OK


def cmd_metrics(args, out: Path) -> int:
    recon = _load_plane(args.recon)
    truth = _source_image(args, prefix="truth_", n=recon.shape[0])
    rep = quality(truth, recon, normalize=not args.raw)
    _print_rows([rep.as_dict()], ("psnr_db", "ssim", "mse"))
    _write_json(out / "metrics.json", {k: (repr(v) if not math.isfinite(v) else v)
                                       for k, v in rep.as_dict().items()})
    return EXIT_OK


def cmd_cube(args, out: Path) -> int:
    if args.cube_command == "synth":
        base = _source_image(args, n=args.n)
        wl = np.linspace(args.wl_min, args.wl_max, args.channels)
        if args.profile == "flat":
            profile = lambda lam: 1.0
        else:
            g = hsi.gaussian_profile(args.center, args.fwhm)
            profile = lambda lam: min(1.0, args.floor + g(lam))
        cube = hsi.synth_cube(base, wl, profile)
        hsi.save_cube(out / "cube.cube", cube)
        print(f"n={cube.n}\tchannels={cube.channels}\tfile={out / 'cube.cube'}")
        return EXIT_OK
    cube = hsi.load_cube(args.file)
    if args.cube_command == "inspect":
        print("channel\twavelength\tmin\tmax\tmean")
        for c in range(cube.channels):
            p = cube.planes[c]
            vals = (cube.wavelengths[c], p.min(), p.max(), p.mean())
            print(f"{c}\t" + "\t".join(repr(float(v)) for v in vals))
        return EXIT_OK
    ps = load_patterns(args.patterns)
    try:
        cfg = _solver_config(args, 0)
        if args.init == "tv":
            raise UsageError("cube run supports --init noise or dgi")
        res = hsi.run_pipeline(cube, ps, _noise(args), args.solvers, cfg, seed=args.seed,
                               jobs=args.jobs, tv_iters=args.tv_iters, tv_lambda=args.tv_lambda,
                               persist_discriminator=args.persist_discriminator)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    res.report.save(out)
    for s in res.reconstructions:
        if not np.isnan(res.reconstructions[s]).any():
            hsi.save_cube(out / f"{s}.cube", res.cube(s))
    for (c, s), tr in res.traces.items():
        (out / f"ch{c:03d}_{s}_trace.tsv").write_text(tr.to_tsv())
    from .plotting import line_plot
    for pix in args.pixel or []:
        if len(pix) != 2:
            raise UsageError("--pixel takes u,v")
        series = {"truth": (cube.wavelengths, hsi.pixel_trace(cube, tuple(pix)))}
        for s, planes in res.reconstructions.items():
            if not np.isnan(planes).any():
                series[s] = (cube.wavelengths, hsi.pixel_trace(planes, tuple(pix)))
        line_plot(out / f"pixel_{pix[0]}_{pix[1]}.svg", series, "wavelength (nm)",
                  "normalized intensity")
    mid = cube.channels // 2
    panels = {"truth": cube.planes[mid]}
    panels.update({s: p[mid] for s, p in res.reconstructions.items() if not np.isnan(p[mid]).any()})
    image_row(out / "channel_preview.svg", panels, title=f"channel {mid}")
    _print_rows(res.report.rows, hsi.REPORT_COLUMNS)
    statuses = {r["status"] for r in res.report.rows}
    if "numerical_error" in statuses:
        return EXIT_NUMERIC
    return EXIT_DATA if "error" in statuses else EXIT_OK


COMMANDS = {"patterns": cmd_patterns, "simulate": cmd_simulate, "reconstruct": cmd_reconstruct,
            "sweep": cmd_sweep, "metrics": cmd_metrics, "cube": cmd_cube}


def _resolve(parser, argv):
    args = parser.parse_args(argv)
    if args.config is None:
        if args.command is None:
            parser.error("a command is required")
        return args
    try:
        doc = json.loads(Path(args.config).read_text())
        saved = doc["args"]
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    if args.command is not None and args.command != saved.get("command"):
        raise UsageError("--config replays its own command; do not name another")
    merged = argparse.Namespace(**saved)
    merged.config, merged.out, merged.jobs = args.config, args.out, args.jobs
    return merged


def main(argv=None) -> int:
    parser = build_parser()
    try:
        try:
            args = _resolve(parser, argv)
        except SystemExit as exc:  # argparse: --help (0) or usage error (1)
            return int(exc.code or 0)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _emit_config(args, out)
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"spirecon: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, SolverDivergence, DivergenceError) as exc:
        print(f"spirecon: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError, KeyError, IndexError) as exc:
        print(f"spirecon: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
