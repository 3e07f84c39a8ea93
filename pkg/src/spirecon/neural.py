"""Untrained, physics-driven network reconstructions.

Both solvers optimize a freshly initialized generator per measurement: the
generator image is pushed through the pattern matrix and compared with the
measured bucket signal.  ``gan_solve`` additionally trains a discriminator
on (measured, estimated) signal pairs and adds its negative log-likelihood
to the generator objective; ``gidc_solve`` uses the squared error alone.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tape, Tensor, adam_update
from .classical import dgi, minmax
from .forward import BucketSignal
from .metrics import psnr, ssim
from .networks import Discriminator, Generator
from .patterns import PatternSet

LOG_FLOOR = 1e-12
INITS = ("noise", "dgi_warm_start", "external_image")
NORMALIZATIONS = ("mean", "l2", "none")


class SolverDivergence(FloatingPointError):
    """Non-finite loss during optimization.  ``trace`` holds what was recorded."""

    def __init__(self, msg: str, trace: "SolveTrace"):
        super().__init__(msg)
        self.trace = trace


@dataclass
class SolverConfig:
    lr: float = 0.005
    iterations: int = 1000
    seed: int = 0
    disc_steps_per_gen_step: int = 1
    init: str = "noise"
    adversarial_weight: float = 1.0
    signal_normalization: str = "mean"
    record_every: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.disc_steps_per_gen_step < 0:
            raise ValueError("disc_steps_per_gen_step must be >= 0")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}")
        if self.signal_normalization not in NORMALIZATIONS:
            raise ValueError(f"signal_normalization must be one of {NORMALIZATIONS}")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


TRACE_COLUMNS = ("iter", "l", "l_mse", "l_adv", "d_loss", "psnr", "ssim")


@dataclass
class SolveTrace:
    """One row per recorded iteration; row ``k`` describes the generator
    after ``k`` parameter updates."""

    rows: list[dict] = field(default_factory=list)

    def append(self, **row) -> None:
        if self.rows and row["iter"] <= self.rows[-1]["iter"]:
            raise ValueError("trace iterations must increase")
        self.rows.append({c: row.get(c, math.nan) for c in TRACE_COLUMNS})

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def at(self, iteration: int) -> dict:
        for r in self.rows:
            if r["iter"] == iteration:
                return r
        raise KeyError(f"iteration {iteration} not recorded")

    def to_tsv(self, delimiter: str = "\t") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.rows:
            w.writerow([r["iter"]] + [repr(float(r[c])) for c in TRACE_COLUMNS[1:]])
        return buf.getvalue()

    @classmethod
    def from_tsv(cls, text: str, delimiter: str = "\t") -> "SolveTrace":
        rows = list(csv.reader(io.StringIO(text), delimiter=delimiter))
        if not rows or tuple(rows[0]) != TRACE_COLUMNS:
            raise ValueError("not a trace table")
        tr = cls()
        for r in rows[1:]:
            tr.append(iter=int(r[0]), **{c: float(v) for c, v in zip(TRACE_COLUMNS[1:], r[1:])})
        return tr


# ---------------------------------------------------------------- objectives

def normalize_signal(signal, mode: str = "mean"):
    """Divide by the mean (``mean``) or Euclidean norm (``l2``) of the signal.

    Accepts arrays or tensors; tensors stay on their tape.
    """
    is_tensor = isinstance(signal, Tensor)
    x = signal if is_tensor else ad.Tensor(np.asarray(signal, dtype=np.float64))
    if mode == "none":
        out = x
    elif mode == "mean":
        scale = ad.mean(x)
        if scale.item() == 0:
            raise ValueError("cannot mean-normalize a zero-mean signal")
        out = ad.div(x, scale)
    elif mode == "l2":
        norm2 = ad.sum(ad.square(x))
        if norm2.item() == 0:
            raise ValueError("cannot l2-normalize a zero signal")
        out = ad.div(x, _sqrt(norm2))
    else:
        raise ValueError(f"unknown normalization {mode!r}")
    return out if is_tensor else out.values


def _sqrt(x: Tensor) -> Tensor:
    v = np.sqrt(x.values)
    return ad.apply("sqrt", (x,), v, lambda g: (g / (2.0 * v),))


def mse_objective(estimated, measured) -> Tensor:
    """Sum of squared differences between two length-m signals."""
    est, meas = ad.as_tensor(estimated), ad.as_tensor(measured)
    if est.shape != meas.shape:
        raise ad.ShapeError(f"mse_objective: lengths differ {est.shape} vs {meas.shape}")
    return ad.sum(ad.square(ad.sub(est, meas)))


def safe_log(p) -> Tensor:
    return ad.log(ad.clamp(p, LOG_FLOOR, 1.0))


def adversarial_objective(disc: Discriminator, estimated, params=None) -> Tensor:
    """-log D(estimated), with D clamped to [1e-12, 1]."""
    return ad.neg(safe_log(disc.forward(estimated, params)))


def discriminator_loss_from_probs(p_real, p_fake) -> Tensor:
    return ad.sub(ad.neg(safe_log(p_real)), safe_log(ad.sub(1.0, p_fake)))


def discriminator_objective(disc: Discriminator, measured, estimated, params=None) -> Tensor:
    """-log D(measured) - log(1 - D(estimated)), both logs clamped at 1e-12."""
    meas = ad.as_tensor(measured).values
    est = ad.as_tensor(estimated).values
    probs = disc.forward(np.stack([meas, est], axis=1), params)
    return discriminator_loss_from_probs(ad.index(probs, 0), ad.index(probs, 1))


# ---------------------------------------------------------------- inputs

def warm_start_input(mode: str, patterns: PatternSet, signal: BucketSignal | None = None,
                     seed=0, external: np.ndarray | None = None) -> np.ndarray:
    """Generator input plane: seeded uniform noise, the DGI image, or a
    caller-supplied image in [0, 1]."""
    n = patterns.n
    if mode == "noise":
        return np.random.default_rng(seed).uniform(0.0, 1.0, (n, n))
    if mode == "dgi_warm_start":
        if signal is None:
            raise ValueError("dgi_warm_start needs the measured signal")
        return dgi(patterns, signal).image
    if mode == "external_image":
        if external is None:
            raise ValueError("external_image mode needs an image")
        img = np.asarray(external, dtype=np.float64)
        if img.shape != (n, n):
            raise ValueError(f"external image shape {img.shape} != ({n}, {n})")
        if not np.all(np.isfinite(img)) or img.min() < 0 or img.max() > 1:
            raise ValueError("external image must lie in [0, 1]")
        return img.copy()
    raise ValueError(f"unknown init mode {mode!r}")


# ---------------------------------------------------------------- solvers

def _streams(seed: int) -> tuple[np.random.Generator, ...]:
    ss = np.random.SeedSequence(int(seed))
    return tuple(np.random.default_rng(s) for s in ss.spawn(3))


def _solve(patterns: PatternSet, signal, config: SolverConfig, ground_truth, adversarial: bool,
           external: np.ndarray | None, generator: Generator | None = None,
           discriminator: Discriminator | None = None) -> tuple[np.ndarray, SolveTrace]:
    y = np.asarray(getattr(signal, "values", signal), dtype=np.float64)
    if y.size != patterns.m:
        raise ValueError(f"signal length {y.size} != pattern count {patterns.m}")
    g_rng, d_rng, z_rng = _streams(config.seed)
    n, a = patterns.n, patterns.matrix
    gen = generator if generator is not None else Generator(n, g_rng)
    z = warm_start_input(config.init, patterns, signal, z_rng, external)
    measured = normalize_signal(y, config.signal_normalization)
    use_disc = adversarial and (config.adversarial_weight != 0
                                or config.disc_steps_per_gen_step > 0)
    disc = None
    if use_disc:
        disc = discriminator if discriminator is not None else Discriminator(patterns.m, d_rng)
        d_state = AdamState(disc.num_params, config.lr, config.beta1, config.beta2, config.eps)
    g_state = AdamState(gen.num_params, config.lr, config.beta1, config.beta2, config.eps)
    trace = SolveTrace()
    truth = None if ground_truth is None else np.asarray(ground_truth, dtype=np.float64)
    total = config.iterations
    image = None

    for k in range(total + 1):
        final = k == total
        with Tape() as tape:
            gp = gen.bind(tape)
            img = gen.forward(z, gp)
            est = ad.matmul(a, ad.reshape(img, (n * n,)))
            est_n = normalize_signal(est, config.signal_normalization)
        image = img.values
        l_mse = mse_objective(est_n, measured)
        d_loss = math.nan
        if disc is not None:
            if not final:
                for _ in range(config.disc_steps_per_gen_step):
                    with Tape() as dtape:
                        dp = disc.bind(dtape)
                        dl = discriminator_objective(disc, measured, est_n, dp)
                    d_loss = dl.item()
                    _check_finite(d_loss, "discriminator loss", k, trace)
                    dtape.backward(dl)
                    _step(disc.theta, disc.flat_grad(dp), d_state, "discriminator", k, trace)
            else:
                d_loss = discriminator_objective(disc, measured, est_n.values).item()
            l_adv = adversarial_objective(disc, est_n)
            loss = l_mse if config.adversarial_weight == 0 else ad.add(
                l_mse, ad.mul(config.adversarial_weight, l_adv))
            adv_value = l_adv.item()
        else:
            loss = l_mse
            adv_value = math.nan
        _check_finite(loss.item(), "generator loss", k, trace)
        if final or k % config.record_every == 0:
            row = dict(iter=k, l=loss.item(), l_mse=l_mse.item(), l_adv=adv_value, d_loss=d_loss)
            if truth is not None:
                rec, _ = minmax(image)
                row.update(psnr=psnr(truth, rec), ssim=ssim(truth, rec))
            trace.append(**row)
        if final:
            break
        tape.backward(loss)
        _step(gen.theta, gen.flat_grad(gp), g_state, "generator", k, trace)
    return image.copy(), trace


def _check_finite(value: float, what: str, k: int, trace: SolveTrace) -> None:
    if not np.isfinite(value):
        raise SolverDivergence(f"{what} became non-finite at iteration {k}", trace)


def _step(theta, grad, state, what, k, trace) -> None:
    try:
        adam_update(theta, grad, state)
    except FloatingPointError as exc:
        raise SolverDivergence(f"{what} update failed at iteration {k}: {exc}", trace) from exc


def gan_solve(patterns: PatternSet, signal, config: SolverConfig | None = None,
              ground_truth: Optional[np.ndarray] = None, external: np.ndarray | None = None,
              **kw) -> tuple[np.ndarray, SolveTrace]:
    """Alternate one (or more) discriminator updates with one generator
    update on ``l_mse + adversarial_weight * l_adv``.  Returns the final
    generator image and the loss trace."""
    return _solve(patterns, signal, config or SolverConfig(), ground_truth, True, external, **kw)


def gidc_solve(patterns: PatternSet, signal, config: SolverConfig | None = None,
               ground_truth: Optional[np.ndarray] = None, external: np.ndarray | None = None,
               **kw) -> tuple[np.ndarray, SolveTrace]:
    """Generator-only optimization of the squared signal error."""
    return _solve(patterns, signal, config or SolverConfig(), ground_truth, False, external, **kw)
