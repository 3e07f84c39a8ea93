"""Non-neural reconstructions: differential ghost imaging and a TV solver."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward import BucketSignal
from .patterns import PatternSet


class DivergenceError(FloatingPointError):
    """An iterative solver produced a non-finite objective."""


def minmax(img: np.ndarray) -> tuple[np.ndarray, tuple[float, float]]:
    """Map ``img`` linearly onto [0, 1]; a constant plane maps to zeros."""
    lo, hi = float(np.min(img)), float(np.max(img))
    if hi > lo:
        return (img - lo) / (hi - lo), (lo, hi)
    return np.zeros_like(img, dtype=np.float64), (lo, hi)


@dataclass
class DgiResult:
    image: np.ndarray
    normalization: tuple[float, float]
    raw: np.ndarray


def dgi_raw(patterns: PatternSet, signal: BucketSignal | np.ndarray) -> np.ndarray:
    """<H I> - <H>/<S> <S I>, means over the m patterns, before normalization."""
    y = np.asarray(getattr(signal, "values", signal), dtype=np.float64)
    if y.size != patterns.m:
        raise ValueError(f"signal length {y.size} != pattern count {patterns.m}")
    a = patterns.matrix
    s = patterns.sums.astype(np.float64)
    mean_s = s.mean()
    if mean_s == 0:
        raise ValueError("mean pattern sum is zero; DGI undefined")
    m = patterns.m
    corr = (a.T @ y) / m
    avg_h = a.mean(axis=0)
    out = corr - avg_h / mean_s * np.mean(s * y)
    return out.reshape(patterns.n, patterns.n)


def dgi(patterns: PatternSet, signal: BucketSignal | np.ndarray) -> DgiResult:
    raw = dgi_raw(patterns, signal)
    img, norm = minmax(raw)
    return DgiResult(img, norm, raw)


# ---------------------------------------------------------------- TV

def _grad2d(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    dx = np.zeros_like(x)
    dy = np.zeros_like(x)
    dx[:, :-1] = x[:, 1:] - x[:, :-1]
    dy[:-1, :] = x[1:, :] - x[:-1, :]
    return dx, dy


def _grad2d_adjoint(px: np.ndarray, py: np.ndarray) -> np.ndarray:
    out = np.zeros_like(px)
    out[:, :-1] -= px[:, :-1]
    out[:, 1:] += px[:, :-1]
    out[:-1, :] -= py[:-1, :]
    out[1:, :] += py[:-1, :]
    return out


def tv_smooth(x: np.ndarray, eps: float = 1e-6) -> float:
    """Anisotropic TV with Charbonnier smoothing, offset so a constant plane scores 0."""
    dx, dy = _grad2d(x)
    return float(np.sum(np.sqrt(dx * dx + eps * eps) - eps) + np.sum(np.sqrt(dy * dy + eps * eps) - eps))


def default_lambda(patterns: PatternSet, signal) -> float:
    """``0.1 * ||A_c^T y_c||_inf`` with the pattern columns and the signal
    centred, so the DC response of {0,1} masks does not set the scale."""
    y = np.asarray(getattr(signal, "values", signal), dtype=np.float64)
    a = patterns.matrix
    ac = a - a.mean(axis=0)
    return 0.1 * float(np.max(np.abs(ac.T @ (y - y.mean()))))


def tv_reconstruct(patterns: PatternSet, signal, lambda_tv: float | None = None,
                   iters: int = 500, eps: float = 1e-6, x0: np.ndarray | None = None,
                   history: list | None = None) -> np.ndarray:
    """Approximately minimize ``||A x - y||^2 + lambda * TV(x)`` on [0, 1]^(n*n).

    Projected gradient descent; each step starts from a Barzilai-Borwein
    step length and backtracks until the objective decreases (Armijo), so
    accepted objectives never increase.  ``history``, when given, receives
    the objective after every accepted step.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    y = np.asarray(getattr(signal, "values", signal), dtype=np.float64)
    if y.size != patterns.m:
        raise ValueError(f"signal length {y.size} != pattern count {patterns.m}")
    a = patterns.matrix
    n = patterns.n
    lam = default_lambda(patterns, y) if lambda_tv is None else float(lambda_tv)
    if lam < 0:
        raise ValueError("lambda_tv must be non-negative")

    def objective(x):
        r = a @ x.ravel() - y
        return float(r @ r) + lam * tv_smooth(x, eps)

    def gradient(x):
        r = a @ x.ravel() - y
        g = 2.0 * (a.T @ r).reshape(n, n)
        dx, dy = _grad2d(x)
        g += lam * _grad2d_adjoint(dx / np.sqrt(dx * dx + eps * eps), dy / np.sqrt(dy * dy + eps * eps))
        return g

    x = np.zeros((n, n)) if x0 is None else np.clip(np.array(x0, dtype=np.float64), 0.0, 1.0)
    f = objective(x)
    g = gradient(x)
    # first step from the data-term curvature along g
    ag = a @ g.ravel()
    step = float(g.ravel() @ g.ravel()) / max(2.0 * float(ag @ ag), 1e-300)
    for _ in range(iters):
        if not np.any(g):
            break
        t = step
        for _ in range(60):
            xn = np.clip(x - t * g, 0.0, 1.0)
            fn = objective(xn)
            if not np.isfinite(fn):
                raise DivergenceError("TV objective became non-finite; use a smaller step")
            d = xn - x
            if fn <= f + 1e-4 * float(np.sum(g * d)) or not np.any(d):
                break
            t *= 0.5
        else:
            break
        if not np.any(d):
            break
        gn = gradient(xn)
        s_vec, y_vec = d.ravel(), (gn - g).ravel()
        sy = float(s_vec @ y_vec)
        step = float(s_vec @ s_vec) / sy if sy > 0 else t * 2.0
        x, f, g = xn, fn, gn
        if history is not None:
            history.append(f)
    return x
