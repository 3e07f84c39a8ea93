"""Differentiable network layers built on :mod:`spirecon.autodiff`.

Convolutions are implemented with im2col/col2im and a single matrix product
per call.  Image tensors are channel-first ``[C, H, W]`` with an implicit
batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import DTYPE, ShapeError, Tensor, apply, as_tensor, leaky_relu, needs_grad, sigmoid

__all__ = [
    "LayerSpec", "conv2d", "deconv2d", "maxpool2d", "batchnorm", "dense",
    "leaky_relu", "sigmoid", "he_normal",
]


@dataclass(frozen=True)
class LayerSpec:
    """Static description of one layer; used for parameter bookkeeping."""

    kind: str  # conv | deconv | maxpool | batchnorm | dense | leaky_relu | sigmoid
    in_channels: int = 1
    out_channels: int = 1
    kernel: tuple[int, int] = (1, 1)
    stride: int = 1
    slope: float = 0.2
    bias: bool = False

    def param_shapes(self) -> list[tuple[int, ...]]:
        kh, kw = self.kernel
        if self.kind == "conv":
            shapes = [(self.out_channels, self.in_channels, kh, kw)]
        elif self.kind == "deconv":
            shapes = [(self.in_channels, self.out_channels, kh, kw)]
        elif self.kind == "batchnorm":
            return [(self.out_channels,), (self.out_channels,)]
        elif self.kind == "dense":
            shapes = [(self.out_channels, self.in_channels)]
        else:
            return []
        if self.bias:
            shapes.append((self.out_channels,))
        return shapes

    def num_params(self) -> int:
        return int(np.sum([np.prod(s) for s in self.param_shapes()], dtype=np.int64))

    def fan_in(self) -> int:
        kh, kw = self.kernel
        if self.kind in ("conv", "deconv"):
            return self.in_channels * kh * kw
        return self.in_channels


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def _im2col(xp: np.ndarray, k: int, s: int, ho: int, wo: int) -> np.ndarray:
    c = xp.shape[0]
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, : s * (ho - 1) + 1 : s, : s * (wo - 1) + 1 : s]
    # win: [C, ho, wo, k, k] -> [C, k, k, ho, wo]
    return win.transpose(0, 3, 4, 1, 2).reshape(c * k * k, ho * wo)


def _col2im(cols: np.ndarray, c: int, k: int, s: int, ho: int, wo: int,
            hp: int, wp: int) -> np.ndarray:
    buf = np.zeros((c, hp, wp), dtype=DTYPE)
    cols = cols.reshape(c, k, k, ho, wo)
    for a in range(k):
        for b in range(k):
            buf[:, a : a + s * (ho - 1) + 1 : s, b : b + s * (wo - 1) + 1 : s] += cols[:, a, b]
    return buf


def _check_image(name: str, x: Tensor) -> None:
    if x.values.ndim != 3:
        raise ShapeError(f"{name}: expected [C, H, W] input, got shape {x.shape}")


def conv2d(x, kernels, bias=None, stride: int = 1) -> Tensor:
    """Cross-correlation with zero "same" padding (``k // 2`` per side).

    ``kernels`` has shape ``[C_out, C_in, k, k]``; with stride 1 the output
    keeps the input's spatial size.
    """
    x, w = as_tensor(x), as_tensor(kernels)
    _check_image("conv2d", x)
    if w.values.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d: kernels must be [C_out, C_in, k, k], got {w.shape}")
    cout, cin, k, _ = w.shape
    if x.shape[0] != cin:
        raise ShapeError(f"conv2d: input has {x.shape[0]} channels, kernels expect {cin} "
                         f"(input {x.shape}, kernels {w.shape})")
    _, h, wd = x.shape
    p = k // 2
    if h + 2 * p < k or wd + 2 * p < k:
        raise ShapeError(f"conv2d: input {x.shape} smaller than kernel {w.shape}")
    ho = (h + 2 * p - k) // stride + 1
    wo = (wd + 2 * p - k) // stride + 1
    xp = np.pad(x.values, ((0, 0), (p, p), (p, p)))
    cols = _im2col(xp, k, stride, ho, wo)
    wm = w.values.reshape(cout, cin * k * k)
    out = (wm @ cols).reshape(cout, ho, wo)
    inputs = [x, w]
    if bias is not None:
        b = as_tensor(bias)
        if b.shape != (cout,):
            raise ShapeError(f"conv2d: bias shape {b.shape}, expected ({cout},)")
        out = out + b.values[:, None, None]
        inputs.append(b)

    def vjp(g):
        gm = g.reshape(cout, ho * wo)
        dw = (gm @ cols.T).reshape(w.shape) if needs_grad(w) else None
        dx = None
        if needs_grad(x):
            dcols = wm.T @ gm
            dxp = _col2im(dcols, cin, k, stride, ho, wo, xp.shape[1], xp.shape[2])
            dx = dxp[:, p : p + h, p : p + wd]
        if bias is not None:
            return dx, dw, gm.sum(axis=1)
        return dx, dw

    return apply("conv2d", inputs, out, vjp)


def deconv2d(x, kernels, stride: int = 2) -> Tensor:
    """Transposed convolution, the exact adjoint of ``conv2d(., kernels, stride)``.

    ``kernels`` has shape ``[C_in, C_out, k, k]``; an ``[C_in, H, W]`` input
    maps to ``[C_out, stride*H, stride*W]``.
    """
    x, w = as_tensor(x), as_tensor(kernels)
    _check_image("deconv2d", x)
    if w.values.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"deconv2d: kernels must be [C_in, C_out, k, k], got {w.shape}")
    cin, cout, k, _ = w.shape
    if x.shape[0] != cin:
        raise ShapeError(f"deconv2d: input has {x.shape[0]} channels, kernels expect {cin} "
                         f"(input {x.shape}, kernels {w.shape})")
    _, h, wd = x.shape
    s, p = stride, k // 2
    hb = max(s * (h - 1) + k, p + s * h)
    wb = max(s * (wd - 1) + k, p + s * wd)
    wm = w.values.reshape(cin, cout * k * k)
    xm = x.values.reshape(cin, h * wd)
    buf = _col2im(wm.T @ xm, cout, k, s, h, wd, hb, wb)
    out = buf[:, p : p + s * h, p : p + s * wd].copy()

    def vjp(g):
        gb = np.zeros((cout, hb, wb), dtype=DTYPE)
        gb[:, p : p + s * h, p : p + s * wd] = g
        dcols = _im2col(gb, k, s, h, wd)
        dx = (wm @ dcols).reshape(x.shape) if needs_grad(x) else None
        dw = (xm @ dcols.T).reshape(w.shape) if needs_grad(w) else None
        return dx, dw

    return apply("deconv2d", [x, w], out, vjp)


def maxpool2d(x, window: int = 2, stride: int = 2) -> tuple[Tensor, np.ndarray]:
    """Non-overlapping max pooling.  Returns ``(pooled, argmax)`` where
    ``argmax`` holds the flat in-window index of each winner."""
    x = as_tensor(x)
    _check_image("maxpool2d", x)
    if window != stride:
        raise ValueError("maxpool2d: only window == stride is supported")
    c, h, wd = x.shape
    q = window
    if h % q or wd % q:
        raise ShapeError(f"maxpool2d: spatial dims {h}x{wd} not divisible by {q}")
    ho, wo = h // q, wd // q
    blocks = x.values.reshape(c, ho, q, wo, q).transpose(0, 1, 3, 2, 4).reshape(c, ho, wo, q * q)
    idx = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        gb = np.zeros((c, ho, wo, q * q), dtype=DTYPE)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        return (gb.reshape(c, ho, wo, q, q).transpose(0, 1, 3, 2, 4).reshape(c, h, wd),)

    return apply("maxpool2d", [x], out, vjp), idx


def batchnorm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over spatial positions (batch of one),
    biased variance, train-mode statistics."""
    x, gm, bt = as_tensor(x), as_tensor(gain), as_tensor(bias)
    _check_image("batchnorm", x)
    c, h, wd = x.shape
    if gm.shape != (c,) or bt.shape != (c,):
        raise ShapeError(f"batchnorm: gain {gm.shape} / bias {bt.shape} vs {c} channels")
    n = h * wd
    if n < 2:
        raise ShapeError(f"batchnorm: needs at least 2 spatial positions, got {h}x{wd}")
    xv = x.values.reshape(c, n)
    mu = xv.mean(axis=1, keepdims=True)
    xc = xv - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gv = gm.values[:, None]
    out = (xhat * gv + bt.values[:, None]).reshape(c, h, wd)

    def vjp(g):
        g2 = g.reshape(c, n)
        dgain = (g2 * xhat).sum(axis=1)
        dbias = g2.sum(axis=1)
        dxhat = g2 * gv
        dx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        return dx.reshape(c, h, wd), dgain, dbias

    return apply("batchnorm", [x, gm, bt], out, vjp)


def dense(x, weights, bias: Optional[object] = None) -> Tensor:
    """Affine map ``W @ x + b``; ``x`` is ``[n]`` or a column batch ``[n, B]``."""
    x, w = as_tensor(x), as_tensor(weights)
    if w.values.ndim != 2 or x.values.ndim not in (1, 2) or x.shape[0] != w.shape[1]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weights {w.shape}")
    xv, wv = x.values, w.values
    out = wv @ xv
    inputs = [x, w]
    if bias is not None:
        b = as_tensor(bias)
        if b.shape != (w.shape[0],):
            raise ShapeError(f"dense: bias {b.shape} vs weights {w.shape}")
        out = out + (b.values if xv.ndim == 1 else b.values[:, None])
        inputs.append(b)

    def vjp(g):
        dx = wv.T @ g if needs_grad(x) else None
        dw = None
        if needs_grad(w):
            dw = np.outer(g, xv) if xv.ndim == 1 else g @ xv.T
        if bias is not None:
            return dx, dw, (g if g.ndim == 1 else g.sum(axis=1))
        return dx, dw

    return apply("dense", inputs, out, vjp)
