"""Encoder-decoder generator and fully connected discriminator.

Each network stores all of its weights in one flat float64 vector ``theta``;
per-layer weights are reshaped views into it, so an optimizer step on
``theta`` updates every layer in place and checkpoints are a single block.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import DTYPE, ShapeError, Tape, Tensor
from .layers import LayerSpec, batchnorm, conv2d, deconv2d, dense, he_normal, leaky_relu, maxpool2d, sigmoid

DOWN_CHANNELS = (16, 32, 64, 128)
KERNEL = 5
SLOPE = 0.2


class _FlatParams:
    def _allocate(self, shapes: list[tuple[str, tuple[int, ...]]]) -> None:
        sizes = [int(np.prod(s)) for _, s in shapes]
        self.theta = np.zeros(int(np.sum(sizes)), dtype=DTYPE)
        self.views: dict[str, np.ndarray] = {}
        self._order = []
        off = 0
        for (name, shape), size in zip(shapes, sizes):
            self.views[name] = self.theta[off : off + size].reshape(shape)
            self._order.append((name, off, size))
            off += size

    @property
    def num_params(self) -> int:
        return self.theta.size

    def bind(self, tape: Tape) -> dict[str, Tensor]:
        """Register every weight view as a trainable leaf on ``tape``."""
        return {name: tape.param(self.views[name]) for name, _, _ in self._order}

    def flat_grad(self, leaves: dict[str, Tensor]) -> np.ndarray:
        g = np.empty_like(self.theta)
        for name, off, size in self._order:
            lg = leaves[name].grad
            if lg is None:
                g[off : off + size] = 0.0
            else:
                g[off : off + size] = lg.ravel()
        return g

    def constants(self) -> dict[str, Tensor]:
        return {name: Tensor(self.views[name]) for name, _, _ in self._order}

    def digest(self) -> str:
        desc = json.dumps(self.describe(), sort_keys=True).encode()
        return hashlib.sha256(desc).hexdigest()[:16]


class Generator(_FlatParams):
    """Down path of ``depth`` (conv 5x5 s1 + BN + leaky ReLU, maxpool 2x2)
    blocks, a mirrored up path of (deconv 5x5 s2 + BN + leaky ReLU) blocks,
    and a 1x1 conv + sigmoid head.

    ``depth`` defaults to ``min(4, log2(n))`` so small test images still
    reach a >=1x1 bottleneck.
    """

    def __init__(self, n: int, seed: int | np.random.Generator = 0,
                 channels: tuple[int, ...] = DOWN_CHANNELS, depth: int | None = None,
                 slope: float = SLOPE):
        if n < 2 or n & (n - 1):
            raise ValueError(f"generator side must be a power of two, got {n}")
        levels = int(np.log2(n))
        depth = min(len(channels), levels) if depth is None else depth
        if not 1 <= depth <= min(len(channels), levels):
            raise ValueError(f"depth {depth} invalid for n={n} and {len(channels)} channel stages")
        self.n = n
        self.depth = depth
        self.slope = slope
        down = list(channels[:depth])
        self.down_plan = list(zip([1] + down[:-1], down))
        ups = down[::-1][1:] + [down[0]]
        self.up_plan = list(zip(down[::-1], ups))
        self.specs: list[tuple[str, LayerSpec]] = []
        for i, (ci, co) in enumerate(self.down_plan):
            self.specs.append((f"down{i}.conv", LayerSpec("conv", ci, co, (KERNEL, KERNEL), 1)))
            self.specs.append((f"down{i}.bn", LayerSpec("batchnorm", co, co)))
        for i, (ci, co) in enumerate(self.up_plan):
            self.specs.append((f"up{i}.deconv", LayerSpec("deconv", ci, co, (KERNEL, KERNEL), 2)))
            self.specs.append((f"up{i}.bn", LayerSpec("batchnorm", co, co)))
        self.specs.append(("head", LayerSpec("conv", ups[-1], 1, (1, 1), 1, bias=True)))
        shapes = []
        for name, spec in self.specs:
            ps = spec.param_shapes()
            suffixes = ["gain", "bias"] if spec.kind == "batchnorm" else ["w", "b"][: len(ps)]
            shapes += [(f"{name}.{sfx}", s) for sfx, s in zip(suffixes, ps)]
        self._allocate(shapes)
        self.init(seed)

    def init(self, seed) -> None:
        rng = np.random.default_rng(seed)
        for name, spec in self.specs:
            if spec.kind == "batchnorm":
                self.views[f"{name}.gain"][:] = 1.0
                self.views[f"{name}.bias"][:] = 0.0
            else:
                w = self.views[f"{name}.w"]
                w[:] = he_normal(rng, w.shape, spec.fan_in())
                if spec.bias:
                    self.views[f"{name}.b"][:] = 0.0

    def describe(self) -> dict:
        return {"kind": "generator", "n": self.n, "depth": self.depth, "slope": self.slope,
                "down": self.down_plan, "up": self.up_plan}

    def forward(self, z, params: dict[str, Tensor] | None = None) -> Tensor:
        """Map an ``n x n`` input plane to an ``n x n`` plane in (0, 1)."""
        z = ad.as_tensor(z)
        if z.shape != (self.n, self.n):
            raise ShapeError(f"generator expects a {self.n}x{self.n} input, got {z.shape}")
        p = params if params is not None else self.constants()
        h = ad.reshape(z, (1, self.n, self.n))
        for i in range(len(self.down_plan)):
            h = conv2d(h, p[f"down{i}.conv.w"])
            h = batchnorm(h, p[f"down{i}.bn.gain"], p[f"down{i}.bn.bias"])
            h = leaky_relu(h, self.slope)
            h, _ = maxpool2d(h)
        for i in range(len(self.up_plan)):
            h = deconv2d(h, p[f"up{i}.deconv.w"], stride=2)
            h = batchnorm(h, p[f"up{i}.bn.gain"], p[f"up{i}.bn.bias"])
            h = leaky_relu(h, self.slope)
        h = conv2d(h, p["head.w"], p["head.b"])
        return ad.reshape(sigmoid(h), (self.n, self.n))


class Discriminator(_FlatParams):
    """``hidden_layers`` fully connected layers of width ``width`` with leaky
    ReLU, then a dense map to one logit and a sigmoid."""

    def __init__(self, m: int, seed: int | np.random.Generator = 0, width: int | None = None,
                 hidden_layers: int = 4, slope: float = SLOPE):
        if m < 1:
            raise ValueError("discriminator input length must be positive")
        self.m = m
        self.width = m if width is None else width
        self.hidden_layers = hidden_layers
        self.slope = slope
        dims = [m] + [self.width] * hidden_layers + [1]
        self.specs = [(f"fc{i}", LayerSpec("dense", a, b, bias=True))
                      for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]))]
        shapes = []
        for name, spec in self.specs:
            w, b = spec.param_shapes()
            shapes += [(f"{name}.w", w), (f"{name}.b", b)]
        self._allocate(shapes)
        self.init(seed)

    def init(self, seed) -> None:
        rng = np.random.default_rng(seed)
        for name, spec in self.specs:
            w = self.views[f"{name}.w"]
            w[:] = he_normal(rng, w.shape, spec.fan_in())
            self.views[f"{name}.b"][:] = 0.0

    def describe(self) -> dict:
        return {"kind": "discriminator", "m": self.m, "width": self.width,
                "hidden_layers": self.hidden_layers, "slope": self.slope}

    def forward(self, signal, params: dict[str, Tensor] | None = None) -> Tensor:
        """Probability that ``signal`` (``[m]`` or column batch ``[m, B]``) is measured data."""
        x = ad.as_tensor(signal)
        if x.shape[0] != self.m or x.values.ndim > 2:
            raise ShapeError(f"discriminator expects length {self.m}, got shape {x.shape}")
        p = params if params is not None else self.constants()
        last = len(self.specs) - 1
        for i in range(len(self.specs)):
            x = dense(x, p[f"fc{i}.w"], p[f"fc{i}.b"])
            if i < last:
                x = leaky_relu(x, self.slope)
        out = sigmoid(x)
        return ad.reshape(out, ()) if out.values.ndim == 1 else ad.reshape(out, (out.shape[1],))


# ------------------------------------------------------------ checkpoints

_CKPT_MAGIC = b"SPIRECON-CKPT\x00\x01\x00"  # 16 bytes: name, NUL, version 1


def save_checkpoint(path, net: _FlatParams, seed: int = 0, iteration: int = 0) -> None:
    header = json.dumps({"arch": net.describe(), "digest": net.digest(), "seed": int(seed),
                         "iteration": int(iteration), "count": int(net.num_params)},
                        sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(net.theta.astype("<f8").tobytes())


def load_checkpoint(path, net: _FlatParams | None = None) -> tuple[dict, np.ndarray]:
    """Read a checkpoint; when ``net`` is given, verify its architecture
    digest and copy the parameters into it."""
    data = Path(path).read_bytes()
    if data[:16] != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<I", data[16:20])
    header = json.loads(data[20 : 20 + hlen])
    block = data[20 + hlen :]
    if len(block) != 8 * header["count"]:
        raise ValueError(f"{path}: expected {header['count']} parameters, "
                         f"found {len(block) / 8:g}")
    theta = np.frombuffer(block, dtype="<f8").astype(DTYPE)
    if net is not None:
        if header["digest"] != net.digest():
            raise ValueError(f"{path}: architecture digest mismatch")
        net.theta[:] = theta
    return header, theta
