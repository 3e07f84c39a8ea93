"""Simulated single-pixel acquisition: noise injection and bucket signals."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .patterns import PatternSet

NOISE_KINDS = ("none", "image_awgn", "bucket_awgn")


@dataclass
class BucketSignal:
    values: np.ndarray
    channel_index: int = 0
    wavelength: Optional[float] = None

    @property
    def m(self) -> int:
        return self.values.size

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()


@dataclass(frozen=True)
class NoiseModel:
    kind: str = "image_awgn"
    sigma: float = 0.05

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("noise sigma must be non-negative")


def measure(image: np.ndarray, patterns: PatternSet) -> BucketSignal:
    """Bucket values ``I_m = sum_uv H_m(u, v) O(u, v)``."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (patterns.n, patterns.n):
        raise ValueError(f"image shape {image.shape} does not match "
                         f"{patterns.n}x{patterns.n} patterns")
    return BucketSignal(patterns.matrix @ image.ravel())


def apply_noise(x: np.ndarray, model: NoiseModel, seed=0) -> np.ndarray:
    """Perturbed copy of ``x``.

    ``image_awgn`` adds N(0, sigma) per pixel and clamps to [0, 1];
    ``bucket_awgn`` adds N(0, sigma * rms(x)) per sample.
    """
    x = np.array(x, dtype=np.float64)
    if model.kind == "none" or model.sigma == 0:
        return x
    rng = np.random.default_rng(seed)
    if model.kind == "image_awgn":
        return np.clip(x + rng.normal(0.0, model.sigma, x.shape), 0.0, 1.0)
    rms = np.sqrt(np.mean(x * x))
    return x + rng.normal(0.0, model.sigma * rms, x.shape)


def acquire(image: np.ndarray, patterns: PatternSet, noise: NoiseModel, seed=0,
            channel_index: int = 0, wavelength: Optional[float] = None) -> BucketSignal:
    """Noise (in the configured domain) followed by measurement."""
    if noise.kind == "image_awgn":
        image = apply_noise(image, noise, seed)
    sig = measure(image, patterns)
    if noise.kind == "bucket_awgn":
        sig.values = apply_noise(sig.values, noise, seed)
    sig.channel_index = channel_index
    sig.wavelength = wavelength
    return sig


def acquire_cube(cube, patterns: PatternSet, noise: NoiseModel, seed: int = 0) -> list[BucketSignal]:
    """One bucket signal per channel; channel ``c`` uses noise seed ``seed + c``."""
    planes = cube.planes
    if planes.ndim != 3 or planes.shape[1:] != (patterns.n, patterns.n):
        raise ValueError(f"cube planes {planes.shape} inconsistent with "
                         f"{patterns.n}x{patterns.n} patterns")
    return [acquire(planes[c], patterns, noise, seed + c, c, float(cube.wavelengths[c]))
            for c in range(planes.shape[0])]


# ------------------------------------------------------------------ file I/O

_BIN_MAGIC = "SPIRECON-SIG"


def save_signal_text(path, sig: BucketSignal) -> None:
    wl = "none" if sig.wavelength is None else repr(float(sig.wavelength))
    lines = [f"# channel={sig.channel_index}", f"# wavelength={wl}", f"# m={sig.m}"]
    lines += [repr(float(v)) for v in sig.values]
    Path(path).write_text("\n".join(lines) + "\n")


def load_signal_text(path) -> BucketSignal:
    meta, values = {}, []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k.strip()] = v.strip()
        else:
            values.append(float(line))
    try:
        m = int(meta["m"])
        channel = int(meta["channel"])
    except (KeyError, ValueError) as exc:
        raise ValueError(f"{path}: malformed signal header") from exc
    if len(values) != m:
        raise ValueError(f"{path}: header says m={m}, found {len(values)} values")
    wl = meta.get("wavelength", "none")
    return BucketSignal(np.array(values), channel, None if wl == "none" else float(wl))


def save_signal_binary(path, sig: BucketSignal) -> None:
    """One JSON header line followed by a little-endian float64 block."""
    header = {"magic": _BIN_MAGIC, "version": 1, "channel": sig.channel_index,
              "wavelength": sig.wavelength, "m": sig.m}
    with open(path, "wb") as f:
        f.write((json.dumps(header, sort_keys=True) + "\n").encode())
        f.write(sig.values.astype("<f8").tobytes())


def load_signal_binary(path) -> BucketSignal:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    try:
        header = json.loads(data[:nl])
        if header.get("magic") != _BIN_MAGIC:
            raise ValueError
        m = int(header["m"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed binary signal header") from exc
    payload = data[nl + 1 :]
    if len(payload) != 8 * m:
        raise ValueError(f"{path}: expected {8 * m} payload bytes, got {len(payload)}")
    return BucketSignal(np.frombuffer(payload, dtype="<f8").astype(np.float64),
                        int(header["channel"]), header["wavelength"])


def load_signal(path) -> BucketSignal:
    """Dispatch on content: binary files start with a JSON header."""
    with open(path, "rb") as f:
        head = f.read(1)
    return load_signal_binary(path) if head == b"{" else load_signal_text(path)
