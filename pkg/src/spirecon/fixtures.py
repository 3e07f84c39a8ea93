"""Built-in binary test scenes."""

from __future__ import annotations

import numpy as np


def four_slit(n: int = 64, width: int = 5, length: int = 30, gap: int = 6,
              orientation: str = "horizontal") -> np.ndarray:
    """Four identical bright slits on a dark background, centred.

    ``horizontal`` slits run along image rows (their narrow dimension is
    vertical); ``vertical`` is the transpose.
    """
    span = 4 * width + 3 * gap
    if span > n or length > n:
        raise ValueError(f"slit target does not fit in {n}x{n}")
    img = np.zeros((n, n))
    r0 = (n - span) // 2
    c0 = (n - length) // 2
    for i in range(4):
        r = r0 + i * (width + gap)
        img[r : r + width, c0 : c0 + length] = 1.0
    if orientation == "vertical":
        return img.T.copy()
    if orientation != "horizontal":
        raise ValueError(f"unknown orientation {orientation!r}")
    return img


def cross(n: int = 8, thickness: int = 2) -> np.ndarray:
    """Centred plus sign."""
    img = np.zeros((n, n))
    lo = (n - thickness) // 2
    img[lo : lo + thickness, 1 : n - 1] = 1.0
    img[1 : n - 1, lo : lo + thickness] = 1.0
    return img


def two_level(n: int = 64, margin: int | None = None) -> np.ndarray:
    """Centred bright square (object) on zero background."""
    margin = n // 4 if margin is None else margin
    img = np.zeros((n, n))
    img[margin : n - margin, margin : n - margin] = 1.0
    return img


FIXTURES = {"four_slit": four_slit, "cross": cross, "two_level": two_level}


def get(name: str, n: int | None = None) -> np.ndarray:
    try:
        fn = FIXTURES[name]
    except KeyError:
        raise ValueError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}") from None
    return fn() if n is None else fn(n)
