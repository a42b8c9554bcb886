"""Synthetic complex test images with unit peak magnitude."""

from dataclasses import dataclass

import numpy as np

from . import _rng
from .core import ifft2c

KINDS = ("ellipse-phantom", "smooth-random", "point-grid")

# (intensity, semi-axis a, semi-axis b, center x, center y, angle in degrees)
_ELLIPSES = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
)


@dataclass(frozen=True)
class Phantom:
    image: np.ndarray
    kind: str
    seed: int = 0

    @property
    def shape(self):
        return self.image.shape


def _normalized(img):
    return img / np.max(np.abs(img))


def _ellipses(rows, cols):
    yy, xx = np.meshgrid(
        np.linspace(-1, 1, rows), np.linspace(-1, 1, cols), indexing="ij"
    )
    img = np.zeros((rows, cols))
    for rho, a, b, x0, y0, deg in _ELLIPSES:
        t = np.deg2rad(deg)
        xr = (xx - x0) * np.cos(t) + (yy - y0) * np.sin(t)
        yr = -(xx - x0) * np.sin(t) + (yy - y0) * np.cos(t)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += rho
    phase = np.exp(1j * np.pi * (0.4 * xx + 0.25 * yy + 0.2 * xx * yy))
    return img * phase


def _smooth_random(rows, cols, seed):
    """Gaussian-weighted random spectrum confined to the central half band."""
    ky, kx = np.meshgrid(
        np.arange(rows) - rows // 2, np.arange(cols) - cols // 2, indexing="ij"
    )
    spectrum = _rng.complex_normal(seed, _rng.stream_id(_rng.PHANTOM), 0, rows * cols)
    spectrum = spectrum.reshape(rows, cols)
    width = 0.06 * np.array([rows, cols], dtype=float)
    envelope = np.exp(-0.5 * ((ky / width[0]) ** 2 + (kx / width[1]) ** 2))
    envelope[(np.abs(ky) > rows // 4) | (np.abs(kx) > cols // 4)] = 0.0
    return ifft2c(spectrum * envelope)


def _point_grid(rows, cols, spacing):
    img = np.zeros((rows, cols), dtype=np.complex128)
    img[spacing // 2 :: spacing, spacing // 2 :: spacing] = 1.0
    return img


def make_phantom(kind, rows, cols, seed=0, spacing=8) -> Phantom:
    """Deterministic synthetic image of peak magnitude 1.

    ``ellipse-phantom`` ignores ``seed``; ``point-grid`` places unit impulses
    every ``spacing`` pixels.
    """
    if rows < 8 or cols < 8:
        raise ValueError("phantoms need at least 8x8 pixels")
    if kind == "ellipse-phantom":
        img = _ellipses(rows, cols)
    elif kind == "smooth-random":
        img = _smooth_random(rows, cols, seed)
    elif kind == "point-grid":
        img = _point_grid(rows, cols, spacing)
    else:
        raise ValueError(f"unknown phantom kind {kind!r}; expected one of {KINDS}")
    return Phantom(_normalized(img).astype(np.complex128), kind, seed)
