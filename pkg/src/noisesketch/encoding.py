"""Multi-coil Cartesian encoding: sampling masks, coil maps and the operator.

k-space arrays live on the full centered grid (zero frequency at
``(rows // 2, cols // 2)``); unsampled locations hold explicit zeros and the
mask is applied inside the operator.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _rng
from .arrayio import load_array, read_sidecar, save_array, write_sidecar
from .core import as_complex, fft2c, ifft2c
from .errors import InfeasibleSpec, ShapeMismatch

SCHEMES = ("uniform-1d", "random-1d", "uniform-random-2d", "poisson-disc-2d")
DEFAULT_CALIB_FRACTION = 0.06


@dataclass(frozen=True)
class SamplingMask:
    kept: np.ndarray
    scheme: str
    acceleration: float
    calib: int = 0
    seed: int = 0
    radius: float = 0.0

    @property
    def shape(self):
        return self.kept.shape

    @property
    def n_kept(self):
        return int(self.kept.sum())

    @property
    def achieved_acceleration(self):
        return self.kept.size / self.n_kept

    def apply(self, ksp):
        return ksp * self.kept

    def save(self, stem):
        stem = Path(stem)
        save_array(stem, self.kept)
        write_sidecar(
            stem.with_suffix(".txt"),
            {
                "scheme": self.scheme,
                "acceleration_target": float(self.acceleration),
                "acceleration_achieved": float(self.achieved_acceleration),
                "calib": self.calib,
                "seed": self.seed,
                "radius": float(self.radius),
            },
        )

    @classmethod
    def load(cls, stem):
        stem = Path(stem)
        meta = read_sidecar(stem.with_suffix(".txt"))
        return cls(
            load_array(stem),
            meta["scheme"],
            float(meta["acceleration_target"]),
            int(meta["calib"]),
            int(meta["seed"]),
            float(meta.get("radius", 0.0)),
        )


def _default_calib(scheme, rows, cols):
    if scheme in ("uniform-random-2d", "poisson-disc-2d"):
        return max(1, int(round(DEFAULT_CALIB_FRACTION * min(rows, cols))))
    return 0


def _center_slice(n, width):
    start = n // 2 - width // 2
    return slice(start, start + width)


def _permutation(n, seed, scheme):
    keys = _rng.uniforms(seed, _rng.stream_id(_rng.MASK, SCHEMES.index(scheme)), 0, n)
    return np.argsort(keys, kind="stable")


def _poisson_disc(candidates, shape, radius, limit=None):
    """Greedy dart throwing over ``candidates`` (flat indices, in order)."""
    rows, cols = shape
    reach = int(np.ceil(radius))
    off = np.arange(-reach, reach + 1)
    disk = np.hypot(off[:, None], off[None, :]) < radius
    occ = np.zeros((rows + 2 * reach, cols + 2 * reach), dtype=bool)
    width = 2 * reach + 1
    accepted = []
    for flat in candidates:
        i, j = divmod(int(flat), cols)
        if np.any(occ[i : i + width, j : j + width] & disk):
            continue
        occ[i + reach, j + reach] = True
        accepted.append(flat)
        if limit is not None and len(accepted) >= limit:
            break
    return np.asarray(accepted, dtype=int)


def make_mask(scheme, shape, acceleration, seed=0, calib=None):
    """Build a deterministic sampling mask.

    Args:
        scheme: one of ``SCHEMES``. 1D schemes keep whole columns.
        shape: ``(rows, cols)``, each at least 8.
        acceleration: target ratio of grid size to kept samples, ``>= 1``.
        calib: width of the fully sampled center (columns for 1D schemes,
            square side for 2D). ``None`` picks the scheme default.

    Raises:
        InfeasibleSpec: the target cannot be met within 10% on this grid.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    rows, cols = shape
    if rows < 8 or cols < 8:
        raise InfeasibleSpec(f"grid {shape} is smaller than 8x8")
    if acceleration < 1:
        raise InfeasibleSpec("acceleration must be at least 1")
    calib = _default_calib(scheme, rows, cols) if calib is None else int(calib)
    kept = np.zeros(shape, dtype=bool)
    if acceleration == 1:
        return SamplingMask(np.ones(shape, dtype=bool), scheme, 1.0, calib, seed)

    radius = 0.0
    if scheme.endswith("1d"):
        target = int(round(cols / acceleration))
        kept_cols = np.zeros(cols, dtype=bool)
        kept_cols[_center_slice(cols, calib)] = True
        need = target - int(kept_cols.sum())
        if target < 1 or need < 0:
            raise InfeasibleSpec(f"R={acceleration} leaves {target} columns")
        free = np.flatnonzero(~kept_cols)
        if need:
            if scheme == "uniform-1d":
                pick = free[np.floor(np.arange(need) * free.size / need).astype(int)]
            else:
                pick = free[np.sort(_permutation(free.size, seed, scheme)[:need])]
            kept_cols[pick] = True
        kept[:, kept_cols] = True
    else:
        target = int(round(rows * cols / acceleration))
        kept[_center_slice(rows, calib), _center_slice(cols, calib)] = True
        need = target - int(kept.sum())
        if target < 1 or need < 0:
            raise InfeasibleSpec(f"R={acceleration} leaves {target} samples")
        free = np.flatnonzero(~kept.ravel())
        order = free[_permutation(free.size, seed, scheme)]
        if scheme == "uniform-random-2d":
            kept.flat[order[:need]] = True
        elif need:
            radius, pick = _fit_radius(order, shape, need)
            kept.flat[pick] = True

    mask = SamplingMask(kept, scheme, float(acceleration), calib, seed, radius)
    if abs(mask.achieved_acceleration - acceleration) > 0.1 * acceleration:
        raise InfeasibleSpec(
            f"achieved R={mask.achieved_acceleration:.3f} misses target {acceleration}"
        )
    return mask


def _fit_radius(order, shape, need):
    """Largest exclusion radius whose dart throwing still yields ``need`` points.

    Grid distances are discrete, so the count jumps; the first ``need``
    accepted points are kept, which preserves the minimum distance.
    """
    lo, hi = 0.5, float(max(shape))
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if _poisson_disc(order, shape, mid, limit=need).size >= need:
            lo = mid
        else:
            hi = mid
    return lo, _poisson_disc(order, shape, lo, limit=need)


def make_birdcage_maps(n_coils, rows, cols, radius=1.5):
    """Analytic ring-of-coils sensitivities, normalized to unit root-sum-of-squares.

    Coil ``c`` sits at angle ``2*pi*c/n_coils`` on a circle of ``radius``
    (in units of the half field of view).
    """
    if n_coils < 1:
        raise ValueError("n_coils must be positive")
    yy, xx = np.meshgrid(
        (np.arange(rows) - rows / 2) / (rows / 2),
        (np.arange(cols) - cols / 2) / (cols / 2),
        indexing="ij",
    )
    angles = 2 * np.pi * np.arange(n_coils) / n_coils
    dx = xx[None] - radius * np.cos(angles)[:, None, None]
    dy = yy[None] - radius * np.sin(angles)[:, None, None]
    phase = np.arctan2(dy, dx) - angles[:, None, None]
    maps = np.exp(1j * phase) / np.hypot(dx, dy)
    rss = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return maps / rss


@dataclass(frozen=True)
class ImagingOperator:
    """``A = mask * F * maps``; images ``(rows, cols)`` to k-space ``(coils, rows, cols)``.

    Both directions accept arbitrary leading batch axes.
    """

    maps: np.ndarray
    mask: SamplingMask

    def __post_init__(self):
        maps = as_complex(self.maps)
        if maps.ndim != 3 or maps.shape[1:] != self.mask.shape:
            raise ShapeMismatch(
                f"maps {maps.shape} do not match mask {self.mask.shape}"
            )
        object.__setattr__(self, "maps", maps)

    @property
    def shape(self):
        return self.mask.shape

    @property
    def n_coils(self):
        return self.maps.shape[0]

    @property
    def n(self):
        return self.mask.kept.size

    @property
    def m(self):
        return self.n * self.n_coils

    def forward(self, x):
        x = as_complex(x)
        if x.shape[-2:] != self.shape:
            raise ShapeMismatch(f"image shape {x.shape} vs grid {self.shape}")
        return fft2c(self.maps * x[..., None, :, :]) * self.mask.kept

    def adjoint(self, y):
        y = as_complex(y)
        if y.shape[-3:] != self.maps.shape:
            raise ShapeMismatch(f"k-space shape {y.shape} vs {self.maps.shape}")
        return np.sum(self.maps.conj() * ifft2c(y * self.mask.kept), axis=-3)

    def normal(self, x):
        return self.adjoint(self.forward(x))

    def materialize(self):
        """Dense ``m x n`` matrix (coil-major rows); tiny grids only."""
        eye = np.eye(self.n, dtype=np.complex128).reshape(self.n, *self.shape)
        return self.forward(eye).reshape(self.n, self.m).T


def forward(op: ImagingOperator, x):
    return op.forward(x)


def adjoint(op: ImagingOperator, y):
    return op.adjoint(y)
