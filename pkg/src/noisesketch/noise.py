"""Correlated multi-coil k-space noise.

Noise is independent across k-space locations and correlated across coils
with a single ``n_coils x n_coils`` covariance. The full block-diagonal
covariance ``I_{n_f} (x) coil_cov`` is never formed; every operation works
frequency by frequency with the coil-level Cholesky factor.
"""

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _rng
from .arrayio import load_array, read_sidecar, save_array, write_sidecar
from .core import as_complex, cholesky, default_jitter
from .errors import ShapeMismatch, TooFewSamples


@dataclass(frozen=True)
class NoiseSourceModel:
    """Independent Gaussian sources coupled into coils by ``weights``.

    ``weights[c, t]`` is the coupling of source ``t`` into coil ``c``; the
    source standard deviations are ``sigmas``.
    """

    sigmas: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        sigmas = np.asarray(self.sigmas, dtype=float).reshape(-1)
        weights = as_complex(self.weights)
        if weights.ndim != 2 or weights.shape[1] != sigmas.size or sigmas.size == 0:
            raise ShapeMismatch(
                f"weights {weights.shape} do not match {sigmas.size} sources"
            )
        if np.any(sigmas < 0):
            raise ValueError("source sigmas must be nonnegative")
        object.__setattr__(self, "sigmas", sigmas)
        object.__setattr__(self, "weights", weights)

    @property
    def n_coils(self):
        return self.weights.shape[0]

    @property
    def n_sources(self):
        return self.sigmas.size

    @classmethod
    def random(cls, n_coils, n_sources=None, seed=0, sigma=1.0, coupling=0.3):
        """Each coil gets a private source plus ``coupling``-scaled shared ones."""
        n_sources = 2 * n_coils if n_sources is None else n_sources
        stream = _rng.stream_id(_rng.SOURCES)
        mix = _rng.complex_normal(seed, stream, 0, n_coils * n_sources)
        weights = coupling * mix.reshape(n_coils, n_sources)
        k = min(n_coils, n_sources)
        weights[np.arange(k), np.arange(k)] += 1.0
        spread = _rng.uniforms(seed, stream, 2 * n_coils * n_sources, n_sources)
        return cls(sigma * (0.5 + spread), weights)


@dataclass(frozen=True)
class CoilCovariance:
    """Coil covariance ``matrix`` with its Cholesky ``factor``.

    ``scale`` multiplies the covariance; the effective factor is
    ``sqrt(scale) * factor`` so rescaling never refactorizes.
    """

    matrix: np.ndarray
    factor: np.ndarray
    scale: float = 1.0
    provenance: dict = field(default_factory=dict)

    @property
    def n_coils(self):
        return self.matrix.shape[0]

    @property
    def effective_matrix(self):
        return self.scale * self.matrix

    @property
    def effective_factor(self):
        return np.sqrt(self.scale) * self.factor

    def scaled(self, alpha):
        if alpha <= 0:
            raise ValueError("noise scale must be positive")
        return replace(self, scale=float(alpha))

    @classmethod
    def from_matrix(cls, matrix, jitter=None, **provenance):
        matrix = as_complex(matrix)
        matrix = 0.5 * (matrix + matrix.conj().T)
        return cls(matrix, cholesky(matrix, jitter), 1.0, dict(provenance))

    @classmethod
    def identity(cls, n_coils):
        eye = np.eye(n_coils, dtype=np.complex128)
        return cls(eye, eye.copy(), 1.0, {"source": "identity"})

    def save(self, stem):
        stem = Path(stem)
        save_array(stem, self.matrix)
        fields = {"scale": float(self.scale)}
        fields.update(self.provenance)
        write_sidecar(stem.with_suffix(".txt"), fields)

    @classmethod
    def load(cls, stem):
        stem = Path(stem)
        fields = read_sidecar(stem.with_suffix(".txt"))
        scale = float(fields.pop("scale", 1.0))
        return cls.from_matrix(load_array(stem), **fields).scaled(scale)


@dataclass(frozen=True)
class SampleCovariance:
    """Block-diagonal k-space covariance over a ``shape`` grid of frequencies."""

    coil_cov: CoilCovariance
    shape: tuple

    @property
    def n_coils(self):
        return self.coil_cov.n_coils

    @property
    def n_freqs(self):
        return int(np.prod(self.shape))

    @property
    def m(self):
        return self.n_freqs * self.n_coils

    def materialize(self):
        """Dense ``m x m`` matrix, frequency-major; for tests on tiny grids only."""
        return np.kron(np.eye(self.n_freqs), self.coil_cov.effective_matrix)


def build_coil_covariance(src: NoiseSourceModel) -> CoilCovariance:
    w = src.weights
    matrix = (w * src.sigmas**2) @ w.conj().T
    return CoilCovariance.from_matrix(matrix, source="source-model")


def outer_region(shape, fraction):
    """Boolean grid of the ``fraction`` of points farthest from the center.

    Distance is Chebyshev (``max(|dy|, |dx|)``) from ``(rows//2, cols//2)``;
    ties are broken by Euclidean distance, then by flat index.
    """
    rows, cols = shape
    yy, xx = np.meshgrid(
        np.arange(rows) - rows // 2, np.arange(cols) - cols // 2, indexing="ij"
    )
    cheb = np.maximum(np.abs(yy), np.abs(xx)).ravel()
    eucl = np.hypot(yy, xx).ravel()
    count = int(round(fraction * rows * cols))
    order = np.lexsort((np.arange(cheb.size), -eucl, -cheb))
    region = np.zeros(rows * cols, dtype=bool)
    region[order[:count]] = True
    return region.reshape(shape)


def estimate_coil_covariance(ksp, corner_fraction=0.05, mask=None, jitter=None):
    """Sample coil covariance from the outer k-space corners.

    Args:
        ksp: ``(n_coils, rows, cols)`` k-space, ideally fully sampled.
        corner_fraction: share of the grid used, by distance from center.
        mask: optional boolean ``(rows, cols)`` grid; only kept points are used.

    Raises:
        TooFewSamples: fewer than ``2 * n_coils`` points are selected.
    """
    ksp = as_complex(ksp)
    if ksp.ndim != 3:
        raise ShapeMismatch(f"expected (coils, rows, cols) k-space, got {ksp.shape}")
    if not 0.0 < corner_fraction < 1.0:
        raise ValueError("corner_fraction must lie in (0, 1)")
    n_coils = ksp.shape[0]
    region = outer_region(ksp.shape[1:], corner_fraction)
    if mask is not None:
        if np.shape(mask) != ksp.shape[1:]:
            raise ShapeMismatch("mask does not match the k-space grid")
        region &= np.asarray(mask, dtype=bool)
    z = ksp[:, region]
    count = z.shape[1]
    if count < 2 * n_coils:
        raise TooFewSamples(f"{count} samples for {n_coils} coils")
    # Noise is zero mean, so no sample mean is removed.
    matrix = z @ z.conj().T / (count - 1)
    matrix = 0.5 * (matrix + matrix.conj().T)
    if jitter is None:
        jitter = max(default_jitter(matrix), 0.0)
    return CoilCovariance.from_matrix(
        matrix,
        jitter,
        source="estimated",
        corner_fraction=float(corner_fraction),
        grid=f"{ksp.shape[1]}x{ksp.shape[2]}",
        samples=count,
    )


def _coil_first(cov, v):
    shape = (cov.n_coils, *cov.shape)
    if v.shape[-3:] != shape:
        raise ShapeMismatch(f"expected trailing shape {shape}, got {v.shape}")


def apply_factor(cov: SampleCovariance, v, adjoint=False):
    """Multiply by the block-diagonal Cholesky factor (or its adjoint).

    ``v`` is either a flat vector of length ``m`` in frequency-major order
    (coil index fastest, matching ``I (x) factor``) or an array whose
    trailing axes are ``(n_coils, rows, cols)``.
    """
    v = as_complex(v)
    low = cov.coil_cov.effective_factor
    if adjoint:
        low = low.conj().T
    if v.ndim == 1:
        if v.size != cov.m:
            raise ShapeMismatch(f"expected length {cov.m}, got {v.size}")
        return (v.reshape(cov.n_freqs, cov.n_coils) @ low.T).reshape(-1)
    _coil_first(cov, v)
    return np.einsum("ij,...jyx->...iyx", low, v)


def sample_noise(cov: SampleCovariance, rng_seed, stream=0, domain=_rng.NOISE):
    """One noise realization, shape ``(n_coils, rows, cols)``.

    Frequency ``f`` (row-major over the grid) draws its coil vector from
    positions ``f * n_coils ... (f + 1) * n_coils - 1`` of counter stream
    ``stream`` in ``domain``, so any subset of frequencies can be generated
    independently. Replicas use the default domain; the simulated
    acquisition uses its own.
    """
    n_coils = cov.n_coils
    g = _rng.complex_normal(
        rng_seed, _rng.stream_id(domain, stream), 0, cov.n_freqs * n_coils
    )
    g = g.reshape(*cov.shape, n_coils)
    return np.einsum("ij,yxj->iyx", cov.coil_cov.effective_factor, g)


def sample_noise_batch(cov: SampleCovariance, rng_seed, streams):
    return np.stack([sample_noise(cov, rng_seed, s) for s in streams])
