import numpy as np
import pytest

from noisesketch.encoding import ImagingOperator, make_birdcage_maps, make_mask
from noisesketch.noise import CoilCovariance, SampleCovariance


def random_hpsd(rng, dim, rank=None):
    rank = dim if rank is None else rank
    b = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    return b @ b.conj().T


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def dft_matrix(n):
    """Centered unitary 1D DFT, written out entry by entry."""
    c = n // 2
    k = np.arange(n)[:, None] - c
    p = np.arange(n)[None, :] - c
    return np.exp(-2j * np.pi * k * p / n) / np.sqrt(n)


def small_setup(rows=12, cols=12, n_coils=2, R=2.0, scheme="uniform-random-2d", seed=0,
                cov_seed=5):
    maps = make_birdcage_maps(n_coils, rows, cols)
    mask = make_mask(scheme, (rows, cols), R, seed)
    op = ImagingOperator(maps, mask)
    rng = np.random.default_rng(cov_seed)
    coil = CoilCovariance.from_matrix(random_hpsd(rng, n_coils) / n_coils + 0.2 * np.eye(n_coils))
    return op, SampleCovariance(coil, (rows, cols))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
