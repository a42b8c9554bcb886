"""Dense complex linear-algebra primitives.

Arrays are plain ``numpy`` ``complex128`` arrays in row-major order. The 2D
Fourier transform is the *centered unitary* DFT: the zero frequency sits at
index ``(rows // 2, cols // 2)`` and both the forward and inverse transform
carry a ``1/sqrt(rows * cols)`` factor, so the inverse is also the adjoint.
"""

import numpy as np

from .errors import NotPSD, ShapeMismatch


def as_complex(x):
    return np.asarray(x, dtype=np.complex128)


def is_hermitian(mat, atol=1e-12):
    mat = np.asarray(mat)
    return mat.ndim == 2 and mat.shape[0] == mat.shape[1] and np.allclose(
        mat, mat.conj().T, rtol=0.0, atol=atol
    )


def is_psd(mat, rtol=1e-10):
    """Hermitian check plus ``min eig >= -rtol * max eig``."""
    if not is_hermitian(mat):
        return False
    eig = np.linalg.eigvalsh(0.5 * (mat + mat.conj().T))
    return eig[0] >= -rtol * max(eig[-1], 0.0)


def default_jitter(mat):
    mat = np.asarray(mat)
    return 1e-12 * abs(np.trace(mat).real) / mat.shape[0]


def cholesky(mat, jitter=None):
    """Lower-triangular ``L`` with ``L @ L.conj().T ~= mat``.

    Pivots whose magnitude is at most ``jitter`` are treated as exact zeros,
    which makes rank-deficient PSD input (e.g. fully correlated coils) factor
    cleanly: the corresponding column of ``L`` is zero.

    Args:
        mat: Hermitian matrix, PSD up to ``-jitter`` on its pivots.
        jitter: pivot tolerance. Defaults to ``1e-12 * trace(mat) / dim``.

    Raises:
        ShapeMismatch: ``mat`` is not square.
        NotPSD: a pivot falls below ``-jitter``.
    """
    a = as_complex(mat)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f"cholesky needs a square matrix, got {a.shape}")
    if jitter is None:
        jitter = default_jitter(a)
    if jitter < 0:
        raise ValueError("jitter must be nonnegative")
    n = a.shape[0]
    low = np.zeros_like(a)
    for j in range(n):
        row = low[j, :j]
        pivot = a[j, j].real - np.vdot(row, row).real
        if pivot < -jitter:
            raise NotPSD(f"pivot {j} is {pivot:.3e} (tolerance {jitter:.3e})")
        if pivot <= jitter:
            continue
        d = np.sqrt(pivot)
        low[j, j] = d
        low[j + 1 :, j] = (a[j + 1 :, j] - low[j + 1 :, :j] @ row.conj()) / d
    return low


def _check_2d(x, name):
    x = as_complex(x)
    if x.ndim != 2:
        raise ShapeMismatch(f"{name} needs a 2D array, got shape {x.shape}")
    return x


def fft2c(x):
    """Centered unitary DFT over the last two axes (batched)."""
    axes = (-2, -1)
    return np.fft.fftshift(
        np.fft.fft2(np.fft.ifftshift(x, axes=axes), norm="ortho"), axes=axes
    )


def ifft2c(x):
    axes = (-2, -1)
    return np.fft.fftshift(
        np.fft.ifft2(np.fft.ifftshift(x, axes=axes), norm="ortho"), axes=axes
    )


def unitary_dft(img):
    return fft2c(_check_2d(img, "unitary_dft"))


def unitary_idft(ksp):
    return ifft2c(_check_2d(ksp, "unitary_idft"))


def inner(a, b):
    """Complex inner product ``sum(conj(a) * b)``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"inner: shapes {a.shape} and {b.shape} differ")
    return complex(np.vdot(a, b))


def real_inner(a, b):
    """Inner product of complex arrays viewed as real vectors of twice the length."""
    return inner(a, b).real
