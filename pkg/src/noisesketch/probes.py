"""Random probe vectors for diagonal sketching.

Entry ``(row, col)`` of a probe matrix is a pure function of
``(seed, col, row)``: it sits at position ``col * m + row`` of the probe
counter stream for ``seed``. Any block of columns can be generated on its
own, and a contiguous block costs a single generator call.
"""

from dataclasses import dataclass

import numpy as np

from . import _rng
from .errors import ShapeMismatch

DISTRIBUTIONS = ("random-phase", "complex-gaussian")
FOURTH_MOMENT = {"random-phase": 1.0, "complex-gaussian": 2.0}


def probe_columns(shape, cols, distribution="random-phase", seed=0):
    """Probe columns ``cols`` reshaped to ``shape``; returns ``(len(cols), *shape)``."""
    if distribution not in DISTRIBUTIONS:
        raise ValueError(f"unknown distribution {distribution!r}")
    draw = _rng.random_phase if distribution == "random-phase" else _rng.complex_normal
    stream = _rng.stream_id(_rng.PROBE)
    count = int(np.prod(shape))
    cols = list(cols)
    if cols and cols == list(range(cols[0], cols[0] + len(cols))):
        out = draw(seed, stream, cols[0] * count, len(cols) * count)
    else:
        out = np.concatenate([draw(seed, stream, c * count, count) for c in cols] or
                             [np.empty(0, dtype=np.complex128)])
    return out.reshape(len(cols), *shape)


@dataclass(frozen=True)
class ProbeMatrix:
    data: np.ndarray
    distribution: str
    seed: int

    @property
    def m(self):
        return self.data.shape[0]

    @property
    def S(self):
        return self.data.shape[1]


def gen_probes(m, S, distribution="random-phase", seed=0) -> ProbeMatrix:
    """``m x S`` matrix of i.i.d. zero-mean, unit-variance complex entries.

    ``random-phase`` entries are ``exp(i theta)`` with ``theta ~ U[0, 2 pi)``;
    ``complex-gaussian`` entries have independent N(0, 1/2) real and
    imaginary parts.
    """
    if m < 1 or S < 1:
        raise ValueError("m and S must be positive")
    cols = probe_columns((m,), range(S), distribution, seed)
    return ProbeMatrix(np.ascontiguousarray(cols.T), distribution, seed)


def estimator_variance_closed_form(sigma, distribution="random-phase"):
    """Variance of the single-probe estimate ``(sigma v)_i conj(v_i)`` of ``sigma_ii``.

    Gaussian probes give ``sum_j |sigma_ij|^2``; random-phase probes remove
    the diagonal term, ``sum_j |sigma_ij|^2 - |sigma_ii|^2``.
    """
    sigma = np.asarray(sigma)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ShapeMismatch(f"expected a square matrix, got {sigma.shape}")
    if distribution not in DISTRIBUTIONS:
        raise ValueError(f"unknown distribution {distribution!r}")
    row_energy = np.sum(np.abs(sigma) ** 2, axis=1)
    diag = np.abs(np.diag(sigma)) ** 2
    return row_energy + (FOURTH_MOMENT[distribution] - 2.0) * diag
