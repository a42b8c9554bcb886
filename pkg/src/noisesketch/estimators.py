"""Voxel-wise variance of a reconstruction under k-space noise.

Four backends share one :class:`SketchPlan`:

* :func:`sketch_variance` averages ``|J A^H sigma v|^2`` over random probes.
* :func:`naive_variance` walks the rows of ``J`` with one VJP per voxel.
* :func:`brute_force_diag` materializes every column of ``J A^H sigma``.
* :func:`mc_variance` reconstructs noisy replicas and takes the sample variance.

Work is split into fixed-size chunks whose partial results are combined by a
pairwise tree in chunk order, so the output does not depend on ``threads``.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arrayio import save_array, write_sidecar
from .errors import ShapeMismatch, SizeLimit
from .encoding import ImagingOperator
from .models import ReconModel, linearize, reconstruct
from .noise import SampleCovariance, apply_factor, sample_noise_batch
from .probes import probe_columns

BRUTE_FORCE_LIMIT = 1024


@dataclass
class SketchPlan:
    """Everything needed to compute a variance map for one reconstruction.

    ``linearization`` defaults to the zero-filled image of ``measured``.
    ``clean`` is the noise-free k-space, used only by ``mc_variance`` in
    ``"clean"`` mode.
    """

    operator: ImagingOperator
    cov: SampleCovariance
    model: ReconModel
    measured: np.ndarray
    linearization: np.ndarray = None
    S: int = 1000
    seed: int = 0
    distribution: str = "random-phase"
    chunk: int = 50
    threads: int = 1
    clean: np.ndarray = None

    def __post_init__(self):
        if self.S < 1:
            raise ValueError("S must be at least 1")
        if self.measured.shape != self.operator.maps.shape:
            raise ShapeMismatch(
                f"measured k-space {self.measured.shape} vs {self.operator.maps.shape}"
            )
        if self.cov.shape != self.operator.shape or self.cov.n_coils != self.operator.n_coils:
            raise ShapeMismatch("noise covariance does not match the operator")
        if self.linearization is None:
            self.linearization = self.operator.adjoint(self.measured)
        elif self.linearization.shape != self.operator.shape:
            raise ShapeMismatch("linearization point must be an image")

    @property
    def shape(self):
        return self.operator.shape

    def describe(self):
        mask = self.operator.mask
        return {
            "model": self.model.kind,
            "steps": self.model.steps,
            "mask_scheme": mask.scheme,
            "mask_R_target": mask.acceleration,
            "mask_R_achieved": round(mask.achieved_acceleration, 6),
            "mask_seed": mask.seed,
            "coils": self.operator.n_coils,
            "alpha": self.cov.coil_cov.scale,
        }


@dataclass
class VarianceMap:
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        assert np.all(np.isfinite(values)), "variance map has non-finite entries"
        assert np.all(values >= 0), "variance map has negative entries"
        self.values = values

    @property
    def shape(self):
        return self.values.shape

    def save(self, stem):
        stem = Path(stem)
        save_array(stem, self.values)
        write_sidecar(stem.with_suffix(".txt"), self.meta)


def _chunks(total, size):
    return [range(a, min(a + size, total)) for a in range(0, total, size)]


def _run(fn, chunks, threads):
    if threads <= 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, chunks))


def _tree(parts, combine):
    """Fixed-order pairwise reduction."""
    parts = list(parts)
    while len(parts) > 1:
        paired = [combine(parts[i], parts[i + 1]) for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            paired.append(parts[-1])
        parts = paired
    return parts[0]


def _add(a, b):
    return a + b


def _finish(kind, plan, values, start, **extra):
    meta = {"estimator": kind, **extra, **plan.describe()}
    meta["wall_time_s"] = round(time.perf_counter() - start, 6)
    return VarianceMap(values, meta)


def sketch_variance(plan: SketchPlan) -> VarianceMap:
    """Average of ``|J A^H sigma v_s|^2`` over ``S`` probe columns.

    Unbiased for the linearized variance whenever the probes have zero mean
    and identity covariance.
    """
    start = time.perf_counter()
    lin = linearize(plan.model, plan.linearization)
    kshape = plan.operator.maps.shape

    def work(cols):
        v = probe_columns(kshape, cols, plan.distribution, plan.seed)
        w = plan.operator.adjoint(apply_factor(plan.cov, v))
        u = lin.jvp(w)
        return np.sum(np.abs(u) ** 2, axis=0)

    total = _tree(_run(work, _chunks(plan.S, plan.chunk), plan.threads), _add)
    return _finish("sketch", plan, total / plan.S, start, S=plan.S, seed=plan.seed,
                   distribution=plan.distribution)


def naive_variance(plan: SketchPlan) -> VarianceMap:
    """Exact linearized variance, one voxel at a time.

    For voxel ``i`` the rows ``J^T e_i`` and ``J^T (i e_i)`` (real and
    imaginary output parts) are pushed through ``A`` and ``sigma^H``; the
    variance is half the sum of their squared norms. For a complex-linear
    Jacobian both terms equal ``||l_i||^2``.
    """
    start = time.perf_counter()
    lin = linearize(plan.model, plan.linearization)
    rows, cols = plan.shape
    n = rows * cols

    def work(vox):
        vox = np.asarray(vox)
        basis = np.zeros((2, vox.size, n), dtype=np.complex128)
        basis[0, np.arange(vox.size), vox] = 1.0
        basis[1, np.arange(vox.size), vox] = 1j
        g = lin.vjp(basis.reshape(2, vox.size, rows, cols))
        l_rows = apply_factor(plan.cov, plan.operator.forward(g), adjoint=True)
        energy = np.sum(np.abs(l_rows) ** 2, axis=(-3, -2, -1))
        return 0.5 * (energy[0] + energy[1])

    parts = _run(work, _chunks(n, plan.chunk), plan.threads)
    return _finish("naive", plan, np.concatenate(parts).reshape(rows, cols), start)


def brute_force_diag(plan: SketchPlan) -> VarianceMap:
    """``diag(L L^T)`` from every column of ``L = J A^H sigma``.

    Columns at unsampled frequencies vanish identically and are skipped.

    Raises:
        SizeLimit: the image has more than ``BRUTE_FORCE_LIMIT`` voxels.
    """
    start = time.perf_counter()
    op = plan.operator
    if op.n > BRUTE_FORCE_LIMIT:
        raise SizeLimit(f"{op.n} voxels exceeds {BRUTE_FORCE_LIMIT}")
    lin = linearize(plan.model, plan.linearization)
    kshape = op.maps.shape
    sampled = np.flatnonzero(np.broadcast_to(op.mask.kept, kshape).ravel())

    def work(idx):
        idx = sampled[np.asarray(idx)]
        basis = np.zeros((2, idx.size, int(np.prod(kshape))), dtype=np.complex128)
        basis[0, np.arange(idx.size), idx] = 1.0
        basis[1, np.arange(idx.size), idx] = 1j
        w = op.adjoint(apply_factor(plan.cov, basis.reshape(2, idx.size, *kshape)))
        return 0.5 * np.sum(np.abs(lin.jvp(w)) ** 2, axis=(0, 1))

    parts = _run(work, _chunks(sampled.size, plan.chunk), plan.threads)
    return _finish("brute", plan, _tree(parts, _add), start)


def _moments(x):
    mean = x.mean(axis=0)
    return x.shape[0], mean, np.sum(np.abs(x - mean) ** 2, axis=0)


def _merge(a, b):
    na, ma, qa = a
    nb, mb, qb = b
    n = na + nb
    delta = mb - ma
    return n, ma + delta * (nb / n), qa + qb + np.abs(delta) ** 2 * (na * nb / n)


def mc_variance(plan: SketchPlan, N, mode="measured", streams=None) -> VarianceMap:
    """Monte-Carlo sample variance ``sum |x_t - mean|^2 / (N - 1)``.

    Trial ``t`` adds noise stream ``streams[t]`` (default ``t``) of
    ``plan.seed`` to the measured k-space (``mode="measured"``) or to the
    noise-free k-space (``mode="clean"``) and reconstructs from the
    zero-filled image.
    """
    start = time.perf_counter()
    if N < 2:
        raise ValueError("N must be at least 2")
    streams = list(range(N)) if streams is None else list(streams)
    if len(streams) != N:
        raise ValueError("need one stream per trial")
    if mode == "measured":
        base = plan.measured
    elif mode == "clean":
        if plan.clean is None:
            raise ValueError("clean mode needs plan.clean")
        base = plan.clean
    else:
        raise ValueError(f"unknown mode {mode!r}")
    op = plan.operator

    def work(trials):
        noise = sample_noise_batch(plan.cov, plan.seed, [streams[t] for t in trials])
        x = reconstruct(plan.model, op.adjoint(base + noise))
        return _moments(x)

    _, _, m2 = _tree(_run(work, _chunks(N, plan.chunk), plan.threads), _merge)
    return _finish("mc", plan, m2 / (N - 1), start, N=N, seed=plan.seed, mode=mode)
