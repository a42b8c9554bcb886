import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from noisesketch.core import inner, unitary_dft, unitary_idft
from noisesketch.encoding import (
    SCHEMES,
    ImagingOperator,
    SamplingMask,
    adjoint,
    forward,
    make_birdcage_maps,
    make_mask,
)
from noisesketch.errors import InfeasibleSpec, ShapeMismatch

from conftest import crandn, dft_matrix


def unit_operator(rows=8, cols=8):
    return ImagingOperator(np.ones((1, rows, cols), dtype=complex),
                           make_mask("uniform-1d", (rows, cols), 1))


class TestMasks:
    def test_uniform_1d_every_second_column(self):
        mask = make_mask("uniform-1d", (16, 16), 2)
        cols = np.flatnonzero(mask.kept[0])
        np.testing.assert_array_equal(cols, np.arange(0, 16, 2))
        assert np.all(mask.kept == mask.kept[0])

    @pytest.mark.parametrize("scheme", SCHEMES)
    def test_r1_is_full(self, scheme):
        assert make_mask(scheme, (12, 10), 1, seed=4).kept.all()

    def test_poisson_disc_64_r8_seed7(self):
        mask = make_mask("poisson-disc-2d", (64, 64), 8, seed=7)
        assert 461 <= mask.n_kept <= 563
        calib = np.zeros((64, 64), dtype=bool)
        c = mask.calib
        calib[32 - c // 2 : 32 - c // 2 + c, 32 - c // 2 : 32 - c // 2 + c] = True
        assert mask.kept[calib].all()
        pts = np.argwhere(mask.kept & ~calib).astype(float)
        d = np.hypot(*(pts[:, None, :] - pts[None, :, :]).transpose(2, 0, 1))
        d[np.diag_indices_from(d)] = np.inf
        assert d.min() >= mask.radius > 1.0

    @pytest.mark.parametrize("scheme", SCHEMES)
    @pytest.mark.parametrize("R", [4, 8, 16])
    @pytest.mark.parametrize("shape", [(16, 16), (32, 32)])
    def test_achieved_acceleration(self, scheme, R, shape):
        try:
            mask = make_mask(scheme, shape, R, seed=3)
        except InfeasibleSpec:
            assert shape == (16, 16) and R == 16
            return
        assert abs(mask.achieved_acceleration - R) <= 0.1 * R

    @pytest.mark.parametrize("scheme", SCHEMES)
    def test_deterministic_per_seed(self, scheme):
        a = make_mask(scheme, (32, 32), 4, seed=9)
        b = make_mask(scheme, (32, 32), 4, seed=9)
        np.testing.assert_array_equal(a.kept, b.kept)
        if scheme != "uniform-1d":
            assert not np.array_equal(a.kept, make_mask(scheme, (32, 32), 4, seed=10).kept)

    def test_calibration_kept(self):
        mask = make_mask("random-1d", (16, 32), 4, seed=1, calib=4)
        assert mask.kept[:, 14:18].all()

    def test_infeasible(self):
        with pytest.raises(InfeasibleSpec):
            make_mask("uniform-1d", (16, 16), 4, calib=10)
        with pytest.raises(InfeasibleSpec):
            make_mask("poisson-disc-2d", (8, 8), 100)
        with pytest.raises(InfeasibleSpec):
            make_mask("uniform-random-2d", (4, 16), 2)

    def test_idempotent(self, rng):
        mask = make_mask("uniform-random-2d", (16, 16), 4, seed=2)
        k = crandn(rng, 3, 16, 16)
        np.testing.assert_array_equal(mask.apply(mask.apply(k)), mask.apply(k))

    def test_save_load(self, tmp_path):
        mask = make_mask("poisson-disc-2d", (32, 32), 8, seed=5)
        mask.save(tmp_path / "mask")
        back = SamplingMask.load(tmp_path / "mask")
        np.testing.assert_array_equal(back.kept, mask.kept)
        assert (back.scheme, back.acceleration, back.seed) == ("poisson-disc-2d", 8.0, 5)
        assert "acceleration_achieved: 8.0" in (tmp_path / "mask.txt").read_text()


class TestCoilMaps:
    def test_single_coil_unit_magnitude(self):
        np.testing.assert_allclose(np.abs(make_birdcage_maps(1, 16, 16)), 1.0, atol=1e-12)

    def test_root_sum_of_squares(self):
        maps = make_birdcage_maps(4, 32, 32)
        np.testing.assert_allclose(np.sum(np.abs(maps) ** 2, axis=0), 1.0, atol=1e-12)

    def test_peaks_in_assigned_sector(self):
        n = 8
        maps = make_birdcage_maps(n, 64, 64)
        for c in range(n):
            i, j = np.unravel_index(np.argmax(np.abs(maps[c])), (64, 64))
            angle = np.arctan2(i - 32, j - 32)
            diff = np.angle(np.exp(1j * (angle - 2 * np.pi * c / n)))
            assert abs(diff) <= np.pi / n

    def test_smooth(self):
        maps = make_birdcage_maps(4, 32, 32)
        assert np.max(np.abs(np.diff(maps, axis=-1))) < 0.2


class TestOperator:
    def test_zero(self):
        op = ImagingOperator(make_birdcage_maps(2, 8, 8), make_mask("uniform-1d", (8, 8), 2))
        np.testing.assert_array_equal(op.forward(np.zeros((8, 8))), 0)
        np.testing.assert_array_equal(op.adjoint(np.zeros((2, 8, 8))), 0)

    def test_reduces_to_dft(self, rng):
        op = unit_operator()
        x = crandn(rng, 8, 8)
        np.testing.assert_allclose(forward(op, x)[0], unitary_dft(x), atol=1e-14)
        np.testing.assert_allclose(adjoint(op, forward(op, x)), x, atol=1e-12)
        np.testing.assert_allclose(op.adjoint(x[None]), unitary_idft(x), atol=1e-14)

    def test_materialized_matrix_seed11(self):
        maps = make_birdcage_maps(4, 12, 12)
        op = ImagingOperator(maps, make_mask("uniform-random-2d", (12, 12), 4, seed=1))
        x = crandn(np.random.default_rng(11), 12, 12)
        # Independent build: mask * DFT-matrix * diag(map) per coil.
        f = np.kron(dft_matrix(12), dft_matrix(12))
        rows = [np.diag(op.mask.kept.ravel().astype(float)) @ f @ np.diag(maps[c].ravel())
                for c in range(4)]
        big = np.vstack(rows)
        np.testing.assert_allclose(op.forward(x).ravel(), big @ x.ravel(), atol=1e-12)
        np.testing.assert_allclose(op.materialize(), big, atol=1e-12)
        y = crandn(np.random.default_rng(12), 4, 12, 12)
        np.testing.assert_allclose(op.adjoint(y).ravel(), big.conj().T @ y.ravel(), atol=1e-12)

    def test_adjoint_seed13(self):
        rng = np.random.default_rng(13)
        op = ImagingOperator(make_birdcage_maps(2, 8, 8), make_mask("uniform-random-2d", (8, 8), 2, seed=13))
        for _ in range(20):
            x, y = crandn(rng, 8, 8), crandn(rng, 2, 8, 8)
            gap = abs(inner(op.forward(x), y) - inner(x, op.adjoint(y)))
            assert gap <= 1e-11 * np.linalg.norm(x) * np.linalg.norm(y)

    @pytest.mark.parametrize("scheme", SCHEMES)
    @pytest.mark.parametrize("n_coils", [1, 2, 4, 8])
    @pytest.mark.parametrize("size", [16, 32])
    def test_adjoint_identity_all_configurations(self, scheme, n_coils, size):
        rng = np.random.default_rng(size * 100 + n_coils)
        op = ImagingOperator(make_birdcage_maps(n_coils, size, size),
                             make_mask(scheme, (size, size), 4, seed=n_coils))
        x, y = crandn(rng, 100, size, size), crandn(rng, 100, n_coils, size, size)
        lhs = np.sum(np.conj(op.forward(x)) * y, axis=(-3, -2, -1))
        rhs = np.sum(np.conj(x) * op.adjoint(y), axis=(-2, -1))
        scale = np.linalg.norm(x.reshape(100, -1), axis=1) * np.linalg.norm(y.reshape(100, -1), axis=1)
        assert np.all(np.abs(lhs - rhs) <= 1e-11 * scale)

    def test_batched(self, rng):
        op = ImagingOperator(make_birdcage_maps(2, 8, 8), make_mask("random-1d", (8, 8), 2, seed=1))
        x = crandn(rng, 3, 8, 8)
        np.testing.assert_allclose(op.forward(x)[2], op.forward(x[2]), atol=1e-15)

    def test_shape_errors(self):
        op = unit_operator()
        with pytest.raises(ShapeMismatch):
            op.forward(np.zeros((4, 4)))
        with pytest.raises(ShapeMismatch):
            op.adjoint(np.zeros((2, 8, 8)))
        with pytest.raises(ShapeMismatch):
            ImagingOperator(np.ones((1, 4, 4)), make_mask("uniform-1d", (8, 8), 1))

    @settings(max_examples=30, deadline=None)
    @given(a=st.complex_numbers(max_magnitude=10), b=st.complex_numbers(max_magnitude=10),
           seed=st.integers(0, 1000))
    def test_linearity(self, a, b, seed):
        rng = np.random.default_rng(seed)
        op = ImagingOperator(make_birdcage_maps(2, 8, 8), make_mask("uniform-random-2d", (8, 8), 2, seed=seed))
        x, y = crandn(rng, 8, 8), crandn(rng, 8, 8)
        lhs = op.forward(a * x + b * y)
        rhs = a * op.forward(x) + b * op.forward(y)
        assert np.linalg.norm(lhs - rhs) <= 1e-12 * max(1.0, np.linalg.norm(rhs)) * 10
