"""Discrete calculus: inner products, stencils, summation by parts."""

import numpy as np
import pytest

from conftest import random_field
from passim import (
    Field,
    Grid,
    GridMismatchError,
    apply_divergence,
    apply_gradient,
    apply_laplacian,
    inner_product,
    real_inner_product,
)


def dense_gradient_1d(n, h):
    """Independent dense central-difference matrix, built by index loops."""
    mat = np.zeros((n, n))
    for i in range(n):
        if i + 1 < n:
            mat[i, i + 1] = 1.0 / (2 * h)
        if i - 1 >= 0:
            mat[i, i - 1] = -1.0 / (2 * h)
    return mat


def dense_gradient_2d(n, h, axis):
    """Lift the 1D stencil by looping over flat indices (row-major)."""
    mat = np.zeros((n * n, n * n))
    for i in range(n):
        for j in range(n):
            row = i * n + j
            if axis == 0:
                if i + 1 < n:
                    mat[row, (i + 1) * n + j] = 1.0 / (2 * h)
                if i - 1 >= 0:
                    mat[row, (i - 1) * n + j] = -1.0 / (2 * h)
            else:
                if j + 1 < n:
                    mat[row, i * n + j + 1] = 1.0 / (2 * h)
                if j - 1 >= 0:
                    mat[row, i * n + j - 1] = -1.0 / (2 * h)
    return mat


class TestInnerProduct:
    def test_constant_fields_sum_weights(self):
        grid = Grid(1, 3, 1.0)
        ones = Field(grid, np.ones(3))
        assert inner_product(ones, ones) == pytest.approx(0.75)

    def test_sesquilinearity_i_factor(self):
        grid = Grid(1, 5)
        rng = np.random.default_rng(2)
        g = random_field(grid, rng)
        f = Field(grid, 1j * g.values)
        ip = inner_product(f, g)
        norm_sq = inner_product(g, g).real
        assert ip == pytest.approx(1j * norm_sq)

    def test_matches_scalar_loop(self):
        grid = Grid(2, 5, 2.0)
        rng = np.random.default_rng(0)
        f, g = random_field(grid, rng), random_field(grid, rng)
        expected = 0.0
        for fi, gi in zip(f.values, g.values):
            expected += grid.h**2 * fi * np.conj(gi)
        assert inner_product(f, g) == pytest.approx(expected, rel=1e-13)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_conjugate_symmetry(self, seed):
        grid = Grid(2, 6)
        rng = np.random.default_rng(seed)
        f, g = random_field(grid, rng), random_field(grid, rng)
        assert inner_product(f, g) == pytest.approx(np.conj(inner_product(g, f)), rel=1e-14)

    def test_grid_mismatch_raises(self):
        f = Field.zeros(Grid(1, 4))
        g = Field.zeros(Grid(1, 5))
        with pytest.raises(GridMismatchError):
            inner_product(f, g)


class TestRealInnerProduct:
    def test_real_vs_imaginary_orthogonal(self, grid1d):
        rng = np.random.default_rng(4)
        f = Field(grid1d, rng.standard_normal(grid1d.n_total))
        g = Field(grid1d, 1j * rng.standard_normal(grid1d.n_total))
        assert real_inner_product(f, g) == pytest.approx(0.0, abs=1e-15)

    def test_norm_positive(self, grid1d):
        rng = np.random.default_rng(5)
        f = random_field(grid1d, rng)
        assert real_inner_product(f, f) > 0

    def test_is_real_part(self, grid2d):
        rng = np.random.default_rng(6)
        f, g = random_field(grid2d, rng), random_field(grid2d, rng)
        assert real_inner_product(f, g) == pytest.approx(inner_product(f, g).real, rel=1e-14)


class TestLaplacian:
    def test_constant_interior_with_boundary(self):
        grid = Grid(1, 3, 1.0)
        out = apply_laplacian(Field(grid, np.ones(3)))
        np.testing.assert_allclose(out.values.real, [-16.0, 0.0, -16.0], atol=1e-12)

    def test_exact_on_quadratics(self):
        grid = Grid(1, 9, 1.0)
        x = grid.axis_coords()
        out = apply_laplacian(Field(grid, x * (1 - x)))
        np.testing.assert_allclose(out.values.real, -2.0, rtol=1e-11)

    def test_2d_matches_kron_sum_oracle(self):
        grid = Grid(2, 4, 1.0)
        n, h = 4, grid.h
        l1 = np.zeros((n, n))
        for i in range(n):
            l1[i, i] = -2 / h**2
            if i > 0:
                l1[i, i - 1] = 1 / h**2
            if i < n - 1:
                l1[i, i + 1] = 1 / h**2
        oracle = np.kron(l1, np.eye(n)) + np.kron(np.eye(n), l1)
        rng = np.random.default_rng(7)
        u = random_field(grid, rng)
        np.testing.assert_allclose(apply_laplacian(u).values, oracle @ u.values, rtol=1e-12)


class TestGradient:
    def test_constant_zero_in_strict_interior(self):
        grid = Grid(1, 7)
        (gx,) = apply_gradient(Field(grid, np.ones(7)))
        np.testing.assert_allclose(gx.values[1:-1], 0.0, atol=1e-14)
        assert gx.values[0] != 0 and gx.values[-1] != 0  # implicit boundary zeros

    def test_exact_on_linear_ramp(self):
        grid = Grid(1, 9, 1.0)
        alpha = 1.7
        (gx,) = apply_gradient(Field(grid, alpha * grid.axis_coords()))
        np.testing.assert_allclose(gx.values.real[1:-1], alpha, rtol=1e-12)

    def test_2d_matches_dense_oracle(self):
        grid = Grid(2, 5)
        rng = np.random.default_rng(8)
        u = random_field(grid, rng)
        grads = apply_gradient(u)
        for axis in range(2):
            oracle = dense_gradient_2d(5, grid.h, axis)
            np.testing.assert_allclose(grads[axis].values, oracle @ u.values, rtol=1e-12)


class TestDivergence:
    def test_zero(self, grid2d):
        v = [Field.zeros(grid2d), Field.zeros(grid2d)]
        np.testing.assert_array_equal(apply_divergence(v).values, 0.0)

    def test_constant_1d_boundary_artifacts_only(self):
        grid = Grid(1, 7)
        out = apply_divergence([Field(grid, np.ones(7))])
        np.testing.assert_allclose(out.values[1:-1], 0.0, atol=1e-14)
        assert out.values[0] != 0

    def test_matches_dense_oracle(self):
        grid = Grid(1, 6)
        rng = np.random.default_rng(9)
        v = random_field(grid, rng)
        # divergence = minus the transpose of the central-difference matrix
        oracle = -dense_gradient_1d(6, grid.h).T @ v.values
        np.testing.assert_allclose(apply_divergence([v]).values, oracle, rtol=1e-12)

    def test_component_count_mismatch(self, grid2d):
        with pytest.raises(GridMismatchError):
            apply_divergence([Field.zeros(grid2d)])

    @pytest.mark.parametrize("dim,n", [(1, 9), (2, 6)])
    @pytest.mark.parametrize("seed", [0, 3])
    def test_summation_by_parts(self, dim, n, seed):
        """inner(div v, u) == -sum_ax inner(v_ax, grad_ax u), a construction identity."""
        grid = Grid(dim, n, 1.3)
        rng = np.random.default_rng(seed)
        u = random_field(grid, rng)
        v = [random_field(grid, rng) for _ in range(dim)]
        lhs = inner_product(apply_divergence(v), u)
        rhs = -sum(inner_product(vx, gx) for vx, gx in zip(v, apply_gradient(u)))
        assert lhs == pytest.approx(rhs, rel=1e-13)

    def test_composition_differs_from_classical_laplacian(self):
        """div(grad .) is the wide +-2h stencil, not the classical 3-point one."""
        grid = Grid(1, 8)
        rng = np.random.default_rng(10)
        u = random_field(grid, rng)
        composed = apply_divergence(list(apply_gradient(u)))
        classical = apply_laplacian(u)
        assert np.abs(composed.values - classical.values).max() > 1.0
