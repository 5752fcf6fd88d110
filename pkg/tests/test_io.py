"""Binary + sidecar serialization formats."""

import json
import struct

import numpy as np

from conftest import random_field
from passim import Field, Grid, load_field, load_kernel, save_field, save_kernel, sample_covariance


class TestFieldSerialization:
    def test_roundtrip(self, tmp_path, grid2d):
        rng = np.random.default_rng(0)
        f = random_field(grid2d, rng)
        save_field(tmp_path / "state", f)
        loaded = load_field(tmp_path / "state")
        assert loaded.grid == grid2d
        np.testing.assert_array_equal(loaded.values, f.values)

    def test_sidecar_schema(self, tmp_path):
        grid = Grid(1, 5, 2.5)
        save_field(tmp_path / "f", Field.zeros(grid))
        meta = json.loads((tmp_path / "f.json").read_text())
        assert meta == {"dim": 1, "n_per_axis": 5, "extent": 2.5, "kind": "field"}

    def test_little_endian_real_imag_pairs(self, tmp_path):
        grid = Grid(1, 3)
        f = Field(grid, np.array([1.5 - 2.5j, 0.0, 3.0 + 4.0j]))
        save_field(tmp_path / "f", f)
        raw = (tmp_path / "f.bin").read_bytes()
        assert len(raw) == 3 * 16
        re0, im0 = struct.unpack("<dd", raw[:16])
        assert (re0, im0) == (1.5, -2.5)
        re2, im2 = struct.unpack("<dd", raw[32:48])
        assert (re2, im2) == (3.0, 4.0)


class TestKernelSerialization:
    def test_roundtrip(self, tmp_path, grid2d):
        rng = np.random.default_rng(1)
        kernel = sample_covariance([random_field(grid2d, rng) for _ in range(3)])
        save_kernel(tmp_path / "cov", kernel)
        loaded = load_kernel(tmp_path / "cov", grid2d)
        assert loaded.hermitian
        np.testing.assert_array_equal(loaded.values, kernel.values)

    def test_sidecar_schema(self, tmp_path, grid1d):
        rng = np.random.default_rng(2)
        kernel = sample_covariance([random_field(grid1d, rng)])
        save_kernel(tmp_path / "cov", kernel)
        meta = json.loads((tmp_path / "cov.json").read_text())
        assert meta == {"kind": "kernel", "n_total": grid1d.n_total, "hermitian": True}

    def test_non_hermitian_roundtrip(self, tmp_path, grid1d):
        """Extended adjoint states reuse the kernel format with hermitian=false."""
        from passim import CovKernel

        rng = np.random.default_rng(4)
        n = grid1d.n_total
        vals = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        psi = CovKernel(grid1d, vals, hermitian=False)
        save_kernel(tmp_path / "psi", psi)
        meta = json.loads((tmp_path / "psi.json").read_text())
        assert meta["hermitian"] is False
        loaded = load_kernel(tmp_path / "psi", grid1d)
        assert not loaded.hermitian
        np.testing.assert_array_equal(loaded.values, vals)

    def test_grid_size_mismatch_rejected(self, tmp_path, grid1d):
        rng = np.random.default_rng(3)
        kernel = sample_covariance([random_field(grid1d, rng)])
        save_kernel(tmp_path / "cov", kernel)
        import pytest

        with pytest.raises(ValueError):
            load_kernel(tmp_path / "cov", Grid(1, grid1d.n_per_axis + 1))
