"""Gaussian passive sources, ensembles, and covariance kernels.

Sources are circularly-symmetric complex Gaussians: real and imaginary parts
are i.i.d. N(0, 1/2) so that E[f conj(f)] reproduces the kernel exactly.
Sampling is deterministic per (seed, sample index) via independent seeded
streams, so ensembles are bit-reproducible and extendable in J.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import Field, Grid, GridMismatchError
from .model import OperatorHandle

HERMITIAN_TOL = 1e-13
PSD_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class CovKernel:
    """Dense kernel on Omega x Omega; entry (m, n) pairs node m with node n.

    Covariance-type data carries hermitian=True (checked on construction);
    the extended adjoint state reuses this container with hermitian=False.
    """

    grid: Grid
    values: np.ndarray = field(repr=False)
    hermitian: bool = True

    def __post_init__(self):
        n = self.grid.n_total
        vals = np.asarray(self.values, dtype=np.complex128).reshape(n, n).copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.hermitian:
            defect = self.hermitian_defect()
            if defect > HERMITIAN_TOL:
                raise ValueError(f"kernel flagged Hermitian but defect is {defect:.3e}")

    def hermitian_defect(self) -> float:
        scale = max(1.0, float(np.abs(self.values).max()))
        return float(np.abs(self.values - self.values.conj().T).max() / scale)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh((self.values + self.values.conj().T) / 2.0)[0])

    def require_psd(self, tol_factor: float = PSD_TOL) -> None:
        """Numerical-PSD check: min eigenvalue >= -tol_factor * trace."""
        tr = float(np.trace(self.values).real)
        floor = -tol_factor * max(tr, 1.0)
        lam = self.min_eigenvalue()
        if lam < floor:
            raise ValueError(f"kernel not numerically PSD: min eig {lam:.3e} < {floor:.3e}")

    def column(self, n: int) -> Field:
        return Field(self.grid, self.values[:, n])


def _symmetrize(mat: np.ndarray) -> np.ndarray:
    return (mat + mat.conj().T) / 2.0


@dataclass(frozen=True, eq=False)
class SourceCovariance:
    """Hermitian PSD source kernel Pi_f with a cached square-root factor."""

    grid: Grid
    kernel: np.ndarray = field(repr=False)

    def __post_init__(self):
        n = self.grid.n_total
        k = np.asarray(self.kernel, dtype=np.complex128).reshape(n, n).copy()
        k.setflags(write=False)
        object.__setattr__(self, "kernel", k)
        scale = max(1.0, float(np.abs(k).max()))
        defect = float(np.abs(k - k.conj().T).max() / scale)
        if defect > HERMITIAN_TOL:
            raise ValueError(f"source kernel not Hermitian (defect {defect:.3e})")
        object.__setattr__(self, "_factor_cache", [None])

    def factor(self) -> np.ndarray:
        """Square root F with F F^H = kernel (Cholesky or clipped eig-sqrt)."""
        cache = self.__dict__["_factor_cache"]
        if cache[0] is None:
            k = self.kernel
            off = k - np.diag(np.diag(k))
            if np.abs(off).max() == 0.0:
                cache[0] = np.diag(np.sqrt(np.maximum(np.diag(k).real, 0.0)))
            else:
                try:
                    cache[0] = np.linalg.cholesky(k)
                except np.linalg.LinAlgError:
                    lam, vec = np.linalg.eigh(k)
                    cache[0] = vec * np.sqrt(np.clip(lam, 0.0, None))
        return cache[0]


def make_white_covariance(grid: Grid, sigma: float) -> SourceCovariance:
    """Spatially uncorrelated source: diagonal sigma^2 / h^dim.

    The 1/h^dim scaling is the discrete delta normalization, so the kernel
    approximates Pi(s) delta(s - s') consistently across resolutions.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    diag = np.full(grid.n_total, sigma**2 / grid.weight)
    return SourceCovariance(grid, np.diag(diag))


def make_se_covariance(grid: Grid, sigma: float, ell: float) -> SourceCovariance:
    """Squared-exponential kernel sigma^2 exp(-|x - x'|^2 / (2 ell^2)).

    Clips negative eigenvalues at zero when rounding pushes the kernel
    slightly outside the PSD cone.
    """
    if not (sigma > 0 and ell > 0):
        raise ValueError("sigma and ell must be positive")
    coords = np.stack(grid.node_coords(), axis=1)
    d2 = np.sum((coords[:, None, :] - coords[None, :, :]) ** 2, axis=2)
    kernel = sigma**2 * np.exp(-d2 / (2.0 * ell**2))
    lam = np.linalg.eigvalsh(kernel)
    if lam[0] < -PSD_TOL * np.trace(kernel):
        lam, vec = np.linalg.eigh(kernel)
        kernel = _symmetrize((vec * np.clip(lam, 0.0, None)) @ vec.conj().T)
    return SourceCovariance(grid, kernel)


@dataclass(frozen=True, eq=False)
class SourceEnsemble:
    grid: Grid
    samples: tuple[Field, ...]
    seed: int

    def __post_init__(self):
        for s in self.samples:
            if s.grid != self.grid:
                raise GridMismatchError("ensemble samples must share one grid")

    @property
    def J(self) -> int:
        return len(self.samples)

    def matrix(self) -> np.ndarray:
        """Samples as columns, shape (n_total, J)."""
        return np.column_stack([s.values for s in self.samples])


def standard_complex_normal(rng: np.random.Generator, n: int) -> np.ndarray:
    """Circularly-symmetric unit-variance complex normals."""
    return (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)


def sample_ensemble(cov: SourceCovariance, J: int, seed: int) -> SourceEnsemble:
    """Draw f_j = factor z_j with independent streams per sample index."""
    if J < 1:
        raise ValueError("J must be >= 1")
    fac = cov.factor()
    samples = []
    for j in range(J):
        rng = np.random.default_rng((int(seed), j))
        z = standard_complex_normal(rng, cov.grid.n_total)
        samples.append(Field(cov.grid, fac @ z))
    return SourceEnsemble(cov.grid, tuple(samples), int(seed))


def sample_covariance(fields: Sequence[Field]) -> CovKernel:
    """(1/J) sum_j u_j(x) conj(u_j(x')); Hermitian PSD of rank <= J."""
    if len(fields) == 0:
        raise ValueError("sample covariance of an empty ensemble")
    grid = fields[0].grid
    u = np.column_stack([f.values for f in fields])
    for f in fields:
        if f.grid != grid:
            raise GridMismatchError("fields must share one grid")
    return CovKernel(grid, _symmetrize(u @ u.conj().T / len(fields)), hermitian=True)


def cross_covariance(p_fields: Sequence[Field], q_fields: Sequence[Field]) -> CovKernel:
    """(1/J) sum_j p_j(x) conj(q_j(x')); not Hermitian in general."""
    if len(p_fields) != len(q_fields) or len(p_fields) == 0:
        raise ValueError("need two equally sized nonempty ensembles")
    grid = p_fields[0].grid
    p = np.column_stack([f.values for f in p_fields])
    q = np.column_stack([f.values for f in q_fields])
    return CovKernel(grid, p @ q.conj().T / len(p_fields), hermitian=False)


def covariance_pushforward(op: OperatorHandle, source_cov: np.ndarray, threads: int = 1) -> CovKernel:
    """Push a source kernel through the solution operator.

    Computes D^{-1} Pi (D^{-1})^H by two columnwise solve sweeps (first on
    Pi, then on the conjugate transpose of the intermediate), costing exactly
    2 n_total counted solves. Hermitian input yields a Hermitian kernel.
    """
    grid = op.grid
    pi = np.asarray(source_cov, dtype=np.complex128)
    if pi.shape != (grid.n_total, grid.n_total):
        raise GridMismatchError("source kernel shape does not match grid")
    mid = op.solve_matrix(pi, threads=threads)
    out = op.solve_matrix(mid.conj().T, threads=threads).conj().T
    hermitian_in = bool(np.abs(pi - pi.conj().T).max() <= HERMITIAN_TOL * max(1.0, np.abs(pi).max()))
    if hermitian_in:
        out = _symmetrize(out)
    return CovKernel(grid, out, hermitian=hermitian_in)
