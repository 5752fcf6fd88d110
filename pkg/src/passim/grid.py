"""Uniform grid over the open box (0, extent)^dim and its discrete calculus.

Interior nodes only are stored; homogeneous Dirichlet values outside the box
are implicit zeros. All inner products carry the midpoint quadrature weight
h^dim per node, which makes the discrete Riesz map on node values diagonal.

Two discrete derivative pairs live here:

* ``apply_gradient`` / ``apply_divergence``: node-centered central
  differences, with the divergence DEFINED as minus the inner-product
  adjoint of the gradient. These back the advection term and the
  backpropagator kernels, and satisfy summation by parts exactly.
* ``face_difference_matrices``: a staggered (face-centered) pair used by the
  operator assembly in :mod:`passim.model` for the second-order term. Its
  divergence is likewise the exact negative adjoint, and the composition
  reduces to the classical 3-point Laplacian for unit coefficient.

``apply_laplacian`` is the classical 3-point stencil. It is NOT the
composition of the central-difference gradient/divergence; the two differ
and tests must not conflate them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.sparse as sp


class GridMismatchError(ValueError):
    """Raised when fields from different grids are combined."""


@dataclass(frozen=True)
class Grid:
    """Uniform discretization of (0, extent)^dim with interior nodes only.

    Attributes:
        dim: spatial dimension; 1 and 2 are fully supported, 3 is accepted
            by the stencil builders but untested at scale.
        n_per_axis: interior nodes per axis (>= 3).
        extent: side length of the box; spacing is extent / (n_per_axis + 1).
    """

    dim: int
    n_per_axis: int
    extent: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.n_per_axis < 3:
            raise ValueError(f"n_per_axis must be >= 3, got {self.n_per_axis}")
        if not self.extent > 0:
            raise ValueError(f"extent must be positive, got {self.extent}")
        object.__setattr__(self, "extent", float(self.extent))

    @property
    def h(self) -> float:
        return self.extent / (self.n_per_axis + 1)

    @property
    def n_total(self) -> int:
        return self.n_per_axis ** self.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_per_axis,) * self.dim

    @property
    def weight(self) -> float:
        """Quadrature weight per node, h^dim (midpoint rule)."""
        return self.h ** self.dim

    def axis_coords(self) -> np.ndarray:
        """Interior node coordinates along one axis."""
        return np.arange(1, self.n_per_axis + 1) * self.h

    def node_coords(self) -> tuple[np.ndarray, ...]:
        """Per-axis coordinates of every node, each raveled row-major."""
        axes = np.meshgrid(*([self.axis_coords()] * self.dim), indexing="ij")
        return tuple(ax.ravel() for ax in axes)


@dataclass(frozen=True, eq=False)
class Field:
    """Complex-valued function on the interior nodes of a grid.

    Values are stored raveled row-major over axes and are read-only after
    construction, so Fields are safe to share across threads.
    """

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.complex128).reshape(-1).copy()
        if vals.size != self.grid.n_total:
            raise GridMismatchError(
                f"field has {vals.size} values, grid has {self.grid.n_total} nodes"
            )
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros(grid.n_total, dtype=np.complex128))


def _require_same_grid(*fields: Field) -> Grid:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise GridMismatchError(f"grids differ: {f.grid} vs {grid}")
    return grid


def inner_product(f: Field, g: Field) -> complex:
    """Discrete L2 pairing h^dim * sum_i f_i * conj(g_i)."""
    grid = _require_same_grid(f, g)
    return complex(grid.weight * np.vdot(g.values, f.values))


def real_inner_product(f: Field, g: Field) -> float:
    """Real part of the canonical complex pairing."""
    return inner_product(f, g).real


def field_norm(f: Field) -> float:
    return float(np.sqrt(f.grid.weight) * np.linalg.norm(f.values))


# ---------------------------------------------------------------------------
# stencil matrices (cached per grid; Grid is hashable)
# ---------------------------------------------------------------------------


def _axis_kron(grid: Grid, mat: sp.spmatrix, axis: int) -> sp.csr_matrix:
    """Lift a 1D operator to the given axis of the row-major tensor grid."""
    n = grid.n_per_axis
    out = mat if axis == 0 else sp.identity(n, format="csr")
    for ax in range(1, grid.dim):
        nxt = mat if ax == axis else sp.identity(n, format="csr")
        out = sp.kron(out, nxt, format="csr")
    return out.tocsr()


@lru_cache(maxsize=None)
def gradient_matrices(grid: Grid) -> tuple[sp.csr_matrix, ...]:
    """Central-difference gradient, one n_total x n_total matrix per axis."""
    n, h = grid.n_per_axis, grid.h
    g1 = sp.diags([np.full(n - 1, -1.0), np.full(n - 1, 1.0)], [-1, 1]) / (2.0 * h)
    return tuple(_axis_kron(grid, g1.tocsr(), ax) for ax in range(grid.dim))


@lru_cache(maxsize=None)
def laplacian_matrix(grid: Grid) -> sp.csr_matrix:
    """Classical 3-point Laplacian (kron-sum over axes), Dirichlet zeros."""
    n, h = grid.n_per_axis, grid.h
    l1 = sp.diags(
        [np.full(n - 1, 1.0), np.full(n, -2.0), np.full(n - 1, 1.0)], [-1, 0, 1]
    ) / h**2
    out = _axis_kron(grid, l1.tocsr(), 0)
    for ax in range(1, grid.dim):
        out = out + _axis_kron(grid, l1.tocsr(), ax)
    return out.tocsr()


@lru_cache(maxsize=None)
def face_difference_matrices(grid: Grid) -> tuple[tuple[sp.csr_matrix, sp.csr_matrix], ...]:
    """Staggered pair (E, Av) per axis.

    E maps node values to forward differences on the n+1 faces of each axis
    line (implicit zeros outside), Av averages a node coefficient onto faces
    (nearest-neighbor extension at the two boundary faces). The operator
    assembly uses sum_ax E^T diag(Av a) E, whose divergence part is the exact
    negative adjoint of E under the uniform node/face weights.
    """
    n, h = grid.n_per_axis, grid.h
    rows_e, cols_e, vals_e = [], [], []
    for k in range(n + 1):
        if k <= n - 1:
            rows_e.append(k), cols_e.append(k), vals_e.append(1.0 / h)
        if k >= 1:
            rows_e.append(k), cols_e.append(k - 1), vals_e.append(-1.0 / h)
    e1 = sp.csr_matrix((vals_e, (rows_e, cols_e)), shape=(n + 1, n))
    rows_a, cols_a, vals_a = [0, n], [0, n - 1], [1.0, 1.0]
    for k in range(1, n):
        rows_a += [k, k]
        cols_a += [k, k - 1]
        vals_a += [0.5, 0.5]
    a1 = sp.csr_matrix((vals_a, (rows_a, cols_a)), shape=(n + 1, n))
    pairs = []
    for ax in range(grid.dim):
        pairs.append((_axis_face_kron(grid, e1, ax), _axis_face_kron(grid, a1, ax)))
    return tuple(pairs)


def _axis_face_kron(grid: Grid, mat: sp.csr_matrix, axis: int) -> sp.csr_matrix:
    n = grid.n_per_axis
    out = mat if axis == 0 else sp.identity(n, format="csr")
    for ax in range(1, grid.dim):
        nxt = mat if ax == axis else sp.identity(n, format="csr")
        out = sp.kron(out, nxt, format="csr")
    return out.tocsr()


# ---------------------------------------------------------------------------
# field-level operations
# ---------------------------------------------------------------------------


def apply_laplacian(u: Field) -> Field:
    """Classical second-order stencil sum_ax (u_{i-1} - 2 u_i + u_{i+1}) / h^2."""
    return Field(u.grid, laplacian_matrix(u.grid) @ u.values)


def apply_gradient(u: Field) -> tuple[Field, ...]:
    """Central differences (u_{i+1} - u_{i-1}) / (2h) per axis."""
    return tuple(Field(u.grid, g @ u.values) for g in gradient_matrices(u.grid))


def apply_divergence(v: Sequence[Field]) -> Field:
    """Minus the inner-product adjoint of ``apply_gradient``.

    The central-difference matrix is antisymmetric, so this coincides with
    applying the same central difference per axis and summing; the identity
    inner(div v, u) == -sum_ax inner(v_ax, grad_ax u) holds exactly.
    """
    grid = _require_same_grid(*v)
    if len(v) != grid.dim:
        raise GridMismatchError(f"expected {grid.dim} components, got {len(v)}")
    mats = gradient_matrices(grid)
    out = np.zeros(grid.n_total, dtype=np.complex128)
    for g, comp in zip(mats, v):
        out += g @ comp.values
    return Field(grid, out)
