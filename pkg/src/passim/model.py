"""Parametric elliptic operators, their exact discrete adjoints, and solves.

Two model families are provided:

* the a,b,c-problem  -div(a grad u) + b . grad u + i c u = f,
* the clamped bi-Helmholtz problem  Lap^2 u - k^2 Lap u + u = f, assembled
  internally in the linear parameter theta = k^2.

The discrete-adjoint convention is strict: the adjoint handle holds the
weighted conjugate transpose of the assembled forward matrix (with uniform
node weights this is the plain conjugate transpose), never an independent
discretization. A continuous-form assembly of the a,b,c adjoint operator is
exposed for cross-validation; with the stencils used here the two coincide.

The second-order term uses the staggered face pair from
:mod:`passim.grid` (divergence = exact negative adjoint of the face
difference), so the operator reduces to the classical 3-point Laplacian for
unit coefficient and retains second-order consistency. The advection term
uses the node-centered central difference.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, replace
from typing import Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Field, Grid, GridMismatchError, face_difference_matrices, gradient_matrices


class AdmissibilityError(ValueError):
    """Parameter lies outside the admissible set."""


class InvertibilityError(RuntimeError):
    """Factorization failed; the operator is (numerically) singular."""


# ---------------------------------------------------------------------------
# parameters and directions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AbcDirection:
    """Perturbation direction (h_a, h_b, h_c) for the a,b,c-problem.

    Real for parameter updates; backpropagators build complex instances
    internally before the real projection.
    """

    a: np.ndarray
    b: np.ndarray  # shape (dim, n_total)
    c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", np.atleast_1d(np.asarray(self.a)))
        object.__setattr__(self, "b", np.atleast_2d(np.asarray(self.b)))
        object.__setattr__(self, "c", np.atleast_1d(np.asarray(self.c)))

    @classmethod
    def zeros(cls, grid: Grid) -> "AbcDirection":
        n = grid.n_total
        return cls(np.zeros(n), np.zeros((grid.dim, n)), np.zeros(n))

    def __add__(self, other: "AbcDirection") -> "AbcDirection":
        return AbcDirection(self.a + other.a, self.b + other.b, self.c + other.c)

    def __sub__(self, other: "AbcDirection") -> "AbcDirection":
        return AbcDirection(self.a - other.a, self.b - other.b, self.c - other.c)

    def __mul__(self, s: float) -> "AbcDirection":
        return AbcDirection(s * self.a, s * self.b, s * self.c)

    __rmul__ = __mul__

    def __neg__(self) -> "AbcDirection":
        return self * (-1.0)

    def real(self) -> "AbcDirection":
        return AbcDirection(self.a.real, self.b.real, self.c.real)


Direction = Union[AbcDirection, np.ndarray]


def direction_dot(grid: Grid, x: Direction, y: Direction) -> float:
    """Real L2(Omega) pairing of two parameter directions (blockwise sum)."""
    if isinstance(x, AbcDirection):
        acc = float(np.dot(x.a.real, y.a.real) + np.dot(x.c.real, y.c.real))
        acc += float(np.sum(x.b.real * y.b.real))
        return grid.weight * acc
    return grid.weight * float(np.dot(np.asarray(x).real, np.asarray(y).real))


def direction_norm(grid: Grid, x: Direction) -> float:
    return float(np.sqrt(direction_dot(grid, x, x)))


@dataclass(frozen=True, eq=False)
class AbcParams:
    """Real coefficient triple theta = (a, b, c) with admissibility bounds.

    Bounds: min(a) >= a_lower > 0 (uniform ellipticity), max|b| <= b_max and
    max|c| <= c_max pointwise. The radii default to a_lower / (2 * extent)
    and a_lower; both are configurable since no canonical constants exist.
    """

    grid: Grid
    a: np.ndarray
    b: np.ndarray  # shape (dim, n_total)
    c: np.ndarray
    a_lower: float = 1e-3
    b_max: float | None = None
    c_max: float | None = None

    def __post_init__(self):
        n = self.grid.n_total
        a = np.broadcast_to(np.asarray(self.a, dtype=float), (n,)).copy()
        b = np.broadcast_to(np.asarray(self.b, dtype=float), (self.grid.dim, n)).copy()
        c = np.broadcast_to(np.asarray(self.c, dtype=float), (n,)).copy()
        for arr in (a, b, c):
            arr.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @classmethod
    def constant(cls, grid: Grid, a: float = 1.0, c: float = 0.0, **kw) -> "AbcParams":
        n = grid.n_total
        return cls(grid, np.full(n, a), np.zeros((grid.dim, n)), np.full(n, c), **kw)

    @property
    def effective_b_max(self) -> float:
        return self.b_max if self.b_max is not None else self.a_lower / (2.0 * self.grid.extent)

    @property
    def effective_c_max(self) -> float:
        return self.c_max if self.c_max is not None else self.a_lower

    def validate(self) -> None:
        if not self.a_lower > 0:
            raise AdmissibilityError(f"a_lower must be positive, got {self.a_lower}")
        if self.a.min() < self.a_lower:
            raise AdmissibilityError(
                f"min(a) = {self.a.min():.6g} violates ellipticity bound {self.a_lower}"
            )
        if np.abs(self.b).max() > self.effective_b_max * (1 + 1e-12):
            raise AdmissibilityError(
                f"max|b| = {np.abs(self.b).max():.6g} exceeds radius {self.effective_b_max:.6g}"
            )
        if np.abs(self.c).max() > self.effective_c_max * (1 + 1e-12):
            raise AdmissibilityError(
                f"max|c| = {np.abs(self.c).max():.6g} exceeds radius {self.effective_c_max:.6g}"
            )

    def is_admissible(self) -> bool:
        try:
            self.validate()
        except AdmissibilityError:
            return False
        return True

    def shifted(self, h: AbcDirection, t: float = 1.0) -> "AbcParams":
        return replace(
            self, a=self.a + t * h.a.real, b=self.b + t * h.b.real, c=self.c + t * h.c.real
        )

    def clamped(self) -> "AbcParams":
        """Pointwise projection onto the admissible box."""
        bm, cm = self.effective_b_max, self.effective_c_max
        return replace(
            self,
            a=np.maximum(self.a, self.a_lower),
            b=np.clip(self.b, -bm, bm),
            c=np.clip(self.c, -cm, cm),
        )

    def as_direction(self) -> AbcDirection:
        return AbcDirection(self.a.copy(), self.b.copy(), self.c.copy())


@dataclass(frozen=True, eq=False)
class BiHelmholtzParam:
    """Real coefficient k of the bi-Helmholtz model; theta = k^2 internally."""

    grid: Grid
    k: np.ndarray

    def __post_init__(self):
        k = np.broadcast_to(np.asarray(self.k, dtype=float), (self.grid.n_total,)).copy()
        k.setflags(write=False)
        object.__setattr__(self, "k", k)

    def validate(self) -> None:
        if not np.all(np.isfinite(self.k)):
            raise AdmissibilityError("k contains non-finite values")

    def is_admissible(self) -> bool:
        return bool(np.all(np.isfinite(self.k)))

    @property
    def theta(self) -> np.ndarray:
        return self.k**2

    def shifted(self, h_k: np.ndarray, t: float = 1.0) -> "BiHelmholtzParam":
        return BiHelmholtzParam(self.grid, self.k + t * np.asarray(h_k).real)

    def clamped(self) -> "BiHelmholtzParam":
        return self


Params = Union[AbcParams, BiHelmholtzParam]


# ---------------------------------------------------------------------------
# solve accounting
# ---------------------------------------------------------------------------


class SolveMeter:
    """Thread-safe running total of PDE solves across all handles."""

    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    def add(self, n: int) -> None:
        with self._lock:
            self._count += n

    @property
    def count(self) -> int:
        return self._count

    def reset(self) -> None:
        with self._lock:
            self._count = 0


GLOBAL_SOLVES = SolveMeter()


class OperatorHandle:
    """Sparse system matrix with cached LU factorization and solve counter.

    The handle is immutable after the (lazy) factorization; concurrent
    solves against one factorization are allowed and counter updates are
    lock-protected.
    """

    def __init__(self, matrix: sp.spmatrix, grid: Grid, adjoint_flag: bool = False):
        self.matrix = matrix.tocsc()
        self.grid = grid
        self.adjoint_flag = adjoint_flag
        self._lock = threading.Lock()
        self._count = 0
        self._factor = None

    @property
    def solve_count(self) -> int:
        return self._count

    def _factorization(self):
        if self._factor is None:
            with self._lock:
                if self._factor is None:
                    try:
                        factor = spla.splu(self.matrix)
                    except RuntimeError as err:
                        raise InvertibilityError(str(err)) from err
                    probe = factor.solve(np.ones(self.matrix.shape[0], dtype=np.complex128))
                    if not np.all(np.isfinite(probe)):
                        raise InvertibilityError("factorization produced non-finite values")
                    self._factor = factor
        return self._factor

    def _bump(self, n: int) -> None:
        with self._lock:
            self._count += n
        GLOBAL_SOLVES.add(n)

    def solve_values(self, rhs: np.ndarray) -> np.ndarray:
        out = self._factorization().solve(np.asarray(rhs, dtype=np.complex128))
        self._bump(1)
        return out

    def solve_matrix(self, rhs: np.ndarray, threads: int = 1) -> np.ndarray:
        """Columnwise solve; counts one solve per column."""
        rhs = np.asarray(rhs, dtype=np.complex128)
        factor = self._factorization()
        if threads > 1 and rhs.shape[1] > 1:
            from concurrent.futures import ThreadPoolExecutor

            chunks = np.array_split(np.arange(rhs.shape[1]), threads)
            out = np.empty_like(rhs)

            def work(idx):
                out[:, idx] = factor.solve(rhs[:, idx])

            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(work, [c for c in chunks if c.size]))
        else:
            out = factor.solve(rhs)
        self._bump(rhs.shape[1])
        return out


def solve(op: OperatorHandle, rhs: Field) -> Field:
    """Direct solve of op.matrix u = rhs; increments the solve counter by 1."""
    if rhs.grid != op.grid:
        raise GridMismatchError("rhs grid does not match operator grid")
    return Field(op.grid, op.solve_values(rhs.values))


def apply_operator(op: OperatorHandle, u: Field) -> Field:
    return Field(op.grid, op.matrix @ u.values)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


def _stiffness(grid: Grid, coeff: np.ndarray) -> sp.csr_matrix:
    """sum_ax E^T diag(Av coeff) E, the -div(coeff grad .) block."""
    out = None
    for e, av in face_difference_matrices(grid):
        term = e.T @ sp.diags(av @ coeff) @ e
        out = term if out is None else out + term
    return out.tocsr()


def _advection(grid: Grid, b: np.ndarray) -> sp.csr_matrix:
    out = None
    for gc, bax in zip(gradient_matrices(grid), b):
        term = sp.diags(bax) @ gc
        out = term if out is None else out + term
    return out.tocsr()


def assemble_abc(params: AbcParams) -> OperatorHandle:
    """Assemble D(theta) = -div(a grad .) + b . grad(.) + i c (.)."""
    params.validate()
    grid = params.grid
    mat = (
        _stiffness(grid, params.a)
        + _advection(grid, params.b)
        + 1j * sp.diags(params.c)
    )
    return OperatorHandle(mat, grid)


def assemble_abc_adjoint(params: AbcParams) -> OperatorHandle:
    """Exact weighted conjugate transpose of the forward matrix.

    With uniform node weights this is the plain conjugate transpose; it is
    the discrete realization of -div(a grad .) - div(b .) - i c (.).
    """
    fwd = assemble_abc(params)
    return OperatorHandle(fwd.matrix.conj().T, params.grid, adjoint_flag=True)


def assemble_abc_adjoint_continuous(params: AbcParams) -> OperatorHandle:
    """Continuous-form assembly of the adjoint operator, for cross-validation.

    Builds -div(a grad .) - div(b .) - i c (.) directly from the stencils.
    For the pairs used here this coincides with the conjugate transpose.
    """
    params.validate()
    grid = params.grid
    div_b = None
    for gc, bax in zip(gradient_matrices(grid), params.b):
        term = gc @ sp.diags(bax)
        div_b = term if div_b is None else div_b + term
    mat = _stiffness(grid, params.a) - div_b - 1j * sp.diags(params.c)
    return OperatorHandle(mat, grid, adjoint_flag=True)


def bihelmholtz_laplacian(grid: Grid) -> sp.csr_matrix:
    """The negative stiffness sum_ax -E^T E; equals the classical stencil."""
    return (-_stiffness(grid, np.ones(grid.n_total))).tocsr()


def assemble_bihelmholtz(param: BiHelmholtzParam) -> OperatorHandle:
    """Assemble L L - diag(k^2) L + I on interior nodes.

    The squared-operator construction with implicit zero extension realizes
    the clamped boundary (u and its normal derivative zero). The k^2 factor
    multiplies the Laplacian pointwise, matching the model's nonlinearity in
    k but linearity in theta = k^2.
    """
    param.validate()
    grid = param.grid
    lap = bihelmholtz_laplacian(grid)
    mat = lap @ lap - sp.diags(param.theta) @ lap + sp.identity(grid.n_total)
    return OperatorHandle(mat.astype(np.complex128), grid)


def assemble_bihelmholtz_adjoint(param: BiHelmholtzParam) -> OperatorHandle:
    fwd = assemble_bihelmholtz(param)
    return OperatorHandle(fwd.matrix.conj().T, param.grid, adjoint_flag=True)


def assemble(theta: Params) -> OperatorHandle:
    if isinstance(theta, AbcParams):
        return assemble_abc(theta)
    return assemble_bihelmholtz(theta)


def assemble_adjoint(theta: Params) -> OperatorHandle:
    if isinstance(theta, AbcParams):
        return assemble_abc_adjoint(theta)
    return assemble_bihelmholtz_adjoint(theta)


def direction_operator(grid: Grid, h: Direction) -> sp.csr_matrix:
    """Matrix of u -> B(u) h, i.e. D(theta + h) - D(theta) for any theta."""
    if isinstance(h, AbcDirection):
        return (
            _stiffness(grid, h.a) + _advection(grid, h.b) + 1j * sp.diags(h.c)
        ).astype(np.complex128)
    theta_dir = np.asarray(h)
    return (-sp.diags(theta_dir) @ bihelmholtz_laplacian(grid)).astype(np.complex128)


# ---------------------------------------------------------------------------
# the bilinear piece B and its adjoint
# ---------------------------------------------------------------------------


def apply_B(u: Field, h: Direction) -> Field:
    """B(u) h, linear in both arguments.

    a,b,c-problem (h an AbcDirection):
        B(u) h = -div(h_a grad u) + h_b . grad u + i h_c u.
    bi-Helmholtz (h a plain array, theta = k^2 convention):
        B(u) h = -h (Lap u).
    """
    grid = u.grid
    if isinstance(h, AbcDirection):
        if h.a.shape != (grid.n_total,) or h.b.shape != (grid.dim, grid.n_total):
            raise GridMismatchError(
                f"direction blocks {h.a.shape}/{h.b.shape} do not match the grid"
            )
        out = np.zeros(grid.n_total, dtype=np.complex128)
        for e, av in face_difference_matrices(grid):
            out += e.T @ ((av @ h.a) * (e @ u.values))
        for gc, hbx in zip(gradient_matrices(grid), h.b):
            out += hbx * (gc @ u.values)
        out += 1j * h.c * u.values
        return Field(grid, out)
    lap = bihelmholtz_laplacian(grid)
    return Field(grid, -np.asarray(h) * (lap @ u.values))


def apply_B_adjoint(u: Field, w: Field, kind: str = "abc") -> Direction:
    """Exact algebraic adjoint of h -> B(u) h; complex, pre Re-projection.

    abc components: a -> sum_ax Av^T(conj(E u) * E w);  b_ax -> conj(Gc u) * w;
    c -> -i conj(u) w. The pointwise interior forms grad(conj u) . grad w etc.
    agree with these to O(h^2).
    """
    _require(u, w)
    if kind == "abc":
        return accumulate_B_adjoint(u.grid, "abc", u.values[:, None], w.values[:, None])
    return accumulate_B_adjoint(u.grid, "bihelmholtz", u.values[:, None], w.values[:, None])


def _require(u: Field, w: Field) -> None:
    if u.grid != w.grid:
        raise GridMismatchError("fields live on different grids")


def accumulate_B_adjoint(
    grid: Grid, kind: str, u_cols: np.ndarray, w_cols: np.ndarray
) -> Direction:
    """sum over columns n of B(u_cols[:, n])^* w_cols[:, n] (complex).

    This columnwise accumulation is the workhorse of the covariance
    backpropagators; vectorized over columns.
    """
    if kind == "abc":
        za = np.zeros(grid.n_total, dtype=np.complex128)
        for e, av in face_difference_matrices(grid):
            za += av.T @ np.einsum("fn,fn->f", np.conj(e @ u_cols), e @ w_cols)
        zb = np.stack(
            [np.einsum("in,in->i", np.conj(gc @ u_cols), w_cols) for gc in gradient_matrices(grid)]
        )
        zc = -1j * np.einsum("in,in->i", np.conj(u_cols), w_cols)
        return AbcDirection(za, zb, zc)
    if kind == "bihelmholtz":
        lap = bihelmholtz_laplacian(grid)
        return -np.einsum("in,in->i", np.conj(lap @ u_cols), w_cols)
    raise ValueError(f"unknown model kind {kind!r}")


def pointwise_B_adjoint_abc(u: Field, w: Field) -> AbcDirection:
    """Pointwise interior form of the abc B-adjoint (O(h^2) cross-check).

    Uses central differences for every block: a -> grad(conj u) . grad w,
    b -> grad(conj u) w, c -> -i conj(u) w.
    """
    _require(u, w)
    mats = gradient_matrices(u.grid)
    za = sum((np.conj(g @ u.values)) * (g @ w.values) for g in mats)
    zb = np.stack([(np.conj(g @ u.values)) * w.values for g in mats])
    zc = -1j * np.conj(u.values) * w.values
    return AbcDirection(za, zb, zc)
