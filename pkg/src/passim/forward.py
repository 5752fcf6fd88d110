"""The parameter-to-covariance map F and residuals against data.

F(theta) composes the PDE solution map with the sample-covariance
measurement. Two evaluation modes are provided: ``ensemble`` (solve per
sample, then correlate; J solves) and ``pushforward`` (push the source
kernel through the solution operator; 2 n_total solves). When the
pushforward is fed the ensemble's empirical source covariance the two
routes agree to solver accuracy, which is the strongest oracle in the
test-suite.

The data space norm is the discrete L2(Omega x Omega) norm,
||r||_Y = h^dim * frobenius(r), i.e. weight h^dim per axis pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Field, Grid, GridMismatchError
from .model import OperatorHandle, Params, assemble, solve
from .stochastic import CovKernel, SourceCovariance, SourceEnsemble, covariance_pushforward, sample_covariance

MODEL_KINDS = ("abc", "bihelmholtz")
MODES = ("ensemble", "pushforward")


@dataclass(frozen=True, eq=False)
class ForwardProblem:
    kind: str
    grid: Grid
    source_cov: SourceCovariance
    ensemble: SourceEnsemble | None = None
    mode: str = "ensemble"

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"kind must be one of {MODEL_KINDS}, got {self.kind!r}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if (self.ensemble is not None) != (self.mode == "ensemble"):
            raise ValueError("ensemble must be present iff mode == 'ensemble'")
        if self.source_cov.grid != self.grid:
            raise GridMismatchError("source covariance grid mismatch")
        if self.ensemble is not None and self.ensemble.grid != self.grid:
            raise GridMismatchError("ensemble grid mismatch")


def data_norm(grid: Grid, values: np.ndarray) -> float:
    """h^dim-weighted Frobenius norm, the discrete L2(Omega x Omega) norm."""
    return float(grid.weight * np.linalg.norm(np.asarray(values)))


def states(problem: ForwardProblem, theta: Params, op: OperatorHandle | None = None) -> list[Field]:
    """Solve D(theta) u_j = f_j for every ensemble sample (J counted solves)."""
    if problem.ensemble is None:
        raise ValueError("states requires an ensemble")
    if op is None:
        op = assemble(theta)
    return [solve(op, f) for f in problem.ensemble.samples]


def forward(problem: ForwardProblem, theta: Params, op: OperatorHandle | None = None) -> CovKernel:
    """Evaluate F(theta) in the problem's mode."""
    if op is None:
        op = assemble(theta)
    if problem.mode == "ensemble":
        return sample_covariance(states(problem, theta, op=op))
    return covariance_pushforward(op, problem.source_cov.kernel)


def residual(problem: ForwardProblem, theta: Params, data: CovKernel) -> tuple[CovKernel, float]:
    """r = F(theta) - data and its data-space norm."""
    if data.grid != problem.grid:
        raise GridMismatchError("data grid mismatch")
    current = forward(problem, theta)
    r = CovKernel(problem.grid, current.values - data.values, hermitian=data.hermitian)
    return r, data_norm(problem.grid, r.values)


def fd_jacobian_singular_values(
    problem: ForwardProblem,
    theta: Params,
    step: float = 1e-5,
    n_lead: int = 20,
) -> np.ndarray:
    """Leading singular values of the dense finite-difference Jacobian of F.

    Central differences along every parameter component (all blocks for the
    a,b,c model), assembled as a real-linear map into stacked (Re, Im)
    kernel entries with the data-space and parameter-space quadrature
    weights, so singular values are measured in the operator norm X -> Y.
    Used as the compactness / ill-posedness diagnostic: the sorted values
    must decay.
    """
    from .model import AbcDirection, AbcParams

    grid = problem.grid
    n = grid.n_total

    def eval_f(th):
        return forward(problem, th).values

    columns = []
    if isinstance(theta, AbcParams):
        blocks = [("a", None)] + [("b", ax) for ax in range(grid.dim)] + [("c", None)]
    else:
        blocks = [("k", None)]
    for name, ax in blocks:
        for i in range(n):
            d = AbcDirection.zeros(grid) if isinstance(theta, AbcParams) else np.zeros(n)
            if name == "a":
                d.a[i] = 1.0
            elif name == "b":
                d.b[ax, i] = 1.0
            elif name == "c":
                d.c[i] = 1.0
            else:
                d[i] = 1.0
            plus = eval_f(theta.shifted(d, step))
            minus = eval_f(theta.shifted(d, -step))
            columns.append((plus - minus).ravel() / (2.0 * step))
    jac = np.column_stack(columns)
    # real-linear map with quadrature weights on both sides
    jac_real = np.vstack([jac.real, jac.imag]) * grid.weight / np.sqrt(grid.weight)
    sv = np.linalg.svd(jac_real, compute_uv=False)
    return sv[:n_lead]
