"""Forward linearization and the nonlinearity diagnostics.

The linearization F'(theta) h is evaluated through linearized states
phi_j solving D(theta) phi_j = -B(u_j) h with the same factorization as the
forward states. The diagnostics quantify how nonlinear the covariance
measurement is: the first-order linearization error must scale
quadratically in the perturbation size while the image difference and the
mixed covariance cov(v - u, u) scale linearly, and the ratio
E_lin / (|dtheta| |dF| + |dtheta|^2) must stay bounded as t -> 0.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .adjoint import RieszMap, backprop, extended_adjoint_lowrank, extended_adjoint_slicewise, hermitian_factors
from .forward import ForwardProblem, data_norm, forward, states
from .grid import Field
from .model import (
    AbcParams,
    AdmissibilityError,
    BiHelmholtzParam,
    Direction,
    OperatorHandle,
    Params,
    apply_B,
    assemble,
    assemble_adjoint,
    direction_norm,
)
from .stochastic import CovKernel, cross_covariance


def _theta_direction(theta: Params, h: Direction) -> Direction:
    """Convert a user-facing direction to the model's linear parameterization.

    For the bi-Helmholtz model directions are given in k; the linear
    parameter is theta = k^2, so d theta = 2 k h_k.
    """
    if isinstance(theta, BiHelmholtzParam):
        return 2.0 * theta.k * np.asarray(h)
    return h


def linearized_states(
    problem: ForwardProblem,
    theta: Params,
    h: Direction,
    op: OperatorHandle | None = None,
    base_states: list[Field] | None = None,
) -> list[Field]:
    """phi_j solving D(theta) phi_j = -B(u_j) h, one solve per sample."""
    if op is None:
        op = assemble(theta)
    if base_states is None:
        base_states = states(problem, theta, op=op)
    th_dir = _theta_direction(theta, h)
    rhs = np.column_stack([-apply_B(u, th_dir).values for u in base_states])
    phi = op.solve_matrix(rhs)
    return [Field(problem.grid, phi[:, j]) for j in range(phi.shape[1])]


def jacobian_apply(
    problem: ForwardProblem,
    theta: Params,
    h: Direction,
    op: OperatorHandle | None = None,
    base_states: list[Field] | None = None,
) -> CovKernel:
    """F'(theta) h = (1/J) sum_j u_j conj(phi_j)^T + phi_j conj(u_j)^T."""
    if op is None:
        op = assemble(theta)
    if problem.mode == "ensemble":
        if base_states is None:
            base_states = states(problem, theta, op=op)
        phi = linearized_states(problem, theta, h, op=op, base_states=base_states)
        u_mat = np.column_stack([u.values for u in base_states])
        p_mat = np.column_stack([p.values for p in phi])
        J = u_mat.shape[1]
        raw = (u_mat @ p_mat.conj().T + p_mat @ u_mat.conj().T) / J
    else:
        from .model import direction_operator
        from .stochastic import covariance_pushforward

        cov = covariance_pushforward(op, problem.source_cov.kernel)
        m_h = direction_operator(problem.grid, _theta_direction(theta, h))
        z = op.solve_matrix(m_h @ cov.values)
        raw = -(z + z.conj().T)
    return CovKernel(problem.grid, (raw + raw.conj().T) / 2.0, hermitian=True)


def jacobian_factors(base_states: list[Field], lin_states: list[Field]) -> list[tuple[Field, Field]]:
    """Separable factors of F'(theta) h, 2J terms (u_j/J, phi_j), (phi_j/J, u_j)."""
    J = len(base_states)
    out = []
    for u, p in zip(base_states, lin_states):
        out.append((Field(u.grid, u.values / J), p))
        out.append((Field(u.grid, p.values / J), u))
    return out


def misfit(problem: ForwardProblem, theta: Params, data: CovKernel) -> float:
    """0.5 ||F(theta) - data||_Y^2."""
    diff = forward(problem, theta).values - data.values
    return 0.5 * data_norm(problem.grid, diff) ** 2


def gradient_of_misfit(
    problem: ForwardProblem,
    theta: Params,
    data: CovKernel,
    riesz: RieszMap = RieszMap(),
    route: str = "lowrank",
) -> Direction:
    """F'(theta)^* (F(theta) - data), the misfit gradient in the X inner product."""
    op = assemble(theta)
    op_adj = assemble_adjoint(theta)
    cov = forward(problem, theta, op=op)
    r = CovKernel(problem.grid, cov.values - data.values, hermitian=data.hermitian)
    if route == "slicewise":
        psi = extended_adjoint_slicewise(op_adj, r)
    else:
        psi = extended_adjoint_lowrank(op_adj, hermitian_factors(r))
    return backprop(theta, cov, psi, riesz)


def linearization_error(problem: ForwardProblem, theta: Params, theta_tilde: Params) -> float:
    """E_lin = ||F(theta) - F(theta_tilde) - F'(theta)(theta - theta_tilde)||_Y.

    The derivative is taken at theta, the perturbed point, with the
    difference direction theta - theta_tilde.
    """
    h = _param_difference(theta, theta_tilde)
    op = assemble(theta)
    f_theta = forward(problem, theta, op=op)
    f_tilde = forward(problem, theta_tilde)
    lin = jacobian_apply(problem, theta, h, op=op)
    return data_norm(problem.grid, f_theta.values - f_tilde.values - lin.values)


def _param_difference(theta: Params, theta_tilde: Params) -> Direction:
    if isinstance(theta, AbcParams):
        from .model import AbcDirection

        return AbcDirection(
            theta.a - theta_tilde.a, theta.b - theta_tilde.b, theta.c - theta_tilde.c
        )
    return theta.k - theta_tilde.k


@dataclass
class TccScanReport:
    """Scaling scan of the linearization error along one direction.

    Rows are ordered by decreasing perturbation size t. bound_ratio is the
    empirical surrogate E_lin / (|dtheta| |dF| + |dtheta|^2) for the
    constants in the linearization-error bound; the scan reports it but
    asserts only boundedness, never a specific constant.
    """

    t: np.ndarray
    e_lin: np.ndarray
    image_diff: np.ndarray
    cross_term: np.ndarray
    bound_ratio: np.ndarray
    slopes: dict = field(default_factory=dict)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "E_lin", "image_diff", "cross_term", "bound_ratio"])
            for row in zip(self.t, self.e_lin, self.image_diff, self.cross_term, self.bound_ratio):
                writer.writerow([f"{v:.17g}" for v in row])


def _loglog_slope(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def tcc_scan(
    problem: ForwardProblem, theta_tilde: Params, h: Direction, t_list
) -> TccScanReport:
    """Measure E_lin, image difference and cross term along theta_tilde + t h.

    Expected log-log slopes: 2 for E_lin, 1 for the image difference and the
    mixed covariance cov(v - u, u) with v the states at theta_tilde and u
    the states at the perturbed point. Inadmissible perturbation sizes are
    dropped with a warning; at least 4 points must survive.
    """
    t_arr = np.sort(np.asarray(list(t_list), dtype=float))[::-1]
    kept, skipped = [], []
    for t in t_arr:
        if theta_tilde.shifted(h, float(t)).is_admissible():
            kept.append(float(t))
        else:
            skipped.append(float(t))
    if skipped:
        warnings.warn(
            f"dropped {len(skipped)} inadmissible perturbation sizes: {skipped}",
            stacklevel=2,
        )
    if len(kept) < 4:
        raise AdmissibilityError("fewer than 4 admissible scan points remain")

    op_tilde = assemble(theta_tilde)
    f_tilde = forward(problem, theta_tilde, op=op_tilde)
    v_states = states(problem, theta_tilde, op=op_tilde) if problem.mode == "ensemble" else None
    h_norm = direction_norm(problem.grid, _as_real_direction(h))

    rows = []
    for t in kept:
        theta_t = theta_tilde.shifted(h, t)
        op_t = assemble(theta_t)
        f_t = forward(problem, theta_t, op=op_t)
        lin = jacobian_apply(problem, theta_t, _scale_direction(h, t), op=op_t)
        d_vals = f_t.values - f_tilde.values
        image = data_norm(problem.grid, d_vals)
        e_lin = data_norm(problem.grid, d_vals - lin.values)
        if v_states is not None:
            u_states = states(problem, theta_t, op=op_t)
            diff = [Field(problem.grid, v.values - u.values) for v, u in zip(v_states, u_states)]
            cross = data_norm(problem.grid, cross_covariance(diff, u_states).values)
        else:
            cross = np.nan
        d_theta = t * h_norm
        rows.append((t, e_lin, image, cross, e_lin / (d_theta * image + d_theta**2)))

    arr = np.array(rows)
    report = TccScanReport(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4])
    report.slopes = {
        "e_lin": _loglog_slope(report.t, report.e_lin),
        "image_diff": _loglog_slope(report.t, report.image_diff),
        "cross_term": _loglog_slope(report.t, report.cross_term)
        if np.all(np.isfinite(report.cross_term))
        else float("nan"),
    }
    return report


def _scale_direction(h: Direction, t: float) -> Direction:
    if isinstance(h, np.ndarray):
        return t * h
    return h * t


def _as_real_direction(h: Direction) -> Direction:
    if isinstance(h, np.ndarray):
        return np.asarray(h).real
    return h.real()
