"""Landweber iteration with discrepancy stopping and noise generation.

Noise is applied to the states before correlating, so noisy data retains
the Hermitian PSD covariance structure that the backpropagator relies on.
The step size is either fixed or estimated once by power iteration on
F'(theta_0)^* F'(theta_0); every iterate is projected back onto the
admissible set by pointwise clamping.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np

from .adjoint import (
    RieszMap,
    backprop,
    extended_adjoint_lowrank,
    extended_adjoint_slicewise,
    hermitian_factors,
)
from .derivative import jacobian_apply, jacobian_factors, linearized_states
from .forward import ForwardProblem, data_norm, forward, states
from .grid import Field
from .model import (
    GLOBAL_SOLVES,
    Direction,
    Params,
    assemble,
    assemble_adjoint,
    direction_norm,
)
from .stochastic import CovKernel, sample_covariance, standard_complex_normal


@dataclass(frozen=True)
class LandweberConfig:
    """Settings for the Landweber loop.

    mu is a fixed step size or "auto" (power-iteration estimate at theta_0,
    mu = 0.9 / ||F'(theta_0)||^2). tau > 1 is required whenever delta > 0.
    route selects how the extended adjoint state is computed per iteration;
    "lowrank" uses the eigendecomposition of the residual (rank <= 2J for
    ensemble data) and is the cheaper default.
    """

    mu: float | str = "auto"
    k_max: int = 200
    tau: float = 1.5
    delta: float = 0.0
    riesz: RieszMap = RieszMap()
    projection: bool = True
    seed: int = 0
    route: str = "lowrank"
    blocks: tuple[str, ...] | None = None  # None updates every block
    power_iters: int = 20
    divergence_patience: int = 5
    divergence_margin: float = 0.1

    def __post_init__(self):
        if self.mu != "auto":
            if not (isinstance(self.mu, (int, float)) and self.mu > 0):
                raise ValueError("mu must be positive or 'auto'")
        if self.delta > 0 and not self.tau > 1:
            raise ValueError("tau must exceed 1 when delta > 0")
        if self.route not in ("lowrank", "slicewise"):
            raise ValueError(f"unknown route {self.route!r}")
        if self.blocks is not None:
            bad = set(self.blocks) - {"a", "b", "c"}
            if bad:
                raise ValueError(f"unknown parameter blocks {sorted(bad)}")


@dataclass
class IterationTrace:
    records: list[dict] = dc_field(default_factory=list)
    stop_reason: str = "k_max"

    @property
    def residuals(self) -> np.ndarray:
        return np.array([r["residual"] for r in self.records])

    @property
    def param_errors(self) -> np.ndarray:
        return np.array([r["param_error"] for r in self.records])

    @property
    def stopping_index(self) -> int:
        return self.records[-1]["iteration"]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                ["iteration", "residual", "param_error", "mu", "solves_cumulative", "stop_reason"]
            )
            last = len(self.records) - 1
            for i, rec in enumerate(self.records):
                writer.writerow(
                    [
                        rec["iteration"],
                        f"{rec['residual']:.17g}",
                        f"{rec['param_error']:.17g}" if rec["param_error"] == rec["param_error"] else "",
                        f"{rec['mu']:.17g}",
                        rec["solves_cumulative"],
                        self.stop_reason if i == last else "",
                    ]
                )


def make_noisy_data(
    clean_states: Sequence[Field], noise_level: float, seed: int
) -> tuple[CovKernel, float]:
    """Perturb each state sample, then correlate.

    Adds circularly-symmetric complex Gaussian noise with standard deviation
    noise_level times the RMS amplitude of the clean states, so noise_level
    is a relative pre-correlation level. Returns the Hermitian PSD noisy
    kernel and the realized data-space distance to the clean kernel.
    """
    if noise_level < 0:
        raise ValueError("noise_level must be >= 0")
    grid = clean_states[0].grid
    clean = sample_covariance(clean_states)
    if noise_level == 0:
        return clean, 0.0
    rms = float(np.sqrt(np.mean([np.mean(np.abs(u.values) ** 2) for u in clean_states])))
    noisy = []
    for j, u in enumerate(clean_states):
        rng = np.random.default_rng((int(seed), 7001, j))
        z = standard_complex_normal(rng, grid.n_total)
        noisy.append(Field(grid, u.values + noise_level * rms * z))
    kernel = sample_covariance(noisy)
    delta = data_norm(grid, kernel.values - clean.values)
    return kernel, delta


def estimate_step(
    problem: ForwardProblem,
    theta0: Params,
    riesz: RieszMap = RieszMap(),
    iters: int = 20,
    seed: int = 0,
    route: str = "lowrank",
    blocks: tuple[str, ...] | None = None,
) -> float:
    """Power iteration on h -> F'(theta0)^* F'(theta0) h; returns 0.9 / L.

    L estimates ||F'(theta0)||^2 in the (X, Y) norms over the active
    parameter blocks, so mu L < 1 by construction and the classical
    step-size condition holds.
    """
    op = assemble(theta0)
    op_adj = assemble_adjoint(theta0)
    cov = forward(problem, theta0, op=op)
    base = states(problem, theta0, op=op) if problem.mode == "ensemble" else None
    h = _mask_blocks(_random_direction(problem, theta0, seed), blocks)
    h = _normalize(problem, h)
    lam = 0.0
    for _ in range(iters):
        kern = jacobian_apply(problem, theta0, h, op=op, base_states=base)
        if route == "lowrank" and base is not None:
            phi = linearized_states(problem, theta0, h, op=op, base_states=base)
            psi = extended_adjoint_lowrank(op_adj, jacobian_factors(base, phi))
        elif route == "lowrank":
            psi = extended_adjoint_lowrank(op_adj, hermitian_factors(kern))
        else:
            psi = extended_adjoint_slicewise(op_adj, kern)
        g = _mask_blocks(backprop(theta0, cov, psi, riesz), blocks)
        lam = direction_norm(problem.grid, g)
        if lam == 0.0:
            raise ValueError("power iteration hit the zero operator")
        h = _scale(g, 1.0 / lam)
    return 0.9 / lam


def _mask_blocks(h: Direction, blocks: tuple[str, ...] | None) -> Direction:
    """Zero the parameter blocks that are not being inverted for."""
    from .model import AbcDirection

    if blocks is None or isinstance(h, np.ndarray):
        return h
    return AbcDirection(
        h.a if "a" in blocks else np.zeros_like(h.a),
        h.b if "b" in blocks else np.zeros_like(h.b),
        h.c if "c" in blocks else np.zeros_like(h.c),
    )


def _random_direction(problem: ForwardProblem, theta: Params, seed: int) -> Direction:
    from .model import AbcDirection, AbcParams

    rng = np.random.default_rng((int(seed), 4242))
    n = problem.grid.n_total
    if isinstance(theta, AbcParams):
        return AbcDirection(
            rng.standard_normal(n), rng.standard_normal((problem.grid.dim, n)), rng.standard_normal(n)
        )
    return rng.standard_normal(n)


def _normalize(problem: ForwardProblem, h: Direction) -> Direction:
    return _scale(h, 1.0 / direction_norm(problem.grid, h))


def _scale(h: Direction, s: float) -> Direction:
    if isinstance(h, np.ndarray):
        return s * h
    return h * s


def landweber(
    problem: ForwardProblem,
    data: CovKernel,
    config: LandweberConfig,
    theta0: Params,
    theta_true: Params | None = None,
) -> tuple[Params, IterationTrace]:
    """Iterate theta_{k+1} = theta_k - mu F'(theta_k)^* (F(theta_k) - data).

    Stops at the discrepancy level tau * delta when delta > 0, at k_max, or
    once the residual has sat divergence_margin above its running best for
    divergence_patience consecutive iterations. The iterate is clamped onto
    the admissible set after every step, so every recorded iterate is
    admissible.
    """
    theta = theta0.clamped() if config.projection else theta0
    trace = IterationTrace()
    solves_at_start = GLOBAL_SOLVES.count
    mu = float(config.mu) if config.mu != "auto" else estimate_step(
        problem, theta, config.riesz, iters=config.power_iters, seed=config.seed,
        route=config.route, blocks=config.blocks,
    )

    grows = 0
    best_res = np.inf
    for k in range(config.k_max + 1):
        op = assemble(theta)
        op_adj = assemble_adjoint(theta)
        cov = forward(problem, theta, op=op)
        r = CovKernel(problem.grid, cov.values - data.values, hermitian=data.hermitian)
        res = data_norm(problem.grid, r.values)
        trace.records.append(
            {
                "iteration": k,
                "residual": res,
                "param_error": _param_error(theta, theta_true),
                "mu": mu,
                "solves_cumulative": GLOBAL_SOLVES.count - solves_at_start,
            }
        )
        if (config.delta > 0 and res <= config.tau * config.delta) or res == 0.0:
            trace.stop_reason = "discrepancy"
            return theta, trace
        # divergence guard: residual clearly above the best achieved level
        # for divergence_patience consecutive iterations. Unstable steps make
        # the residual norm oscillate, so strict per-step growth would never
        # accumulate; the margin keeps benign oscillation around a converged
        # plateau from being mislabeled.
        if not np.isfinite(res) or res >= best_res * (1.0 + config.divergence_margin):
            grows += 1
            if grows >= config.divergence_patience:
                trace.stop_reason = "divergence"
                return theta, trace
        else:
            grows = 0
        best_res = min(best_res, res)
        if k == config.k_max:
            break
        if config.route == "slicewise":
            psi = extended_adjoint_slicewise(op_adj, r)
        else:
            psi = extended_adjoint_lowrank(op_adj, hermitian_factors(r))
        grad = _mask_blocks(backprop(theta, cov, psi, config.riesz), config.blocks)
        theta = theta.shifted(_scale(grad, -mu))
        if config.projection:
            theta = theta.clamped()
    trace.stop_reason = "k_max"
    return theta, trace


def _param_error(theta: Params, theta_true: Params | None) -> float:
    """L2(Omega) distance to the ground truth, Riesz-independent."""
    if theta_true is None:
        return float("nan")
    from .derivative import _param_difference

    diff = _param_difference(theta, theta_true)
    return direction_norm(theta.grid, diff)
