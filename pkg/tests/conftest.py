import numpy as np
import pytest

from passim import (
    AbcDirection,
    AbcParams,
    BiHelmholtzParam,
    Field,
    ForwardProblem,
    Grid,
    make_white_covariance,
    sample_ensemble,
)


def random_field(grid: Grid, rng: np.random.Generator) -> Field:
    return Field(grid, rng.standard_normal(grid.n_total) + 1j * rng.standard_normal(grid.n_total))


def random_abc_params(grid: Grid, rng: np.random.Generator, with_b: bool = True) -> AbcParams:
    n = grid.n_total
    a = 1.0 + 0.4 * rng.random(n)
    # stay well inside the default radii (a_lower=0.4) so small shifts remain admissible
    b_scale = 0.5 * 0.4 / (2.0 * grid.extent)
    b = b_scale * (2 * rng.random((grid.dim, n)) - 1) if with_b else np.zeros((grid.dim, n))
    c = 0.3 * (2 * rng.random(n) - 1)
    return AbcParams(grid, a, b, c, a_lower=0.4)


def random_abc_direction(grid: Grid, rng: np.random.Generator) -> AbcDirection:
    n = grid.n_total
    return AbcDirection(
        rng.standard_normal(n), rng.standard_normal((grid.dim, n)), rng.standard_normal(n)
    )


def smooth_bump(grid: Grid, amplitude: float = 1.0, width: float = 0.15, offset=None) -> np.ndarray:
    coords = grid.node_coords()
    center = offset if offset is not None else [0.5 * grid.extent] * grid.dim
    d2 = sum((x - c) ** 2 for x, c in zip(coords, center))
    return amplitude * np.exp(-d2 / (2.0 * (width * grid.extent) ** 2))


def bihelmholtz_param(grid: Grid, contrast: float = 0.4) -> BiHelmholtzParam:
    return BiHelmholtzParam(grid, 1.0 + contrast * smooth_bump(grid, width=0.2))


def white_problem(grid: Grid, J: int = 4, seed: int = 3, sigma: float = 1.0) -> ForwardProblem:
    cov = make_white_covariance(grid, sigma)
    ensemble = sample_ensemble(cov, J, seed)
    return ForwardProblem("abc", grid, cov, ensemble, mode="ensemble")


def bihelmholtz_problem(grid: Grid, J: int = 4, seed: int = 3) -> ForwardProblem:
    cov = make_white_covariance(grid, 1.0)
    ensemble = sample_ensemble(cov, J, seed)
    return ForwardProblem("bihelmholtz", grid, cov, ensemble, mode="ensemble")


@pytest.fixture
def grid1d() -> Grid:
    return Grid(1, 12)


@pytest.fixture
def grid2d() -> Grid:
    return Grid(2, 8)
