"""Batch experiment runner with reproducible JSON configs and file outputs.

Subcommands: forward, adjoint-test, tcc-scan, reconstruct, solver-test.
Each reads one JSON config, writes metrics CSVs, raw binaries with JSON
sidecars, rendered figures, and a manifest.json recording the config hash,
seeds, solve counts and wall time. Exit codes: 0 success, 2 config error,
3 admissibility error, 4 numerical failure.

Config schema (task blocks are documented in the README):

    {
      "model": {"kind": "abc" | "bihelmholtz",
                "grid": {"dim": 2, "n_per_axis": 16, "extent": 1.0},
                "params": {...named analytic profiles...}},
      "source": {"kind": "white" | "se", "sigma": 1.0, "ell": 0.2,
                 "J": 8, "seed": 7},
      "task": {"name": "...", ...},
      "output_dir": "out"
    }
"""

from __future__ import annotations

import hashlib
import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__
from .adjoint import (
    RieszMap,
    backprop,
    backprop_direct_reference,
    extended_adjoint_lowrank,
    extended_adjoint_slicewise,
    hermitian_factors,
)
from .derivative import jacobian_apply, tcc_scan
from .forward import ForwardProblem, data_norm, forward, residual, states
from .grid import Field, Grid
from .io import save_field, save_kernel, write_metrics_csv
from .model import (
    GLOBAL_SOLVES,
    AbcDirection,
    AbcParams,
    AdmissibilityError,
    BiHelmholtzParam,
    InvertibilityError,
    assemble,
    assemble_adjoint,
    direction_dot,
    direction_norm,
    solve,
)
from .profiles import profile_gradient, profile_values
from .reconstruct import LandweberConfig, landweber, make_noisy_data
from .stochastic import (
    SourceCovariance,
    make_se_covariance,
    make_white_covariance,
    sample_covariance,
    sample_ensemble,
    standard_complex_normal,
)

TASKS = ("forward", "adjoint-test", "tcc-scan", "reconstruct", "solver-test")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_ADMISSIBILITY = 3
EXIT_NUMERICAL = 4


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------


def _load_config(config_path) -> dict:
    path = Path(config_path)
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot parse config {path}: {err}") from err
    for key in ("model", "source", "task"):
        if key not in cfg:
            raise ConfigError(f"config missing required section {key!r}")
    if cfg["task"].get("name") not in TASKS:
        raise ConfigError(f"task.name must be one of {TASKS}")
    return cfg


def _build_grid(model_cfg: dict) -> Grid:
    g = model_cfg.get("grid")
    if not isinstance(g, dict):
        raise ConfigError("model.grid must be an object")
    try:
        return Grid(int(g["dim"]), int(g["n_per_axis"]), float(g.get("extent", 1.0)))
    except (KeyError, ValueError) as err:
        raise ConfigError(f"bad grid: {err}") from err


def _build_params(model_cfg: dict, grid: Grid):
    kind = model_cfg.get("kind")
    p = model_cfg.get("params", {})
    try:
        if kind == "abc":
            a = profile_values(p["a"], grid)
            if p.get("b"):
                b = np.stack([profile_values(spec, grid) for spec in p["b"]])
            else:
                b = np.zeros((grid.dim, grid.n_total))
            c = profile_values(p["c"], grid) if p.get("c") else np.zeros(grid.n_total)
            return AbcParams(
                grid, a, b, c,
                a_lower=float(p.get("a_lower", 1e-3)),
                b_max=p.get("b_max"),
                c_max=p.get("c_max"),
            )
        if kind == "bihelmholtz":
            return BiHelmholtzParam(grid, profile_values(p["k"], grid))
    except (KeyError, ValueError) as err:
        raise ConfigError(f"bad model params: {err}") from err
    raise ConfigError(f"model.kind must be 'abc' or 'bihelmholtz', got {kind!r}")


def _build_source(source_cfg: dict, grid: Grid) -> SourceCovariance:
    kind = source_cfg.get("kind", "white")
    sigma = float(source_cfg.get("sigma", 1.0))
    try:
        if kind == "white":
            return make_white_covariance(grid, sigma)
        if kind == "se":
            return make_se_covariance(grid, sigma, float(source_cfg["ell"]))
    except (KeyError, ValueError) as err:
        raise ConfigError(f"bad source: {err}") from err
    raise ConfigError(f"source.kind must be 'white' or 'se', got {kind!r}")


def _build_problem(cfg: dict, grid: Grid, seed_override=None) -> ForwardProblem:
    src_cfg = cfg["source"]
    source = _build_source(src_cfg, grid)
    seed = int(seed_override if seed_override is not None else src_cfg.get("seed", 0))
    J = int(src_cfg.get("J", 8))
    ensemble = sample_ensemble(source, J, seed)
    return ForwardProblem(cfg["model"]["kind"], grid, source, ensemble, mode="ensemble")


def _riesz_from(task_cfg: dict) -> RieszMap:
    spec = task_cfg.get("riesz", "identity")
    if isinstance(spec, str):
        return RieszMap(spec, spec, spec, spec)
    return RieszMap(**spec)


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _jsonable(obj):
    """Convert numpy scalars/arrays nested in manifest summaries."""
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


# ---------------------------------------------------------------------------
# task implementations
# ---------------------------------------------------------------------------


def _task_forward(cfg, grid, theta, problem, out: Path, threads: int) -> tuple[bool, dict]:
    sts = states(problem, theta)
    kernel = forward(problem, theta)
    for j, u in enumerate(sts):
        save_field(out / f"state_{j:03d}", u)
    save_kernel(out / "covariance", kernel)
    kernel.require_psd()
    rows = [[
        problem.ensemble.J,
        float(np.linalg.norm(kernel.values)),
        data_norm(grid, kernel.values),
        kernel.hermitian_defect(),
        kernel.min_eigenvalue(),
        float(np.trace(kernel.values).real),
    ]]
    write_metrics_csv(
        out / "forward_metrics.csv",
        ["J", "kernel_frobenius", "kernel_ynorm", "hermitian_defect", "min_eigenvalue", "trace"],
        rows,
    )
    from .plots import save_kernel_heatmap

    save_kernel_heatmap(out / "covariance.png", kernel.values)
    return True, {"kernel_ynorm": data_norm(grid, kernel.values), "J": problem.ensemble.J}


def _task_adjoint_test(cfg, grid, theta, problem, out: Path, threads: int) -> tuple[bool, dict]:
    task = cfg["task"]
    pairs = int(task.get("pairs", 20))
    tol = float(task.get("tolerance", 1e-8))
    seed = int(task.get("seed", 0))
    riesz = _riesz_from(task)

    op = assemble(theta)
    op_adj = assemble_adjoint(theta)
    base = states(problem, theta, op=op)
    cov = forward(problem, theta, op=op)

    rows = []
    rel_errors = []
    for trial in range(pairs):
        rng = np.random.default_rng((seed, 31, trial))
        h = _random_direction(theta, grid, rng)
        y = sample_covariance(
            [Field(grid, standard_complex_normal(rng, grid.n_total)) for _ in range(3)]
        )
        kern = jacobian_apply(problem, theta, h, op=op, base_states=base)
        lhs = grid.weight**2 * float(np.vdot(y.values, kern.values).real)
        psi = extended_adjoint_lowrank(op_adj, hermitian_factors(y))
        grad = backprop(theta, cov, psi, riesz)
        rhs = direction_dot(grid, h, grad)
        scale = direction_norm(grid, h) * data_norm(grid, y.values)
        rel = abs(lhs - rhs) / scale
        rel_errors.append(rel)
        rows.append([trial, lhs, rhs, rel])
    write_metrics_csv(out / "adjoint_metrics.csv", ["pair", "lhs", "rhs", "rel_error"], rows)

    # two-route check on one random Hermitian kernel
    rng = np.random.default_rng((seed, 77))
    y = sample_covariance(
        [Field(grid, standard_complex_normal(rng, grid.n_total)) for _ in range(4)]
    )
    op_adj2 = assemble_adjoint(theta)
    psi_slice = extended_adjoint_slicewise(op_adj2, y, threads=threads)
    psi_low = extended_adjoint_lowrank(op_adj2, hermitian_factors(y))
    route_gap = float(
        np.linalg.norm(psi_slice.psi.values - psi_low.psi.values)
        / max(np.linalg.norm(psi_slice.psi.values), 1e-300)
    )

    summary = {
        "pairs": pairs,
        "tolerance": tol,
        "max_rel_error": max(rel_errors),
        "two_route_rel_gap": route_gap,
    }

    if task.get("baseline", True):
        r, _ = residual(problem, theta, y)
        adj_ext = assemble_adjoint(theta)
        before = adj_ext.solve_count
        psi = extended_adjoint_slicewise(adj_ext, r, threads=threads)
        backprop(theta, cov, psi, riesz)
        extended_solves = adj_ext.solve_count - before
        adj_base = assemble_adjoint(theta)
        before = adj_base.solve_count
        backprop_direct_reference(theta, cov, r, adj_base, riesz)
        baseline_solves = adj_base.solve_count - before
        summary["backprop_solves"] = {
            "extended": extended_solves,
            "baseline": baseline_solves,
            "route": "slicewise",
            "ratio": extended_solves / baseline_solves,
        }

    from .plots import save_adjoint_errors

    save_adjoint_errors(out / "adjoint_errors.png", np.array(rel_errors), tol)
    ok = max(rel_errors) <= tol and route_gap <= 1e-9
    return ok, summary


def _random_direction(theta, grid, rng):
    n = grid.n_total
    if isinstance(theta, AbcParams):
        return AbcDirection(
            rng.standard_normal(n), rng.standard_normal((grid.dim, n)), rng.standard_normal(n)
        )
    return rng.standard_normal(n)


def _task_tcc_scan(cfg, grid, theta, problem, out: Path, threads: int) -> tuple[bool, dict]:
    task = cfg["task"]
    block = task.get("block", "c")
    dir_profile = task.get(
        "direction",
        {"profile": "gaussian-bump", "center": [grid.extent / 2] * grid.dim,
         "width": 0.15 * grid.extent, "amplitude": 1.0},
    )
    vals = profile_values(dir_profile, grid)
    if isinstance(theta, AbcParams):
        h = AbcDirection.zeros(grid)
        if block == "a":
            h.a[:] = vals
        elif block == "b":
            h.b[0, :] = vals
        else:
            h.c[:] = vals
    else:
        h = vals
    t_list = task.get("t_list") or list(
        np.geomspace(task.get("t_max", 1e-1), task.get("t_min", 1e-3), int(task.get("num_points", 5)))
    )
    report = tcc_scan(problem, theta, h, t_list)
    report.write_csv(out / "tcc_scan.csv")

    from .plots import save_scan_loglog

    save_scan_loglog(out / "tcc_scan.png", report)

    lo_q, hi_q = task.get("e_lin_slope", (1.9, 2.1))
    lo_l, hi_l = task.get("first_order_slope", (0.9, 1.1))
    spread_max = float(task.get("ratio_spread_max", 10.0))
    spread = float(report.bound_ratio.max() / report.bound_ratio.min())
    ok = (
        lo_q <= report.slopes["e_lin"] <= hi_q
        and lo_l <= report.slopes["image_diff"] <= hi_l
        and lo_l <= report.slopes["cross_term"] <= hi_l
        and spread < spread_max
    )
    return ok, {"slopes": report.slopes, "bound_ratio_spread": spread}


def _task_reconstruct(cfg, grid, theta_true, problem, out: Path, threads: int) -> tuple[bool, dict]:
    task = cfg["task"]
    noise_level = float(task.get("noise_level", 0.0))
    clean_states = states(problem, theta_true)
    data, delta = make_noisy_data(clean_states, noise_level, int(task.get("seed", 0)))
    blocks = task.get("blocks")
    config = LandweberConfig(
        mu=task.get("mu", "auto"),
        k_max=int(task.get("k_max", 200)),
        tau=float(task.get("tau", 1.5)),
        delta=delta,
        riesz=_riesz_from(task),
        seed=int(task.get("seed", 0)),
        route=task.get("route", "lowrank"),
        blocks=tuple(blocks) if blocks else None,
    )
    theta0 = _initial_guess(cfg, task, grid)
    theta_fin, trace = landweber(problem, data, config, theta0, theta_true=theta_true)
    trace.write_csv(out / "landweber_trace.csv")
    if isinstance(theta_fin, AbcParams):
        save_field(out / "reconstruction_c", Field(grid, theta_fin.c.astype(complex)))
        save_field(out / "reconstruction_a", Field(grid, theta_fin.a.astype(complex)))
        truth_vals, recon_vals, label = theta_true.c, theta_fin.c, "c"
    else:
        save_field(out / "reconstruction_k", Field(grid, theta_fin.k.astype(complex)))
        truth_vals, recon_vals, label = theta_true.k, theta_fin.k, "k"

    from .plots import save_field_pair, save_trace

    save_trace(out / "landweber_trace.png", trace, tau_delta=config.tau * delta)
    save_field_pair(out / "reconstruction.png", grid, truth_vals, recon_vals, label)

    res = trace.residuals
    summary = {
        "stop_reason": trace.stop_reason,
        "stopping_index": trace.stopping_index,
        "delta": delta,
        "initial_residual": float(res[0]),
        "final_residual": float(res[-1]),
        "initial_param_error": float(trace.param_errors[0]),
        "final_param_error": float(trace.param_errors[-1]),
    }
    ok = trace.stop_reason in ("discrepancy", "k_max") and res[-1] <= res[0]
    checks = task.get("assert", {})
    if "monotone_first" in checks:
        m = int(checks["monotone_first"])
        ok = ok and bool(np.all(np.diff(res[: m + 1]) < 0))
    if "final_error_ratio_max" in checks:
        ratio = trace.param_errors[-1] / trace.param_errors[0]
        ok = ok and ratio <= float(checks["final_error_ratio_max"])
    if checks.get("require_discrepancy"):
        ok = ok and trace.stop_reason == "discrepancy"
    return ok, summary


def _initial_guess(cfg, task, grid):
    kind = cfg["model"]["kind"]
    init = task.get("init")
    if init is None:
        raise ConfigError("reconstruct task needs an 'init' parameter block")
    return _build_params({"kind": kind, "params": init, "grid": cfg["model"]["grid"]}, grid)


def _task_solver_test(cfg, grid, theta, problem, out: Path, threads: int) -> tuple[bool, dict]:
    task = cfg["task"]
    n_values = [int(n) for n in task.get("n_values", (16, 32))]
    window = task.get("ratio_window", (3.5, 4.5))
    model_cfg = cfg["model"]
    errors = []
    for n in n_values:
        g = Grid(grid.dim, n, grid.extent)
        th = _build_params({**model_cfg, "grid": {"dim": g.dim, "n_per_axis": n, "extent": g.extent}}, g)
        err = _manufactured_error(g, th, model_cfg["params"])
        errors.append(err)
    rows = [[n, Grid(grid.dim, n, grid.extent).h, e] for n, e in zip(n_values, errors)]
    write_metrics_csv(out / "solver_metrics.csv", ["n_per_axis", "h", "l2_error"], rows)
    ratios = [errors[i] / errors[i + 1] for i in range(len(errors) - 1)]

    from .plots import save_convergence

    save_convergence(out / "solver_convergence.png", np.array(n_values), np.array(errors))
    ok = all(window[0] <= r <= window[1] for r in ratios)
    return ok, {"errors": errors, "ratios": ratios, "window": list(window)}


def _manufactured_error(grid: Grid, theta, params_cfg: dict) -> float:
    """L2 error of the discrete solve against an analytic manufactured solution.

    abc uses the product of sines (Dirichlet-compatible); bi-Helmholtz uses
    the product of squared sines, which also has vanishing normal derivative
    as the clamped boundary requires.
    """
    coords = grid.node_coords()
    w = np.pi / grid.extent
    if isinstance(theta, AbcParams):
        u = np.ones(grid.n_total)
        for ax in range(grid.dim):
            u = u * np.sin(w * coords[ax])
        grads = []
        for ax in range(grid.dim):
            g = np.full(grid.n_total, w)
            for other in range(grid.dim):
                g = g * (np.cos(w * coords[other]) if other == ax else np.sin(w * coords[other]))
            grads.append(g)
        lap = -grid.dim * w**2 * u
        grad_a = profile_gradient(params_cfg["a"], grid)
        f = -(theta.a * lap + sum(grad_a[ax] * grads[ax] for ax in range(grid.dim)))
        f = f + sum(theta.b[ax] * grads[ax] for ax in range(grid.dim)) + 1j * theta.c * u
    else:
        s2 = [np.sin(w * x) ** 2 for x in coords]
        c2 = [np.cos(2.0 * w * x) for x in coords]
        u = np.ones(grid.n_total)
        for ax in range(grid.dim):
            u = u * s2[ax]
        def others_product(skip):
            prod = np.ones(grid.n_total)
            for j in range(grid.dim):
                if j not in skip:
                    prod = prod * s2[j]
            return prod
        lap = 2.0 * w**2 * sum(c2[i] * others_product({i}) for i in range(grid.dim))
        bilap = 0.0
        for i in range(grid.dim):
            bilap = bilap - 4.0 * w**2 * c2[i] * others_product({i})
            for k in range(grid.dim):
                if k != i:
                    bilap = bilap + 2.0 * w**2 * c2[i] * c2[k] * others_product({i, k})
        bilap = 2.0 * w**2 * bilap
        f = bilap - theta.k**2 * lap + u
    op = assemble(theta)
    u_h = solve(op, Field(grid, f.astype(complex)))
    return float(np.sqrt(grid.weight * np.sum(np.abs(u_h.values - u) ** 2)))


# ---------------------------------------------------------------------------
# runner
# ---------------------------------------------------------------------------


_TASK_FUNCS = {
    "forward": _task_forward,
    "adjoint-test": _task_adjoint_test,
    "tcc-scan": _task_tcc_scan,
    "reconstruct": _task_reconstruct,
    "solver-test": _task_solver_test,
}


def run(config_path, output=None, threads: int = 1, seed=None) -> int:
    """Execute the configured task; returns the process exit code."""
    t_start = time.perf_counter()
    try:
        cfg = _load_config(config_path)
        grid = _build_grid(cfg["model"])
        theta = _build_params(cfg["model"], grid)
        problem = _build_problem(cfg, grid, seed_override=seed)
    except ConfigError as err:
        click.echo(f"config error: {err}", err=True)
        return EXIT_CONFIG
    except AdmissibilityError as err:
        click.echo(f"admissibility error: {err}", err=True)
        return EXIT_ADMISSIBILITY

    out = Path(output if output is not None else cfg.get("output_dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    GLOBAL_SOLVES.reset()
    task_name = cfg["task"]["name"]
    try:
        ok, summary = _TASK_FUNCS[task_name](cfg, grid, theta, problem, out, threads)
    except AdmissibilityError as err:
        click.echo(f"admissibility error: {err}", err=True)
        return EXIT_ADMISSIBILITY
    except (InvertibilityError, np.linalg.LinAlgError, FloatingPointError) as err:
        click.echo(f"numerical failure: {err}", err=True)
        return EXIT_NUMERICAL

    manifest = {
        "config_sha256": _sha256(config_path),
        "tool_version": __version__,
        "task": task_name,
        "grid": {"dim": grid.dim, "n_per_axis": grid.n_per_axis, "extent": grid.extent},
        "solver": {"factorization": "sparse LU (scipy splu)", "threads": threads},
        "seeds": {
            "source": int(seed if seed is not None else cfg["source"].get("seed", 0)),
            "task": int(cfg["task"].get("seed", 0)),
        },
        "total_solves": GLOBAL_SOLVES.count,
        "wall_time_s": time.perf_counter() - t_start,
        "passed": bool(ok),
        "summary": _jsonable(summary),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    if "backprop_solves" in summary:
        click.echo(solve_count_report(manifest))
    click.echo(f"{task_name}: {'PASS' if ok else 'FAIL'} (outputs in {out})")
    return EXIT_OK if ok else EXIT_FAIL


def solve_count_report(manifest) -> str:
    """Summarize extended-adjoint vs direct-baseline solves per backpropagation."""
    if not isinstance(manifest, dict):
        manifest = json.loads(Path(manifest).read_text(encoding="utf-8"))
    summary = manifest.get("summary", manifest)
    counts = summary.get("backprop_solves")
    if not counts:
        raise ValueError("manifest has no baseline solve counts (run with baseline enabled)")
    ratio = counts["extended"] / counts["baseline"]
    return (
        f"backpropagation solves ({counts.get('route', '?')} route): "
        f"extended={counts['extended']} baseline={counts['baseline']} ratio={ratio:g}"
    )


# ---------------------------------------------------------------------------
# click entry points
# ---------------------------------------------------------------------------


_OPTIONS = [
    click.option("--config", "config_path", required=True, type=click.Path(exists=True),
                 help="JSON experiment config."),
    click.option("--output", type=click.Path(), default=None, help="Output directory override."),
    click.option("--threads", type=int, default=1, show_default=True,
                 help="Worker cap for columnwise solves."),
    click.option("--seed", type=int, default=None, help="Source seed override."),
]


def _with_options(fn):
    for opt in reversed(_OPTIONS):
        fn = opt(fn)
    return fn


@click.group()
@click.version_option(__version__)
def main():
    """Correlation-based passive imaging experiments."""


def _make_command(task_name: str, doc: str):
    @main.command(name=task_name, help=doc)
    @_with_options
    def _cmd(config_path, output, threads, seed, _task=task_name):
        cfg_task = _expect_task(config_path, _task)
        if cfg_task != 0:
            sys.exit(cfg_task)
        sys.exit(run(config_path, output=output, threads=threads, seed=seed))

    return _cmd


def _expect_task(config_path, task_name) -> int:
    try:
        cfg = _load_config(config_path)
    except ConfigError as err:
        click.echo(f"config error: {err}", err=True)
        return EXIT_CONFIG
    if cfg["task"].get("name") != task_name:
        click.echo(
            f"config error: config task is {cfg['task'].get('name')!r}, expected {task_name!r}",
            err=True,
        )
        return EXIT_CONFIG
    return 0


_make_command("forward", "Simulate states and the covariance kernel at the ground truth.")
_make_command("adjoint-test", "Run the adjoint identity suite and solve-count comparison.")
_make_command("tcc-scan", "Scan the linearization error scaling along a direction.")
_make_command("reconstruct", "Landweber reconstruction from (optionally noisy) covariance data.")
_make_command("solver-test", "Manufactured-solution convergence check of the PDE solver.")


if __name__ == "__main__":
    main()
