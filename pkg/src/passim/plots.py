"""Figure rendering for the CLI report path.

Every task saves PNG figures next to its CSV outputs. Figures are
presentation artifacts only; the CSVs and binaries remain the canonical,
byte-deterministic outputs.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({
    "figure.figsize": (5.2, 3.6),
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 130,
})


def _finish(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def save_kernel_heatmap(path, values: np.ndarray, title: str = "covariance kernel") -> Path:
    fig, ax = plt.subplots()
    im = ax.imshow(np.abs(values), origin="lower", cmap="viridis")
    ax.set_xlabel("node index x'")
    ax.set_ylabel("node index x")
    ax.set_title(title)
    ax.grid(False)
    fig.colorbar(im, ax=ax, label="|kernel|")
    return _finish(fig, path)


def save_adjoint_errors(path, rel_errors: np.ndarray, tol: float) -> Path:
    fig, ax = plt.subplots()
    ax.semilogy(np.arange(1, len(rel_errors) + 1), rel_errors, "o")
    ax.axhline(tol, color="crimson", ls="--", label=f"tolerance {tol:g}")
    ax.set_xlabel("trial")
    ax.set_ylabel("relative identity error")
    ax.set_title("adjoint dot-product test")
    ax.legend()
    return _finish(fig, path)


def save_scan_loglog(path, report) -> Path:
    fig, ax = plt.subplots()
    for name, series in (
        ("E_lin", report.e_lin),
        ("image diff", report.image_diff),
        ("cross term", report.cross_term),
    ):
        if np.all(np.isfinite(series)):
            slope = report.slopes.get(
                {"E_lin": "e_lin", "image diff": "image_diff", "cross term": "cross_term"}[name]
            )
            ax.loglog(report.t, series, "o-", label=f"{name} (slope {slope:.2f})")
    ax.set_xlabel("perturbation size t")
    ax.set_ylabel("data-space norm")
    ax.set_title("linearization-error scaling")
    ax.legend()
    return _finish(fig, path)


def save_trace(path, trace, tau_delta: float = 0.0) -> Path:
    fig, ax = plt.subplots()
    it = [r["iteration"] for r in trace.records]
    ax.semilogy(it, trace.residuals, label="residual")
    errs = trace.param_errors
    if np.all(np.isfinite(errs)):
        ax.semilogy(it, errs, label="parameter error")
    if tau_delta > 0:
        ax.axhline(tau_delta, color="crimson", ls="--", label="tau * delta")
    ax.set_xlabel("iteration")
    ax.set_ylabel("norm")
    ax.set_title(f"Landweber ({trace.stop_reason} stop)")
    ax.legend()
    return _finish(fig, path)


def save_convergence(path, ns: np.ndarray, errors: np.ndarray) -> Path:
    fig, ax = plt.subplots()
    hs = 1.0 / (np.asarray(ns, dtype=float) + 1.0)
    ax.loglog(hs, errors, "o-", label="L2 error")
    ax.loglog(hs, errors[0] * (hs / hs[0]) ** 2, "--", label="order 2 reference")
    ax.set_xlabel("h")
    ax.set_ylabel("error")
    ax.set_title("manufactured-solution convergence")
    ax.legend()
    return _finish(fig, path)


def save_field_pair(path, grid, truth: np.ndarray, recon: np.ndarray, label: str) -> Path:
    if grid.dim == 2:
        shape = grid.shape
        fig, axes = plt.subplots(1, 2, figsize=(7.4, 3.2))
        vmin = min(truth.min(), recon.min())
        vmax = max(truth.max(), recon.max())
        for ax, vals, name in zip(axes, (truth, recon), ("truth", "reconstruction")):
            im = ax.imshow(vals.reshape(shape).T, origin="lower", vmin=vmin, vmax=vmax,
                           extent=(0, grid.extent, 0, grid.extent))
            ax.set_title(f"{label} {name}")
            ax.grid(False)
        fig.colorbar(im, ax=axes.tolist(), shrink=0.85)
    else:
        fig, ax = plt.subplots()
        x = grid.axis_coords()
        ax.plot(x, truth, label="truth")
        ax.plot(x, recon, "--", label="reconstruction")
        ax.set_xlabel("x")
        ax.set_title(label)
        ax.legend()
    return _finish(fig, path)


def save_singular_values(path, sv: np.ndarray) -> Path:
    fig, ax = plt.subplots()
    ax.semilogy(np.arange(1, len(sv) + 1), sv, "o-")
    ax.set_xlabel("mode")
    ax.set_ylabel("singular value")
    ax.set_title("finite-difference Jacobian spectrum")
    return _finish(fig, path)
