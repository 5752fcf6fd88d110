"""Named analytic parameter profiles so experiments need no external data.

Families:
    constant:       {"profile": "constant", "value": v}
    gaussian-bump:  {"profile": "gaussian-bump", "center": [...], "width": w,
                     "amplitude": A, "offset": o}
    sinusoid:       {"profile": "sinusoid", "modes": [m1, ...],
                     "amplitude": A, "offset": o}

All families have analytic gradients, which the manufactured-solution
solver test needs.
"""

from __future__ import annotations

import numpy as np

from .grid import Grid

PROFILE_NAMES = ("constant", "gaussian-bump", "sinusoid")


def _check(spec: dict) -> str:
    name = spec.get("profile")
    if name not in PROFILE_NAMES:
        raise ValueError(f"unknown profile {name!r}; expected one of {PROFILE_NAMES}")
    return name


def profile_values(spec: dict, grid: Grid) -> np.ndarray:
    name = _check(spec)
    coords = grid.node_coords()
    if name == "constant":
        return np.full(grid.n_total, float(spec["value"]))
    if name == "gaussian-bump":
        center = np.asarray(spec["center"], dtype=float)
        width = float(spec["width"])
        amp = float(spec["amplitude"])
        off = float(spec.get("offset", 0.0))
        d2 = sum((x - c) ** 2 for x, c in zip(coords, center))
        return off + amp * np.exp(-d2 / (2.0 * width**2))
    modes = np.asarray(spec["modes"], dtype=float)
    amp = float(spec["amplitude"])
    off = float(spec.get("offset", 0.0))
    prod = np.ones(grid.n_total)
    for x, m in zip(coords, modes):
        prod = prod * np.sin(np.pi * m * x / grid.extent)
    return off + amp * prod


def profile_gradient(spec: dict, grid: Grid) -> np.ndarray:
    """Analytic gradient, shape (dim, n_total)."""
    name = _check(spec)
    coords = grid.node_coords()
    out = np.zeros((grid.dim, grid.n_total))
    if name == "constant":
        return out
    if name == "gaussian-bump":
        center = np.asarray(spec["center"], dtype=float)
        width = float(spec["width"])
        amp = float(spec["amplitude"])
        d2 = sum((x - c) ** 2 for x, c in zip(coords, center))
        core = amp * np.exp(-d2 / (2.0 * width**2))
        for ax in range(grid.dim):
            out[ax] = core * (-(coords[ax] - center[ax]) / width**2)
        return out
    modes = np.asarray(spec["modes"], dtype=float)
    amp = float(spec["amplitude"])
    for ax in range(grid.dim):
        term = np.full(grid.n_total, amp)
        for other, (x, m) in enumerate(zip(coords, modes)):
            w = np.pi * m / grid.extent
            if other == ax:
                term = term * w * np.cos(w * x)
            else:
                term = term * np.sin(w * x)
        out[ax] = term
    return out
