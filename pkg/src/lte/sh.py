"""Real spherical harmonics: projection, reconstruction, and the error-vs-degree study.

Hemispherical functions are extended by zero to the lower hemisphere before
projection. Directions are local (z = surface normal).
"""
from __future__ import annotations

import csv

import numpy as np
from scipy.special import sph_harm_y

from lte.tracer.integrators import GRID_RES, grid_bin_centers, local_to_bin

QUAD_THETA = 64
QUAD_PHI = 128
CSV_HEADER = ["l_max", "mse_r", "mse_g", "mse_b", "overshoot"]


def num_coeffs(l_max):
    return (l_max + 1) ** 2


def sh_basis(l_max, dirs):
    """Orthonormal real SH basis, (n, (l_max+1)^2), index l*l + l + m."""
    d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    theta = np.arccos(np.clip(d[:, 2], -1.0, 1.0))
    phi = np.arctan2(d[:, 1], d[:, 0])
    out = np.empty((len(d), num_coeffs(l_max)))
    for l in range(l_max + 1):  # noqa: E741
        out[:, l * l + l] = sph_harm_y(l, 0, theta, phi).real
        for m in range(1, l + 1):
            y = sph_harm_y(l, m, theta, phi)
            s = np.sqrt(2.0) * (-1.0) ** m
            out[:, l * l + l + m] = s * y.real
            out[:, l * l + l - m] = s * y.imag
    return out


def quadrature(n_theta=QUAD_THETA, n_phi=QUAD_PHI):
    """Product rule over the sphere: Gauss-Legendre in cos(theta), uniform midpoints in phi.

    Returns (dirs (n, 3), weights (n,)). Exact for the SH Gram matrix well past l = 12,
    where a uniform midpoint rule in cos(theta) is off by ~0.1.
    """
    cos_t, wt = np.polynomial.legendre.leggauss(n_theta)
    cos_t, wt = cos_t[::-1], wt[::-1]
    phi = 2 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
    sin_t = np.sqrt(1.0 - cos_t ** 2)
    dirs = np.stack([
        np.outer(sin_t, np.cos(phi)), np.outer(sin_t, np.sin(phi)), np.repeat(cos_t[:, None], n_phi, 1),
    ], axis=-1).reshape(-1, 3)
    return dirs, np.repeat(wt, n_phi) * (2 * np.pi / n_phi)


def grid_function(grid):
    """Piecewise-constant lookup of a hemispherical grid (res, res, C), zero below the horizon."""
    grid = np.asarray(grid, dtype=np.float64)
    res = grid.shape[0]

    def f(dirs):
        dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
        out = np.zeros((len(dirs),) + grid.shape[2:])
        up = dirs[:, 2] > 0
        r, c = local_to_bin(dirs[up], res)
        out[up] = grid[r, c]
        return out

    return f


def sh_project(grid_or_fn, l_max):
    """Coefficients ((l_max+1)^2, C) of a function or hemispherical grid."""
    f = grid_or_fn if callable(grid_or_fn) else grid_function(grid_or_fn)
    dirs, w = quadrature()
    vals = np.asarray(f(dirs), dtype=np.float64)
    if vals.ndim == 1:
        vals = vals[:, None]
    return (sh_basis(l_max, dirs) * w[:, None]).T @ vals


def sh_reconstruct(coeffs, dirs):
    coeffs = np.asarray(coeffs, dtype=np.float64)
    l_max = int(round(np.sqrt(coeffs.shape[0]))) - 1
    if num_coeffs(l_max) != coeffs.shape[0]:
        raise ValueError(f"{coeffs.shape[0]} is not a square coefficient count")
    return sh_basis(l_max, dirs) @ coeffs


def reconstruct_grid(coeffs, res=GRID_RES):
    dirs = grid_bin_centers(res).reshape(-1, 3)
    return sh_reconstruct(coeffs, dirs).reshape(res, res, -1)


def overshoot(recon, reference):
    """Largest excursion of ``recon`` outside the value range of ``reference`` (0 if none)."""
    return float(max(recon.max() - reference.max(), reference.min() - recon.min(), 0.0))


def sh_error_curve(reference, l_max_list, csv_path=None, include_bins=True, res=GRID_RES):
    """Rows of (l_max, per-channel MSE, overshoot) for reconstructions at bin centers.

    ``reference`` is a hemispherical grid, or a callable on local directions that is
    projected directly and sampled at the bin centers to form the reference grid.
    With ``include_bins`` a final row labelled "bins" scores the grid's own
    piecewise-constant basis, which reproduces the reference exactly.
    """
    if callable(reference):
        source = reference
        ref = np.asarray(reference(grid_bin_centers(res).reshape(-1, 3)), dtype=np.float64)
        ref = ref.reshape(res, res, -1)
    else:
        ref = np.asarray(reference, dtype=np.float64)
        if ref.ndim == 2:
            ref = ref[..., None]
        source = ref
    rows = []
    for l_max in l_max_list:
        rec = reconstruct_grid(sh_project(source, l_max), ref.shape[0])
        err = ((rec - ref) ** 2).reshape(-1, ref.shape[-1]).mean(0)
        err = np.resize(err, 3)
        rows.append((l_max, *err.tolist(), overshoot(rec, ref)))
    if include_bins:
        rec = grid_function(ref)(grid_bin_centers(ref.shape[0]).reshape(-1, 3)).reshape(ref.shape)
        err = np.resize(((rec - ref) ** 2).reshape(-1, ref.shape[-1]).mean(0), 3)
        rows.append(("bins", *err.tolist(), overshoot(rec, ref)))
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for r in rows:
                w.writerow([r[0]] + [f"{v:.9g}" for v in r[1:]])
    return rows


def panel_strip(reference_grid, l_max_list):
    """Reference followed by SH reconstructions side by side, (res, res * (n+1), 3)."""
    ref = np.asarray(reference_grid, dtype=np.float64)
    panels = [ref] + [np.maximum(reconstruct_grid(sh_project(ref, l), ref.shape[0]), 0.0) for l in l_max_list]
    return np.concatenate(panels, axis=1)
