"""Closed-form references for the linear (p = 2) heat flow.

With constant ``Q = q I`` and ``v``, tensor products of sines are exact
eigenvectors of the discrete operator: the cell-centre gradient splits into
a difference along one axis and averages along the others, and on
``sin(k pi x)`` samples the 1D difference-squared and average-squared
stencils act as multiplication by ``(4/h^2) sin^2(theta/2)`` and
``cos^2(theta/2)`` (``theta = k pi h / L``).  Lumped mass is diagonal, so
the implicit Euler step divides the mode by ``1 + tau lam``.
"""
from __future__ import annotations

import numpy as np

from .grid import GridFunction


def sine_product(grid, modes, amplitude=1.0):
    """Nodal interpolant of ``A prod_i sin(k_i pi (x_i - a_i) / L_i)``."""
    modes = np.broadcast_to(np.asarray(modes, dtype=int), (grid.dim,))
    lo, hi = np.asarray(grid.lower), np.asarray(grid.upper)
    x = grid.node_coords
    vals = amplitude * np.prod(np.sin(modes * np.pi * (x - lo) / (hi - lo)), axis=1)
    return GridFunction.from_callable(grid, lambda _: vals)


def discrete_eigenvalue(grid, modes, q=1.0, v=1.0):
    """Eigenvalue of ``M_v^{-1} K_Q`` on the sine-product mode."""
    modes = np.broadcast_to(np.asarray(modes, dtype=int), (grid.dim,))
    h = np.asarray(grid.spacing)
    L = np.asarray(grid.upper) - np.asarray(grid.lower)
    theta = modes * np.pi * h / L
    diff = 4.0 / h ** 2 * np.sin(theta / 2) ** 2
    avg = np.cos(theta / 2) ** 2
    lam = 0.0
    for i in range(grid.dim):
        lam += diff[i] * np.prod(np.delete(avg, i))
    return q / v * lam


def continuum_eigenvalue(grid, modes, q=1.0, v=1.0):
    modes = np.broadcast_to(np.asarray(modes, dtype=int), (grid.dim,))
    L = np.asarray(grid.upper) - np.asarray(grid.lower)
    return q / v * float(np.sum((modes * np.pi / L) ** 2))


def heat_recurrence(grid, modes, tau, n, q=1.0, v=1.0, amplitude=1.0):
    """Exact implicit Euler iterates ``u_k = u_0 / (1 + tau lam)^k`` for a sine mode."""
    u0 = sine_product(grid, modes, amplitude)
    fac = 1.0 / (1.0 + tau * discrete_eigenvalue(grid, modes, q, v))
    return [GridFunction(grid, u0.values * fac ** k) for k in range(n + 1)]


def heat_continuum(grid, modes, times, q=1.0, v=1.0, amplitude=1.0):
    """Exact continuum solution ``exp(-lam t) u_0`` sampled at the nodes."""
    u0 = sine_product(grid, modes, amplitude)
    lam = continuum_eigenvalue(grid, modes, q, v)
    return [GridFunction(grid, u0.values * np.exp(-lam * t)) for t in times]
