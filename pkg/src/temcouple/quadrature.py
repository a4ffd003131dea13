"""Small deterministic quadrature helpers.

Adaptive Simpson is used for the one-dimensional Gaussian-moment constants
and stationary densities; the cumulative variant integrates pointwise-
evaluable integrands over an explicit (possibly non-uniform) grid with one
Simpson cell per grid interval.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import InputError


def adaptive_simpson(
    f: Callable[[float], float],
    a: float,
    b: float,
    tol: float = 1e-12,
    max_depth: int = 60,
) -> float:
    """Adaptive Simpson integral of ``f`` on ``[a, b]`` to absolute tolerance."""
    if not (np.isfinite(a) and np.isfinite(b)):
        raise InputError("adaptive_simpson requires finite endpoints")
    if a == b:
        return 0.0

    def simpson(lo, hi, flo, fmid, fhi):
        return (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)

    def recurse(lo, hi, flo, fmid, fhi, whole, eps, depth):
        mid = 0.5 * (lo + hi)
        lm = 0.5 * (lo + mid)
        rm = 0.5 * (mid + hi)
        flm = f(lm)
        frm = f(rm)
        left = simpson(lo, mid, flo, flm, fmid)
        right = simpson(mid, hi, fmid, frm, fhi)
        if depth <= 0 or abs(left + right - whole) <= 15.0 * eps:
            return left + right + (left + right - whole) / 15.0
        return recurse(lo, mid, flo, flm, fmid, left, eps / 2.0, depth - 1) + recurse(
            mid, hi, fmid, frm, fhi, right, eps / 2.0, depth - 1
        )

    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = simpson(a, b, fa, fm, fb)
    return recurse(a, b, fa, fm, fb, whole, tol, max_depth)


def cumulative_cell_simpson(f: Callable[[np.ndarray], np.ndarray], grid: np.ndarray) -> np.ndarray:
    """Cumulative integral of ``f`` along ``grid`` (one Simpson cell per interval).

    ``f`` must accept an array of abscissae; midpoints are evaluated
    analytically, so the rule is locally fifth-order on each cell.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise InputError("grid must be 1-D strictly increasing with >= 2 nodes")
    mids = 0.5 * (grid[:-1] + grid[1:])
    fl = f(grid[:-1])
    fm = f(mids)
    fr = f(grid[1:])
    cells = (grid[1:] - grid[:-1]) / 6.0 * (fl + 4.0 * fm + fr)
    out = np.empty_like(grid)
    out[0] = 0.0
    np.cumsum(cells, out=out[1:])
    return out
