"""The concave contraction distance function and its ingredients.

The function is ``f(u) = int_0^u phi(s ^ r1) rho(s ^ r1) ds`` built from

* ``phi(u) = exp(-(2L+1)/(2 c3) * (u^2 + 2u))`` clamped at ``r1``,
* ``Phi(u) = int_0^u phi``,
* ``rho(u) = 1 - 2 cstar int_0^u Phi(s+1)/(c3 phi(s)) ds`` with
  ``cstar = (1/4) (int_0^{r1} Phi(s+1)/(c3 phi(s)) ds)^{-1}``,

so that ``rho`` falls from 1 to exactly 1/2 at ``r1`` and ``f`` is strictly
increasing and concave with ``phi(r1) u / 2 <= f(u) <= u``.

For calibrated models the decay rate ``a = (2L+1)/(2 c3)`` is in the
thousands, so ``1/phi`` spans far more than the double-precision range.
All integrals are therefore evaluated through scaled special functions:
``Phi`` via ``erfcx`` and ``int exp(a(s^2+2s))`` via ``dawsn`` in log space.
Quantities that genuinely underflow (``cstar``, ``phi(r1)``, the slope of
``f`` beyond ``r1``) are carried both as doubles (possibly ``0.0``) and as
logarithms, and order comparisons are done on the logarithms.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import dawsn, erfcx

from .errors import ConstructionError, InputError
from .quadrature import cumulative_cell_simpson

# Relative floor of the geometric grid; the first cell [0, 1e-9 * r1] is
# covered by a single linear segment (f is linear there to ~a*u_min).
GRID_FLOOR = 1e-9
DEFAULT_GRID_N = 4096
MAX_GRID_N = 2**21
REFINE_TOL = 1e-8

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


def log_concave_weight(u, L: float, c3: float, r1: float):
    """``log phi(u)``; exact for arguments far beyond double-precision range."""
    u = np.minimum(np.asarray(u, dtype=float), r1)
    a = (2.0 * L + 1.0) / (2.0 * c3)
    return -a * (u * u + 2.0 * u)


def concave_weight(u, L: float, c3: float, r1: float):
    """``phi(u)``, constant for ``u >= r1``; may underflow to 0 for stiff c3."""
    return np.exp(log_concave_weight(u, L, c3, r1))


def _log_erfcx(x):
    return np.log(erfcx(x))


def _phi_cumulative(u, a: float):
    """``Phi(u) = int_0^u exp(-a(s^2+2s)) ds`` without overflow or cancellation.

    Uses ``Phi(u) = Phi_inf * (1 - exp(-t))`` with
    ``t = a u (u+2) + log erfcx(sqrt(a)) - log erfcx(sqrt(a)(u+1))``; for
    small ``a u (u+2)`` the log difference loses precision, so a fixed
    Gauss-Legendre rule on the (then nearly flat) integrand takes over.
    """
    u = np.asarray(u, dtype=float)
    scalar = u.ndim == 0
    u = np.atleast_1d(u)
    sa = np.sqrt(a)
    phi_inf = np.sqrt(np.pi / (4.0 * a)) * erfcx(sa)
    t = a * u * (u + 2.0) + _log_erfcx(sa) - _log_erfcx(sa * (u + 1.0))
    out = phi_inf * (-np.expm1(-t))
    small = a * u * (u + 2.0) < 0.5
    if np.any(small):
        us = u[small]
        s = 0.5 * us[:, None] * (_GL_NODES[None, :] + 1.0)
        vals = np.exp(-a * (s * s + 2.0 * s))
        out[small] = 0.5 * us * (vals @ _GL_WEIGHTS)
    return float(out[0]) if scalar else out


def _log_exp_cumulative(u, a: float):
    """``log int_0^u exp(a(s^2+2s)) ds``, finite up to astronomically stiff a."""
    u = np.asarray(u, dtype=float)
    scalar = u.ndim == 0
    u = np.atleast_1d(u)
    sa = np.sqrt(a)
    log_a0 = np.log(dawsn(sa))
    log_au = a * u * (u + 2.0) + np.log(dawsn(sa * (u + 1.0)))
    d = log_au - log_a0
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        small_branch = log_a0 + np.log(np.expm1(np.minimum(d, 700.0)))
    out = np.where(d > 700.0, log_au, small_branch) - 0.5 * np.log(a)
    out = np.where(u > 0.0, out, -np.inf)
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class DistanceFunction:
    """Tabulated ``phi``, ``Phi``, ``rho`` and ``f`` on a grid of ``[0, r1]``.

    Evaluation between nodes is monotone piecewise-linear; beyond ``r1``
    the extension is linear with slope ``phi(r1) rho(r1)``.
    """

    r1: float
    c3: float
    L: float
    a: float
    cstar: float
    log_cstar: float
    grid: np.ndarray
    phi_vals: np.ndarray
    log_phi_vals: np.ndarray
    Phi_vals: np.ndarray
    rho_vals: np.ndarray
    f_vals: np.ndarray
    f_slope_beyond: float
    log_f_slope_beyond: float
    Phi1: float
    Phi_inf: float
    log_I_r1: float
    refinement_delta: float

    def f(self, u):
        return eval_f(self, u)

    def phi(self, u):
        return concave_weight(u, self.L, self.c3, self.r1)

    def log_phi(self, u):
        return log_concave_weight(u, self.L, self.c3, self.r1)

    def Phi(self, u):
        u = np.minimum(np.asarray(u, dtype=float), self.r1)
        return _phi_cumulative(u, self.a)


def _build_tables(L: float, c3: float, r1: float, n: int):
    a = (2.0 * L + 1.0) / (2.0 * c3)
    sa = np.sqrt(a)
    grid = np.concatenate([[0.0], r1 * np.geomspace(GRID_FLOOR, 1.0, n)])
    log_phi = -a * (grid * grid + 2.0 * grid)
    phi = np.exp(log_phi)
    Phi = _phi_cumulative(grid, a)
    phi_inf = np.sqrt(np.pi / (4.0 * a)) * erfcx(sa)

    # I(u) = int_0^u Phi(s+1)/phi(s) ds  split as  phi_inf*W(u) - C(u), where
    # W is the pure exponential integral (log space via dawsn) and C carries
    # the bounded defect Phi_inf - Phi(s+1) <= Phi_inf * exp(-3a).
    log_ec_sa = _log_erfcx(sa)

    def corr_integrand(s):
        return np.exp(-a * (2.0 * s + 3.0) + _log_erfcx(sa * (s + 2.0)) - log_ec_sa)

    C_tab = phi_inf * cumulative_cell_simpson(corr_integrand, grid)
    log_W = _log_exp_cumulative(grid, a)
    with np.errstate(divide="ignore"):
        log_C = np.log(C_tab)
    ratio = np.zeros_like(grid)
    pos = grid > 0.0
    ratio[pos] = np.exp(log_C[pos] - np.log(phi_inf) - log_W[pos])
    if np.any(ratio >= 1.0):
        raise ConstructionError("cumulative integral of Phi(s+1)/phi(s) lost positivity")
    log_I = np.full_like(grid, -np.inf)
    log_I[pos] = np.log(phi_inf) + log_W[pos] + np.log1p(-ratio[pos])
    log_I_r1 = float(log_I[-1])

    rho = np.empty_like(grid)
    rho[0] = 1.0
    rho[pos] = 1.0 - 0.5 * np.exp(log_I[pos] - log_I_r1)

    # f(u) = Phi(u) - J(u)/(2 I(r1)) with J = int_0^u phi I; the identity
    # phi(s) W(s) = (dawsn(sa(s+1)) - phi(s) dawsn(sa)) / sa keeps J finite.
    ID_tab = cumulative_cell_simpson(lambda s: dawsn(sa * (s + 1.0)), grid)
    phiC_tab = cumulative_cell_simpson(
        lambda s: np.exp(-a * (s * s + 2.0 * s)) * np.interp(s, grid, C_tab), grid
    )
    J_tab = (phi_inf / sa) * (ID_tab - dawsn(sa) * Phi) - phiC_tab
    kappa = np.exp(-np.log(2.0) - log_I_r1) if log_I_r1 < 745.0 else 0.0
    f_tab = Phi - kappa * J_tab
    # guard against sub-ulp dips when the integrand underflows
    f_tab = np.maximum.accumulate(f_tab)

    log_cstar = np.log(c3) - np.log(4.0) - log_I_r1
    log_phi_r1 = float(log_phi[-1])
    log_slope = log_phi_r1 + np.log(0.5)
    if r1 >= 1.0:
        phi1 = float(_phi_cumulative(1.0, a))
    else:
        phi1 = float(_phi_cumulative(r1, a) + np.exp(log_phi_r1) * (1.0 - r1))
    return DistanceFunction(
        r1=r1,
        c3=c3,
        L=L,
        a=a,
        cstar=float(np.exp(log_cstar)),
        log_cstar=float(log_cstar),
        grid=grid,
        phi_vals=phi,
        log_phi_vals=log_phi,
        Phi_vals=Phi,
        rho_vals=rho,
        f_vals=f_tab,
        f_slope_beyond=float(np.exp(log_slope)),
        log_f_slope_beyond=float(log_slope),
        Phi1=phi1,
        Phi_inf=float(phi_inf),
        log_I_r1=log_I_r1,
        refinement_delta=float("nan"),
    )


def build_distance_function_raw(
    L: float,
    c3: float,
    r1: float,
    n0: int = DEFAULT_GRID_N,
    refine_tol: float = REFINE_TOL,
) -> DistanceFunction:
    """Construct the distance function from raw constants.

    The grid is geometric (graded toward 0 where ``phi`` varies) and is
    doubled until a further doubling changes interpolated ``f`` values by
    less than ``refine_tol`` relative.
    """
    if not (L > 0 and c3 > 0 and r1 > 0):
        raise InputError("need L > 0, c3 > 0, r1 > 0")
    n = n0
    coarse = _build_tables(L, c3, r1, n)
    while True:
        n_fine = 2 * n - 1
        fine = _build_tables(L, c3, r1, n_fine)
        probe = fine.grid[1:]
        interp = np.interp(probe, coarse.grid, coarse.f_vals)
        delta = float(np.max(np.abs(interp - fine.f_vals[1:]) / np.maximum(np.abs(fine.f_vals[1:]), 1e-300)))
        if delta < refine_tol:
            df = replace(fine, refinement_delta=delta)
            validate_distance_function(df)
            return df
        coarse, n = fine, n_fine
        if n > MAX_GRID_N:
            raise ConstructionError(
                f"grid refinement did not stabilize below {refine_tol} within {MAX_GRID_N} nodes"
            )


def build_distance_function(consts, calib) -> DistanceFunction:
    """Build from dissipativity constants plus a calibration (r1, c3)."""
    return build_distance_function_raw(consts.L, calib.c3, calib.r1)


def validate_distance_function(df: DistanceFunction, tol: float = 1e-10) -> None:
    """Check construction invariants; raise ConstructionError on any failure.

    Monotonicity of ``phi`` and positivity of ``f``'s slope are checked on
    the logarithmic representation, which stays exact even where the double
    values underflow to a constant.
    """
    g = df.grid
    problems = []
    if df.phi_vals[0] != 1.0:
        problems.append("phi(0) != 1")
    if not np.all(np.diff(df.log_phi_vals) < 0.0):
        problems.append("phi not strictly decreasing (log scale)")
    if df.rho_vals[0] != 1.0:
        problems.append("rho(0) != 1")
    if abs(df.rho_vals[-1] - 0.5) > 1e-12:
        problems.append(f"rho(r1) = {df.rho_vals[-1]!r} != 1/2")
    if np.any(df.rho_vals < 0.5 - 1e-12) or np.any(df.rho_vals > 1.0 + 1e-12):
        problems.append("rho leaves [1/2, 1]")
    if df.f_vals[0] != 0.0:
        problems.append("f(0) != 0")
    if np.any(np.diff(df.f_vals) < 0.0):
        problems.append("f not monotone nondecreasing")
    if not np.isfinite(df.log_f_slope_beyond):
        problems.append("slope of f beyond r1 is not positive")
    slopes = np.diff(df.f_vals) / np.diff(g)
    if np.any(np.diff(slopes) > tol):
        problems.append("f not concave (chord slopes increase)")
    if np.any(slopes > 1.0 + 1e-12):
        problems.append("f' exceeds 1")
    lower = 0.5 * np.exp(df.log_phi_vals[-1]) * g
    if np.any(df.f_vals < lower - 1e-15):
        problems.append("f below phi(r1) u / 2")
    if np.any(df.f_vals > g * (1.0 + 1e-12) + 1e-300):
        problems.append("f exceeds u")
    if problems:
        raise ConstructionError("distance function invariants violated: " + "; ".join(problems))


def eval_f(df: DistanceFunction, u):
    """Evaluate ``f`` by interpolation, linearly extended beyond ``r1``."""
    u = np.asarray(u, dtype=float)
    scalar = u.ndim == 0
    u = np.atleast_1d(u)
    if np.any(u < 0.0) or not np.all(np.isfinite(u)):
        raise InputError("f is defined for finite u >= 0")
    out = np.interp(u, df.grid, df.f_vals)
    beyond = u > df.r1
    if np.any(beyond):
        out[beyond] = df.f_vals[-1] + df.f_slope_beyond * (u[beyond] - df.r1)
    return float(out[0]) if scalar else out
