"""Empirical-measure analytics.

Wasserstein-1 distances (exact in 1-D by quantile coupling, exact in any
dimension by an assignment solver at small n), Kolmogorov-Smirnov
statistics, exact one-dimensional stationary densities obtained from the
drift by the integrating-factor formula ``p(u) ~ exp((2/sigma^2) int_0^u b)``,
and the three convergence experiments: ergodicity decay between ensembles,
uniform-in-time strong error against a fine-step reference on a common
Brownian path, and the step-size dependence of the invariant-measure error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .calibrate import TruncationParams, truncate, truncation_radius
from .errors import InputError, NumericalError
from .model import DriftModel
from .rng import path_streams, stream
from .scheme import OVERFLOW_GUARD, PathEnsemble, simulate_ensemble

ASSIGNMENT_CAP = 4096


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniformly weighted sample cloud in R^d; samples have shape (n, dim)."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[0] < 1:
            raise InputError("an empirical measure needs at least one sample point")
        if not np.all(np.isfinite(s)):
            raise InputError("empirical measure contains non-finite samples")
        object.__setattr__(self, "samples", s)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


def _resample_sorted(sorted_vals: np.ndarray, n: int) -> np.ndarray:
    """Midpoint quantiles of a sorted sample, used to equalize sizes in 1-D."""
    q = (np.arange(n) + 0.5) / n
    idx = np.minimum((q * sorted_vals.size).astype(int), sorted_vals.size - 1)
    return sorted_vals[idx]


def w1_1d(a: EmpiricalMeasure, b: EmpiricalMeasure) -> float:
    """Exact W1 between 1-D clouds: mean absolute difference of sorted samples.

    Unequal sizes are reduced to the smaller count by midpoint-quantile
    resampling of the larger cloud.
    """
    if a.dim != 1 or b.dim != 1:
        raise InputError("w1_1d requires one-dimensional measures")
    xa = np.sort(a.samples[:, 0])
    xb = np.sort(b.samples[:, 0])
    if xa.size != xb.size:
        n = min(xa.size, xb.size)
        xa = _resample_sorted(xa, n)
        xb = _resample_sorted(xb, n)
    return float(np.mean(np.abs(xa - xb)))


def w1_assignment(a: EmpiricalMeasure, b: EmpiricalMeasure) -> float:
    """Exact W1 in any dimension via an optimal assignment on the cost matrix."""
    if a.dim != b.dim:
        raise InputError("measures have different dimensions")
    if a.n != b.n:
        raise InputError("w1_assignment requires equal sample counts")
    if a.n > ASSIGNMENT_CAP:
        raise InputError(
            f"n = {a.n} exceeds the assignment cap {ASSIGNMENT_CAP}; "
            "use w1_1d (1-D) or subsample"
        )
    diff = a.samples[:, None, :] - b.samples[None, :, :]
    cost = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def ks_statistic_against_cdf(sorted_sample: np.ndarray, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """Sup-distance between the empirical CDF of a sorted sample and ``cdf``."""
    n = sorted_sample.size
    f = np.asarray(cdf(sorted_sample), dtype=float)
    hi = np.arange(1, n + 1) / n
    lo = np.arange(0, n) / n
    return float(np.max(np.maximum(np.abs(f - hi), np.abs(f - lo))))


@dataclass(frozen=True)
class StationaryDensity1D:
    """Tabulated stationary density and CDF of a scalar drift."""

    grid: np.ndarray
    density: np.ndarray
    cdf: np.ndarray

    def pdf(self, u):
        return np.interp(u, self.grid, self.density, left=0.0, right=0.0)

    def cdf_at(self, u):
        return np.interp(u, self.grid, self.cdf, left=0.0, right=1.0)

    def ppf(self, q):
        q = np.asarray(q, dtype=float)
        if np.any((q < 0) | (q > 1)):
            raise InputError("quantile levels must lie in [0, 1]")
        return np.interp(q, self.cdf, self.grid)

    def quantile_cloud(self, n: int) -> EmpiricalMeasure:
        """Deterministic n-point cloud at midpoint quantiles."""
        return EmpiricalMeasure(self.ppf((np.arange(n) + 0.5) / n))

    def moment(self, g: Callable[[np.ndarray], np.ndarray]) -> float:
        vals = np.asarray(g(self.grid), dtype=float) * self.density
        return float(np.trapezoid(vals, self.grid))


def ks_statistic(a: EmpiricalMeasure, reference) -> float:
    """KS statistic of a 1-D cloud against a reference CDF.

    ``reference`` is a :class:`StationaryDensity1D` or a vectorized CDF
    callable.  Invariant under permutation of the samples.
    """
    if a.dim != 1:
        raise InputError("ks_statistic requires a one-dimensional measure")
    cdf = reference.cdf_at if isinstance(reference, StationaryDensity1D) else reference
    return ks_statistic_against_cdf(np.sort(a.samples[:, 0]), cdf)


def stationary_density_1d(
    drift, sigma: float | None = None, tail_mass: float = 1e-10, n_grid: int = 131_073
) -> StationaryDensity1D:
    """Stationary density ``p(u) ~ exp((2/sigma^2) int_0^u b(s) ds)``.

    ``drift`` is a 1-D :class:`DriftModel` or a vectorized scalar callable
    (then ``sigma`` is required).  The support ``[-A, A]`` is widened until
    the mass outside is provably below ``tail_mass``.
    """
    if isinstance(drift, DriftModel):
        if drift.dim != 1:
            raise InputError("stationary densities are only defined for scalar models")
        b = lambda u: drift.drift(np.asarray(u, dtype=float)[..., None])[..., 0]
        sigma = drift.sigma if sigma is None else sigma
    else:
        if sigma is None:
            raise InputError("sigma is required with a callable drift")
        b = lambda u: np.asarray(drift(np.asarray(u, dtype=float)), dtype=float)
    s2 = float(sigma) * float(sigma)

    A = 5.0
    for _ in range(60):
        # fine uniform grid with midpoints so the CDF is composite-Simpson
        n_fine = 2 * n_grid - 1
        fine = np.linspace(-A, A, n_fine)
        dv = 2.0 * A / (n_fine - 1)
        bf = b(fine)
        # potential by cumulative Simpson from the left edge
        mids = 0.5 * (fine[:-1] + fine[1:])
        cells = dv / 6.0 * (bf[:-1] + 4.0 * b(mids) + bf[1:])
        V = np.concatenate([[0.0], np.cumsum(cells)]) * (2.0 / s2)
        V -= V.max()
        dens_fine = np.exp(V)
        # integrability guard and tail bound via the decay rate 2|b(A)|/sigma^2
        bR, bL = float(bf[-1]), float(bf[0])
        simpson_cells = dv / 3.0 * (dens_fine[0:-2:2] + 4.0 * dens_fine[1:-1:2] + dens_fine[2::2])
        Z = float(np.sum(simpson_cells))
        if not np.isfinite(Z) or Z <= 0:
            raise NumericalError("stationary density normalization is not finite")
        if bR < 0 and bL > 0:
            tail = (dens_fine[-1] * s2 / (2.0 * -bR) + dens_fine[0] * s2 / (2.0 * bL)) / Z
            if tail < tail_mass:
                break
        A *= 1.5
    else:
        raise NumericalError("could not find an interval capturing the stationary mass")

    grid = fine[::2]
    density = dens_fine[::2] / Z
    cdf = np.concatenate([[0.0], np.cumsum(simpson_cells)]) / Z
    cdf[-1] = 1.0
    if abs(np.trapezoid(density, grid) - 1.0) > 1e-8:
        raise NumericalError("stationary density does not integrate to 1 on its grid")
    return StationaryDensity1D(grid=grid, density=density, cdf=cdf)


# ---------------------------------------------------------------------------
# convergence experiments


@dataclass(frozen=True)
class DecayCurve:
    times: np.ndarray
    w1: np.ndarray  # shape (n_pairs, n_checkpoints)
    pair_labels: tuple[str, ...]
    rate: float
    noise_floor: float

    @property
    def w1_max(self) -> np.ndarray:
        return self.w1.max(axis=0)


def _fit_decay_rate(times: np.ndarray, values: np.ndarray, floor: float) -> float:
    live = values > max(2.0 * floor, 1e-12)
    live &= times > 0
    if np.count_nonzero(live) < 3:
        return float("nan")
    t, v = times[live], np.log(values[live])
    slope = np.polyfit(t, v, 1)[0]
    return float(-slope)


def ergodicity_decay(
    model: DriftModel,
    trunc: TruncationParams,
    h: float,
    initials: Sequence,
    T: float,
    n_paths: int,
    seed: int,
    n_checkpoints: int = 64,
) -> DecayCurve:
    """W1 between ensembles started from different points, over time.

    Ensembles are driven by independent streams, so the curves measure
    distributional distance (they bottom out at the two-sample W1 noise
    floor, estimated from the final quarter of the curve).
    """
    if len(initials) < 2:
        raise InputError("need at least two initial points")
    n_steps = int(round(T / h))
    checkpoints = np.unique(np.linspace(0, n_steps, n_checkpoints + 1).astype(int))
    ensembles = [
        simulate_ensemble(
            model, trunc, h, n_paths, n_steps, checkpoints,
            np.atleast_1d(np.asarray(x0, dtype=float)), seed, stream_prefix=(idx,),
        )
        for idx, x0 in enumerate(initials)
    ]
    pairs = [(i, j) for i in range(len(initials)) for j in range(i + 1, len(initials))]
    curves = np.empty((len(pairs), checkpoints.size))
    for row, (i, j) in enumerate(pairs):
        for kk in range(checkpoints.size):
            a = EmpiricalMeasure(ensembles[i].states[kk])
            b_ = EmpiricalMeasure(ensembles[j].states[kk])
            if model.dim == 1:
                curves[row, kk] = w1_1d(a, b_)
            else:
                curves[row, kk] = _w1_nd(a, b_, seed)
    times = checkpoints * h
    tail = curves.max(axis=0)[3 * checkpoints.size // 4 :]
    floor = float(tail.mean())
    rate = _fit_decay_rate(times, curves.max(axis=0), floor)
    return DecayCurve(
        times=times,
        w1=curves,
        pair_labels=tuple(f"{initials[i]}-vs-{initials[j]}" for i, j in pairs),
        rate=rate,
        noise_floor=floor,
    )


def _w1_nd(a: EmpiricalMeasure, b: EmpiricalMeasure, seed: int) -> float:
    if a.n <= ASSIGNMENT_CAP:
        return w1_assignment(a, b)
    rng = stream(seed, 31)
    ia = rng.choice(a.n, ASSIGNMENT_CAP, replace=False)
    ib = rng.choice(b.n, ASSIGNMENT_CAP, replace=False)
    return w1_assignment(EmpiricalMeasure(a.samples[ia]), EmpiricalMeasure(b.samples[ib]))


@dataclass(frozen=True)
class StrongErrorResult:
    h_list: np.ndarray
    errors: np.ndarray
    stderrs: np.ndarray
    slope: float
    paired_decrease_means: np.ndarray  # err(h_i) - err(h_{i+1}) per path, mean
    paired_decrease_stderrs: np.ndarray

    def strictly_decreasing(self, n_se: float = 0.0) -> bool:
        return bool(np.all(self.paired_decrease_means > n_se * self.paired_decrease_stderrs))


def coupled_terminal_states(
    model: DriftModel,
    trunc: TruncationParams,
    h_list: Sequence[float],
    h_ref: float,
    T: float,
    n_paths: int,
    initial,
    seed: int,
) -> dict[float, np.ndarray]:
    """Terminal states at every resolution driven by one Brownian path per sample.

    Coarse increments are sums of the reference increments over each coarse
    step, so every ``h`` must be an integer multiple of ``h_ref``; the
    returned dict also contains the reference level ``h_ref``.
    """
    levels = sorted(float(h) for h in h_list)
    if min(levels) <= h_ref:
        raise InputError("h_ref must be finer than every h in h_list")
    ratios = []
    for h in levels:
        ratio = h / h_ref
        if abs(ratio - round(ratio)) > 1e-9:
            raise InputError(f"h = {h} is not an integer multiple of h_ref = {h_ref}")
        ratios.append(int(round(ratio)))
    n_ref = int(round(T / h_ref))
    if any(n_ref % r for r in ratios):
        raise InputError("T must be an integer number of steps at every resolution")

    x0 = np.atleast_1d(np.asarray(initial, dtype=float))
    radius = {h: truncation_radius(h, trunc) for h in levels + [h_ref]}
    x = {h: np.broadcast_to(truncate(x0, h, trunc), (n_paths, model.dim)).copy()
         for h in levels + [h_ref]}
    zsum = {h: np.zeros((n_paths, model.dim)) for h in levels}

    def advance(xc, h, z):
        x_hat = xc + h * model.drift(xc) + model.sigma * z
        norms = np.linalg.norm(x_hat, axis=-1)
        if not np.all(np.isfinite(x_hat)) or norms.max() > OVERFLOW_GUARD:
            raise NumericalError("state blew up in coupled-increment simulation")
        over = norms > radius[h]
        if np.any(over):
            x_hat = x_hat.copy()
            x_hat[over] *= (radius[h] / norms[over])[:, None]
        return x_hat

    gens = path_streams(seed, n_paths)
    sqrt_h_ref = np.sqrt(h_ref)
    chunk = max(1, min(n_ref, 4_000_000 // max(1, n_paths * model.dim)))
    z = np.empty((n_paths, chunk, model.dim))
    k = 0
    while k < n_ref:
        span = min(chunk, n_ref - k)
        for i, g in enumerate(gens):
            z[i, :span] = g.standard_normal((span, model.dim))
        for j in range(span):
            zj = z[:, j] * sqrt_h_ref
            x[h_ref] = advance(x[h_ref], h_ref, zj)
            for h, ratio in zip(levels, ratios):
                zsum[h] += zj
                if (k + j + 1) % ratio == 0:
                    x[h] = advance(x[h], h, zsum[h])
                    zsum[h][:] = 0.0
        k += span
    return x


def strong_error_curve(
    model: DriftModel,
    trunc: TruncationParams,
    h_list: Sequence[float],
    h_ref: float,
    T: float,
    n_paths: int,
    initial,
    seed: int,
) -> StrongErrorResult:
    """Pathwise error at time T of coarse steps against a fine reference.

    All resolutions share the Brownian path per sample (see
    :func:`coupled_terminal_states`), so the per-path differences are the
    strong error at matched randomness and consecutive resolutions can be
    compared pairwise.
    """
    levels = sorted(float(h) for h in h_list)
    x = coupled_terminal_states(model, trunc, levels, h_ref, T, n_paths, initial, seed)
    errors, stderrs, per_path = [], [], []
    for h in levels:
        diff = np.linalg.norm(x[h] - x[h_ref], axis=-1)
        per_path.append(diff)
        errors.append(float(diff.mean()))
        stderrs.append(float(diff.std(ddof=1) / np.sqrt(n_paths)))
    slope = float(np.polyfit(np.log(np.asarray(levels)), np.log(np.asarray(errors)), 1)[0])
    # paired comparison of consecutive levels, finest first in h order
    dm, ds = [], []
    for big, small in zip(per_path[1:], per_path[:-1]):
        d = big - small
        dm.append(float(d.mean()))
        ds.append(float(d.std(ddof=1) / np.sqrt(n_paths)))
    return StrongErrorResult(
        h_list=np.asarray(levels),
        errors=np.asarray(errors),
        stderrs=np.asarray(stderrs),
        slope=slope,
        paired_decrease_means=np.asarray(dm),
        paired_decrease_stderrs=np.asarray(ds),
    )


@dataclass(frozen=True)
class InvariantErrorResult:
    h_list: np.ndarray
    errors: np.ndarray
    stderrs: np.ndarray  # bootstrap
    slope: float


def invariant_measure_error(
    model: DriftModel,
    trunc: TruncationParams,
    h_list: Sequence[float],
    T_stationary: float,
    n_samples: int,
    seed: int,
    initial,
    reference: StationaryDensity1D | None = None,
    n_bootstrap: int = 64,
) -> InvariantErrorResult:
    """W1 between the time-T empirical law and the stationary reference, per h.

    In 1-D the reference is the analytic stationary law (quantile cloud);
    otherwise the finest-h ensemble serves as reference.  Standard errors
    are bootstrap over sample paths.
    """
    h_list = sorted(float(h) for h in h_list)
    if model.dim == 1 and reference is None:
        reference = stationary_density_1d(model)
    clouds = {}
    for idx, h in enumerate(h_list):
        n_steps = int(round(T_stationary / h))
        ens = simulate_ensemble(
            model, trunc, h, n_samples, n_steps, [n_steps],
            np.atleast_1d(np.asarray(initial, dtype=float)), seed, stream_prefix=(idx,),
        )
        clouds[h] = ens.states[-1]

    errors, stderrs = [], []
    if model.dim == 1:
        ref_sorted = np.sort(reference.quantile_cloud(n_samples).samples[:, 0])
        for idx, h in enumerate(h_list):
            vals = np.sort(clouds[h][:, 0])
            errors.append(float(np.mean(np.abs(vals - ref_sorted))))
            boots = []
            rng = stream(seed, 91, idx)
            for _ in range(n_bootstrap):
                take = np.sort(vals[rng.integers(0, n_samples, n_samples)])
                boots.append(np.mean(np.abs(take - ref_sorted)))
            stderrs.append(float(np.std(boots, ddof=1)))
    else:
        ref_cloud = EmpiricalMeasure(clouds[h_list[0]])
        for h in h_list:
            errors.append(_w1_nd(EmpiricalMeasure(clouds[h]), ref_cloud, seed))
            stderrs.append(float("nan"))
    slope = float(np.polyfit(np.log(np.asarray(h_list)), np.log(np.asarray(errors)), 1)[0])
    return InvariantErrorResult(
        h_list=np.asarray(h_list),
        errors=np.asarray(errors),
        stderrs=np.asarray(stderrs),
        slope=slope,
    )
