"""SDE drift models and numerical checkers for their structural conditions.

A model is the drift ``b`` of ``dx = b(x) dt + sigma dB`` together with the
constant noise scale.  Two conditions make the rest of the library
applicable and are checkable by sampling:

* contractivity at infinity: ``<x-y, b(x)-b(y)> <= L|x-y|^2`` for
  ``|x-y| <= R`` and ``<= -K|x-y|^2`` beyond,
* a polynomial-growth Lipschitz bound
  ``|b(x)-b(y)| <= Lstar (1+|x|^ell+|y|^ell) |x-y|``.

The registry ships ``double_well`` (1-D, ``b(x) = x - x^3``) and ``sin2``
(2-D, ``b(x, y) = (sin(2x) - x, -y)``) plus a coordinate-wise polynomial
constructor for user drifts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InputError
from .rng import stream

# A sampled check can only ever certify "no violation found"; the tolerance
# absorbs roundoff at near-equality points.
CHECK_TOLERANCE = 1e-9


@dataclass(frozen=True)
class DriftModel:
    """Drift evaluator plus the scalar noise coefficient.

    ``drift`` must be vectorized: it maps arrays of shape ``(..., dim)`` to
    arrays of the same shape.
    """

    name: str
    dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    sigma: float
    drift_at_origin_norm: float = field(default=float("nan"))

    def __post_init__(self):
        if self.dim < 1:
            raise InputError("model dimension must be a positive integer")
        if self.sigma == 0 or not np.isfinite(self.sigma):
            raise InputError("sigma must be a nonzero finite real")
        b0 = float(np.linalg.norm(self.drift(np.zeros(self.dim))))
        if np.isnan(self.drift_at_origin_norm):
            object.__setattr__(self, "drift_at_origin_norm", b0)
        elif abs(self.drift_at_origin_norm - b0) > 1e-12:
            raise InputError(
                f"drift_at_origin_norm={self.drift_at_origin_norm} does not match |b(0)|={b0}"
            )


@dataclass(frozen=True)
class DissipativityConstants:
    """(L, K, R): local expansion rate, far-field contraction rate, radius."""

    L: float
    K: float
    R: float

    def __post_init__(self):
        if not (self.L > 0 and self.K > 0 and self.R >= 0):
            raise InputError("need L > 0, K > 0, R >= 0")


@dataclass(frozen=True)
class GrowthConstants:
    """(Lstar, ell) of the polynomial-growth Lipschitz bound."""

    Lstar: float
    ell: float

    def __post_init__(self):
        if not (self.Lstar > 0 and self.ell > 0):
            raise InputError("need Lstar > 0 and ell > 0")


@dataclass(frozen=True)
class ModelBundle:
    """A registered model with its recommended structural constants."""

    model: DriftModel
    dissipativity: DissipativityConstants
    growth: GrowthConstants


@dataclass(frozen=True)
class CheckReport:
    """Outcome of a sampled inequality check.

    ``max_violation`` is the largest value of ``(lhs - rhs) / scale`` seen,
    with ``scale = max(1, |lhs|, |rhs|)``; the witness pair realizes it.
    A pass is necessary evidence for the condition, never a proof.
    """

    name: str
    passed: bool
    n_pairs: int
    max_violation: float
    witness_x: np.ndarray
    witness_y: np.ndarray
    lhs_at_witness: float
    rhs_at_witness: float
    tolerance: float = CHECK_TOLERANCE


def eval_drift(model: DriftModel, x: np.ndarray) -> np.ndarray:
    """Evaluate ``b(x)``; pure and deterministic."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (model.dim,):
        raise InputError(f"point has trailing shape {x.shape}, expected (..., {model.dim})")
    if not np.all(np.isfinite(x)):
        raise InputError("drift evaluated at a non-finite point")
    return model.drift(x)


def _sample_ball_pairs(rng: np.random.Generator, n_pairs: int, dim: int, radius: float):
    """Pairs of points uniform in the centered ball, by rejection from the cube."""
    def draw(n):
        out = np.empty((n, dim))
        filled = 0
        while filled < n:
            cand = rng.uniform(-1.0, 1.0, size=(max(2 * (n - filled), 64), dim))
            keep = cand[np.einsum("ij,ij->i", cand, cand) <= 1.0]
            take = min(len(keep), n - filled)
            out[filled : filled + take] = keep[:take]
            filled += take
        return radius * out

    return draw(n_pairs), draw(n_pairs)


def _report(name, n_pairs, violations, xs, ys, lhs, rhs) -> CheckReport:
    worst = int(np.argmax(violations))
    return CheckReport(
        name=name,
        passed=bool(violations[worst] <= CHECK_TOLERANCE),
        n_pairs=n_pairs,
        max_violation=float(violations[worst]),
        witness_x=xs[worst].copy(),
        witness_y=ys[worst].copy(),
        lhs_at_witness=float(lhs[worst]),
        rhs_at_witness=float(rhs[worst]),
    )


def check_contractivity_at_infinity(
    model: DriftModel,
    consts: DissipativityConstants,
    n_pairs: int,
    radius: float,
    seed: int,
) -> CheckReport:
    """Sample pairs and test the contractivity-at-infinity inequality."""
    if n_pairs < 1:
        raise InputError("n_pairs must be >= 1")
    if radius <= 0:
        raise InputError("radius must be positive")
    rng = stream(seed, 101)
    xs, ys = _sample_ball_pairs(rng, n_pairs, model.dim, radius)
    diff = xs - ys
    bdiff = eval_drift(model, xs) - eval_drift(model, ys)
    lhs = np.einsum("ij,ij->i", diff, bdiff)
    dist2 = np.einsum("ij,ij->i", diff, diff)
    near = np.sqrt(dist2) <= consts.R
    rhs = np.where(near, consts.L * dist2, -consts.K * dist2)
    scale = np.maximum(1.0, np.maximum(np.abs(lhs), np.abs(rhs)))
    violations = (lhs - rhs) / scale
    return _report("contractivity_at_infinity", n_pairs, violations, xs, ys, lhs, rhs)


def check_polynomial_lipschitz(
    model: DriftModel,
    growth: GrowthConstants,
    n_pairs: int,
    radius: float,
    seed: int,
) -> CheckReport:
    """Sample pairs and test the polynomial-growth Lipschitz inequality."""
    if n_pairs < 1:
        raise InputError("n_pairs must be >= 1")
    if radius <= 0:
        raise InputError("radius must be positive")
    rng = stream(seed, 102)
    xs, ys = _sample_ball_pairs(rng, n_pairs, model.dim, radius)
    diff_norm = np.linalg.norm(xs - ys, axis=1)
    lhs = np.linalg.norm(eval_drift(model, xs) - eval_drift(model, ys), axis=1)
    xn = np.linalg.norm(xs, axis=1)
    yn = np.linalg.norm(ys, axis=1)
    rhs = growth.Lstar * (1.0 + xn**growth.ell + yn**growth.ell) * diff_norm
    scale = np.maximum(1.0, np.maximum(np.abs(lhs), np.abs(rhs)))
    violations = (lhs - rhs) / scale
    return _report("polynomial_lipschitz", n_pairs, violations, xs, ys, lhs, rhs)


# ---------------------------------------------------------------------------
# registry


def _double_well_drift(x: np.ndarray) -> np.ndarray:
    return x - x**3


def _sin2_drift(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    out[..., 0] = np.sin(2.0 * z[..., 0]) - z[..., 0]
    out[..., 1] = -z[..., 1]
    return out


def make_double_well(sigma: float = 1.0) -> ModelBundle:
    """1-D bistable drift ``b(x) = x - x^3``."""
    model = DriftModel("double_well", 1, _double_well_drift, sigma)
    return ModelBundle(
        model=model,
        dissipativity=DissipativityConstants(L=1.0, K=2.0, R=3.0),
        growth=GrowthConstants(Lstar=1.5, ell=2.0),
    )


def make_sin2(sigma: float = 1.0) -> ModelBundle:
    """2-D system with drift ``(sin(2x) - x, -y)``."""
    model = DriftModel("sin2", 2, _sin2_drift, sigma)
    return ModelBundle(
        model=model,
        dissipativity=DissipativityConstants(L=1.0, K=0.5, R=4.0),
        growth=GrowthConstants(Lstar=3.0, ell=1.0),
    )


def make_polynomial(
    coeffs: Sequence[Sequence[float]],
    sigma: float = 1.0,
    dissipativity: DissipativityConstants | None = None,
    growth: GrowthConstants | None = None,
    name: str = "poly",
) -> ModelBundle:
    """Coordinate-wise polynomial drift.

    ``coeffs[i]`` are ascending-order coefficients of the polynomial applied
    to coordinate ``i``: ``b_i(x) = sum_j coeffs[i][j] * x_i**j``.  Structural
    constants are not derivable from coefficients in general, so callers
    must supply them when the model is to be calibrated or checked.
    """
    table = [np.asarray(c, dtype=float) for c in coeffs]
    if not table or any(c.ndim != 1 or c.size == 0 for c in table):
        raise InputError("coeffs must be a non-empty list of non-empty coefficient lists")
    dim = len(table)

    def drift(x: np.ndarray) -> np.ndarray:
        out = np.empty_like(x)
        for i, c in enumerate(table):
            out[..., i] = np.polynomial.polynomial.polyval(x[..., i], c)
        return out

    if dissipativity is None:
        dissipativity = DissipativityConstants(L=1.0, K=1.0, R=1.0)
    if growth is None:
        growth = GrowthConstants(Lstar=1.0, ell=1.0)
    return ModelBundle(DriftModel(name, dim, drift, sigma), dissipativity, growth)


_BUILTINS: dict[str, Callable[..., ModelBundle]] = {
    "double_well": make_double_well,
    "sin2": make_sin2,
}


def get_model(name: str, sigma: float = 1.0, **kwargs) -> ModelBundle:
    """Look up a registered model by its config-file identifier."""
    if name in _BUILTINS:
        return _BUILTINS[name](sigma=sigma)
    if name == "poly":
        return make_polynomial(sigma=sigma, **kwargs)
    raise InputError(f"unknown model {name!r}; known: {sorted(_BUILTINS) + ['poly']}")
