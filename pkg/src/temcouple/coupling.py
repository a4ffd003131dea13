"""One-step coupling of the truncated EM transition and its verifiers.

For a pair of starting points the coupled step is a mixture of three moves.
With ``u(x) = truncate(x) + h b(truncate(x))``, ``rv = u(x) - u(y)``,
``e = rv/|rv|`` and ``p = <e, sigma Z>``:

* stick:   ``Y' = X' = u(x) + sigma Z``      (accepted with probability v)
* reflect: ``Y' = u(y) + (I - 2 e e^T) sigma Z``
* sync:    ``Y' = u(y) + sigma Z``           (when ``|p| > m`` or ``|rv| > H``)

The acceptance function is the slab-restricted density ratio

    v(z) = ( exp(-|rv|(2p+|rv|)/(2 h sigma^2)) 1{|p|<=m} 1{|rv+p|<=m} ) ^ 1{|p|<=m}

which makes the coupled pair an exact coupling of the two one-step
transitions: the marginal law of ``Y'`` is ``N(u(y), h sigma^2 I)`` and
``E|X' - Y'| = |rv|`` identically.  The statistical verifiers below test the
marginal law (KS), the mean-distance identity, the restricted second-moment
lower bounds, and the one-step contraction in the concave distance ``f``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.special import kolmogi, ndtr

from .calibrate import Calibration, truncate
from .distfn import DistanceFunction, eval_f
from .errors import InputError, NumericalError
from .measure import ks_statistic_against_cdf
from .model import DriftModel, eval_drift
from .rng import stream


class Branch(enum.IntEnum):
    STICK = 0
    REFLECT = 1
    SYNC = 2


@dataclass(frozen=True)
class CoupleOutcome:
    """One coupled step: both next states, the branch, and the two distances.

    ``R_hat`` is computed from the branch identity (0, ``|r_hat + 2p|``, or
    ``r_hat``), which is bitwise-reproducible from the stored draw.
    """

    x_next: np.ndarray
    y_next: np.ndarray
    branch: Branch
    r_hat: float
    R_hat: float
    z: np.ndarray
    zeta: float


@dataclass(frozen=True)
class TestReport:
    name: str
    passed: bool
    rows: tuple[dict, ...] = field(default_factory=tuple)

    def failures(self):
        return [row for row in self.rows if not row.get("passed", True)]


def drifted_point(x, model: DriftModel, h: float, trunc) -> np.ndarray:
    """``truncate(x) + h b(truncate(x))``: the deterministic part of a step."""
    px = truncate(np.asarray(x, dtype=float), h, trunc)
    return px + h * eval_drift(model, px)


def reflect(axis: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Householder reflection of ``z`` across the hyperplane orthogonal to ``axis``."""
    axis = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(axis)
    if norm == 0.0 or not np.isfinite(norm):
        raise InputError("reflection axis must be nonzero and finite")
    e = axis / norm
    return z - 2.0 * np.tensordot(np.asarray(z, dtype=float), e, axes=((-1,), (0,)))[..., None] * e


def acceptance(r_hat_vec: np.ndarray, z: np.ndarray, h: float, sigma: float, m: float):
    """The stick-acceptance probability ``v`` for increment(s) ``z``.

    ``z`` may be a single vector or a batch ``(n, d)``; returns values in
    [0, 1].  A zero ``r_hat_vec`` gives 1 (degenerate stick).
    """
    if h <= 0 or m <= 0:
        raise InputError("need h > 0 and m > 0")
    rv = np.asarray(r_hat_vec, dtype=float)
    z = np.asarray(z, dtype=float)
    r_hat = float(np.linalg.norm(rv))
    e = rv / r_hat if r_hat > 0.0 else np.zeros_like(rv)
    p = sigma * np.tensordot(z, e, axes=((-1,), (0,)))
    exponent = -(r_hat / (2.0 * h * sigma * sigma)) * (2.0 * p + r_hat)
    inside = (np.abs(p) <= m) & (np.abs(r_hat + p) <= m)
    return np.where(inside, np.exp(np.minimum(exponent, 0.0)), 0.0)


def _couple_batch(x, y, model: DriftModel, h: float, calib: Calibration, n: int, seed, key=0):
    """Vectorized coupled steps for one fixed pair; returns a dict of arrays."""
    calib.require_coupling()
    sigma, m, H = model.sigma, calib.m, calib.H
    ux = drifted_point(x, model, h, calib.trunc)
    uy = drifted_point(y, model, h, calib.trunc)
    rv = ux - uy
    r_hat = float(np.linalg.norm(rv))
    e = rv / r_hat if r_hat > 0.0 else np.zeros_like(rv)

    rng = seed if isinstance(seed, np.random.Generator) else stream(seed, 7, key)
    z = rng.standard_normal((n, model.dim)) * np.sqrt(h)
    zeta = rng.uniform(size=n)

    p = sigma * (z @ e)
    exponent = -(r_hat / (2.0 * h * sigma * sigma)) * (2.0 * p + r_hat)
    v = np.where(np.abs(r_hat + p) <= m, np.exp(np.minimum(exponent, 0.0)), 0.0)
    v = np.where(np.abs(p) <= m, v, 0.0)

    sync = (np.abs(p) > m) | (r_hat > H)
    stick = ~sync & (zeta <= v)
    refl = ~sync & ~stick

    sz = sigma * z
    x_next = ux + sz
    y_next = np.where(
        stick[:, None], x_next, np.where(refl[:, None], uy + sz - 2.0 * p[:, None] * e, uy + sz)
    )
    R_hat = np.where(stick, 0.0, np.where(refl, np.abs(r_hat + 2.0 * p), r_hat))
    if not (np.all(np.isfinite(x_next)) and np.all(np.isfinite(y_next))):
        raise NumericalError("coupled step produced non-finite states")
    branch = np.full(n, Branch.SYNC, dtype=np.int8)
    branch[stick] = Branch.STICK
    branch[refl] = Branch.REFLECT
    return {
        "x_next": x_next, "y_next": y_next, "branch": branch, "r_hat": r_hat,
        "R_hat": R_hat, "z": z, "zeta": zeta, "ux": ux, "uy": uy, "e": e, "p": p,
    }


def couple_step(x, y, model: DriftModel, h: float, calib: Calibration, rng) -> CoupleOutcome:
    """One coupled step driven by ``rng`` (or a seed)."""
    b = _couple_batch(x, y, model, h, calib, 1, rng)
    return CoupleOutcome(
        x_next=b["x_next"][0],
        y_next=b["y_next"][0],
        branch=Branch(int(b["branch"][0])),
        r_hat=b["r_hat"],
        R_hat=float(b["R_hat"][0]),
        z=b["z"][0],
        zeta=float(b["zeta"][0]),
    )


def branch_probabilities(x, y, model: DriftModel, h: float, calib: Calibration):
    """Analytic (quadrature-free) branch probabilities for a fixed pair.

    Everything depends on the increment only through the scalar projection
    ``p ~ N(0, h sigma^2)``; stick integrates ``v`` against that density.
    """
    calib.require_coupling()
    sigma, m, H = model.sigma, calib.m, calib.H
    ux = drifted_point(x, model, h, calib.trunc)
    uy = drifted_point(y, model, h, calib.trunc)
    r_hat = float(np.linalg.norm(ux - uy))
    sd = abs(sigma) * np.sqrt(h)
    if r_hat > H:
        return {"stick": 0.0, "reflect": 0.0, "sync": 1.0, "r_hat": r_hat}
    p_sync = 2.0 * ndtr(-m / sd)
    from .quadrature import adaptive_simpson

    def integrand(p):
        if abs(r_hat + p) > m:
            return 0.0
        expo = -(r_hat / (2.0 * h * sigma * sigma)) * (2.0 * p + r_hat)
        dens = np.exp(-0.5 * (p / sd) ** 2) / (sd * np.sqrt(2.0 * np.pi))
        return min(np.exp(min(expo, 0.0)), 1.0) * dens

    cut = min(m, r_hat / 2.0)  # v crosses 1 at p = -r_hat/2; split for smoothness
    p_stick = sum(
        adaptive_simpson(integrand, lo, hi, tol=1e-13)
        for lo, hi in [(-m, -cut), (-cut, cut), (cut, m)]
        if lo < hi
    )
    p_stick = min(max(p_stick, 0.0), 1.0 - p_sync)
    return {
        "stick": p_stick,
        "reflect": 1.0 - p_sync - p_stick,
        "sync": p_sync,
        "r_hat": r_hat,
    }


def verify_marginal(
    x, y, model: DriftModel, h: float, calib: Calibration, n: int, seed,
    alpha: float = 0.01, bonferroni_extra: int = 1, key: int = 0,
) -> TestReport:
    """KS-test ``y_next`` against ``N(u(y), h sigma^2 I)`` coordinate-wise.

    Also tests the projection onto the coupling axis when it is defined.
    Bonferroni-corrects over the coordinate tests (plus ``bonferroni_extra``
    external repetitions, e.g. pairs in a grid).
    """
    if n < 10_000:
        raise InputError("marginal verification needs n >= 1e4")
    b = _couple_batch(x, y, model, h, calib, n, seed, key=key)
    sd = abs(model.sigma) * np.sqrt(h)
    resid = (b["y_next"] - b["uy"]) / sd
    tests = [(f"coord{j}", resid[:, j]) for j in range(model.dim)]
    if b["r_hat"] > 0.0:
        tests.append(("projection", (b["y_next"] - b["uy"]) @ b["e"] / sd))
    n_tests = len(tests) * max(1, bonferroni_extra)
    critical = kolmogi(alpha / n_tests) / np.sqrt(n)
    rows = []
    for label, sample in tests:
        stat = ks_statistic_against_cdf(np.sort(sample), ndtr)
        rows.append(
            {"test": label, "ks": float(stat), "critical": float(critical),
             "passed": bool(stat <= critical)}
        )
    return TestReport("marginal_law", all(r["passed"] for r in rows), tuple(rows))


def verify_mean_distance(
    x, y, model: DriftModel, h: float, calib: Calibration, n: int, seed, key: int = 0
) -> TestReport:
    """Monte Carlo check of the identity ``E R_hat = r_hat``.

    Tested on the centered variable ``R_hat - r_hat`` (exactly zero on
    synchronous draws), so a pair that never sticks or reflects passes with
    zero error instead of accumulating mean-of-constants roundoff.
    """
    b = _couple_batch(x, y, model, h, calib, n, seed, key=key)
    centered = b["R_hat"] - b["r_hat"]
    mean = float(centered.mean())
    se = float(centered.std(ddof=1) / np.sqrt(n))
    row = {
        "r_hat": b["r_hat"], "mc_mean": b["r_hat"] + mean, "stderr": se,
        "abs_error": abs(mean),
        "passed": bool(abs(mean) <= 3.0 * se),
    }
    return TestReport("mean_distance_identity", row["passed"], (row,))


def verify_contraction(
    pairs, model: DriftModel, h: float, calib: Calibration, df: DistanceFunction,
    n: int, seed,
) -> TestReport:
    """Check ``E f(R_hat) <= (1 - c h) f(r) + 3 SE`` for each pair.

    When the calibrated gap ``c h f(r)`` is below the Monte Carlo standard
    error the pair cannot resolve the rate; it is then asserted at the
    weaker ``E f(R_hat) <= f(r) + 3 SE`` and flagged ``resolution_limited``
    instead of being skipped.
    """
    if h > calib.h_coupling:
        raise InputError(f"h = {h} above the coupling ceiling {calib.h_coupling}")
    rows = []
    for idx, (x, y) in enumerate(pairs):
        b = _couple_batch(x, y, model, h, calib, n, seed, key=idx)
        px = truncate(np.asarray(x, dtype=float), h, calib.trunc)
        py = truncate(np.asarray(y, dtype=float), h, calib.trunc)
        r = float(np.linalg.norm(px - py))
        f_r = eval_f(df, r)
        fR = eval_f(df, b["R_hat"])
        mean = float(fR.mean())
        se = float(fR.std(ddof=1) / np.sqrt(n))
        gap = calib.c * h * f_r
        limited = gap < se
        bound = f_r + 3.0 * se if limited else (1.0 - calib.c * h) * f_r + 3.0 * se
        rows.append(
            {"pair": idx, "r": r, "r_hat": b["r_hat"], "f_r": f_r, "mc_mean": mean,
             "stderr": se, "bound": bound, "resolution_limited": bool(limited),
             "passed": bool(mean <= bound)}
        )
    return TestReport("one_step_contraction", all(r["passed"] for r in rows), tuple(rows))


def verify_second_moment_lower_bounds(
    x, y, model: DriftModel, h: float, calib: Calibration, n: int, seed, key: int = 0
) -> TestReport:
    """Test each restricted second-moment lower bound whose regime applies.

    Regime gates (on ``r = |trunc(x)-trunc(y)|``, ``r_hat`` and ``h``):

    * small-r bound ``c1 r_hat sqrt(h)`` on the window
      ``R_hat in (r + sqrt(h), r + 18 sqrt(h))`` when ``r <= sqrt(h)``;
    * small-r_hat bound ``c2 r_hat sqrt(h)`` on ``R_hat in (0, r_hat + sqrt(h))``
      when ``r_hat <= min(H, sqrt(h))``;
    * mid-range bound ``c3 h`` on ``R_hat in (r - sqrt(h), r)`` when
      ``r in [sqrt(h), h^(theta-1/2)/(4M)]`` and ``r_hat in [sqrt(h), H]``.
    """
    calib.require_coupling()
    b = _couple_batch(x, y, model, h, calib, n, seed, key=key)
    px = truncate(np.asarray(x, dtype=float), h, calib.trunc)
    py = truncate(np.asarray(y, dtype=float), h, calib.trunc)
    r = float(np.linalg.norm(px - py))
    r_hat = b["r_hat"]
    R = b["R_hat"]
    sh = np.sqrt(h)
    M, tb, theta = calib.trunc.M, calib.trunc.theta_bar, calib.trunc.theta
    rows = []

    def mc(moment_samples, bound, label):
        mean = float(moment_samples.mean())
        se = float(moment_samples.std(ddof=1) / np.sqrt(n))
        rows.append(
            {"lemma": label, "r": r, "r_hat": r_hat, "mc_mean": mean, "stderr": se,
             "lower_bound": bound, "passed": bool(mean >= bound - 3.0 * se)}
        )

    if 0.0 < r <= sh and h <= min(calib.m**2 / 64.0, M ** (1.0 / (tb - 1.0))) and r_hat <= calib.H:
        window = (R > r + sh) & (R < r + 18.0 * sh)
        mc((R - r) ** 2 * window, calib.c1 * r_hat * sh, "small_r")
    if r_hat <= min(calib.H, sh) and h <= 4.0 * calib.m**2:
        window = (R > 0.0) & (R < r_hat + sh)
        mc((R - r_hat) ** 2 * window, calib.c2 * r_hat * sh, "small_r_hat")
    if (
        h <= min(4.0 * calib.m**2, (4.0 * M) ** (1.0 / (tb - 1.0)), calib.H**2)
        and sh <= r <= h ** (theta - 0.5) / (4.0 * M)
        and sh <= r_hat <= calib.H
    ):
        window = (R > r - sh) & (R < r)
        mc((R - r) ** 2 * window, calib.c3 * h, "mid_range")
    if not rows:
        raise InputError("pair and step size match no lower-bound regime")
    return TestReport("second_moment_lower_bounds", all(r_["passed"] for r_ in rows), tuple(rows))
