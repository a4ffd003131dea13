"""Scheme and coupling parameter calibration.

Everything the integrator and the coupling verifiers need is derived here
from a model's structural constants: the truncation map and its radius, the
admissible step-size ceilings, the three Gaussian gain constants

* ``c1 = 5/(|s|^3 sqrt(2 pi)) min{exp(-1/(2 s^2)), 8 exp(-32/s^2)}``,
* ``c2 = 4|s|^3 (1 - exp(-1/s^2)) int_0^{1/(2|s|)} u^3 p01(u) du``,
* ``c3 = (1 - exp(-1/(8 s^2)))/16 int_{1/(4|s|)}^{3/(8|s|)} p01(u) du``

(``p01`` the standard normal density, ``s`` the noise scale), the distance
function, and the one-step contraction rate

``c = min{cstar, phi(r1) K R/(4 r1), c2 cstar Phi(1)/(2 c3), M}``.

The recipe couples ``m`` to constants that themselves depend on
``r1 = 2R + 2m``; the fixed point ``m <- max(8, c3^2/(8 Phi(1)^2 cstar c2) - R)``
is attempted first, but for every model with a meaningfully stiff ``c3``
the update explodes (``cstar`` shrinks double-exponentially in ``m``), so a
divergence is detected and ``m = 8`` is used instead, after verifying the
contraction theorem's direct hypotheses at that value.  ``Calibration``
records which route was taken.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import IO

import numpy as np

from . import distfn as _distfn
from .errors import CalibrationError, InputError
from .model import DissipativityConstants, DriftModel, GrowthConstants, ModelBundle
from .quadrature import adaptive_simpson

DEFAULT_THETA_BAR = 0.25
# Step ceilings apply to step sizes in (0, 1].
CEILING_CAP = 1.0
# Ceiling terms whose value cannot matter for any runnable step size are
# excluded (and flagged) rather than zeroing out the whole ceiling.
DEGENERATE_TERM_FLOOR = 1e-12
M_FIXED_POINT_CAP = 1e9
M_FIXED_POINT_TOL = 1e-9
M_FIXED_POINT_MAX_ITER = 100


def growth_bound(u: float, growth: GrowthConstants) -> float:
    """``Lstar (1 + 2 u^ell)``: the local Lipschitz bound at radius ``u``."""
    if u < 0:
        raise InputError("u must be nonnegative")
    return growth.Lstar * (1.0 + 2.0 * u**growth.ell)


def growth_bound_inverse(v: float, growth: GrowthConstants) -> float:
    """Inverse of :func:`growth_bound`; defined for ``v > Lstar``."""
    if not v > growth.Lstar:
        raise InputError(f"growth_bound_inverse needs v > Lstar = {growth.Lstar}")
    return ((v - growth.Lstar) / (2.0 * growth.Lstar)) ** (1.0 / growth.ell)


@dataclass(frozen=True)
class TruncationParams:
    """Parameters of the radial truncation map."""

    M: float
    theta: float
    theta_bar: float
    growth: GrowthConstants

    def __post_init__(self):
        if not (0.0 < self.theta <= self.theta_bar < 0.5):
            raise InputError("need 0 < theta <= theta_bar < 1/2")
        if not self.M > self.growth.Lstar:
            raise InputError("need M > Lstar so the truncation radius is defined on (0, 1]")


def truncation_radius(h: float, trunc: TruncationParams) -> float:
    """Radius of the truncation ball at step size ``h``; decreasing in ``h``."""
    if not (0.0 < h <= 1.0):
        raise InputError("step size must lie in (0, 1]")
    return growth_bound_inverse(trunc.M * h**-trunc.theta, trunc.growth)


def truncate(x: np.ndarray, h: float, trunc: TruncationParams) -> np.ndarray:
    """Radially project ``x`` into the truncation ball; idempotent, norm-contractive."""
    x = np.asarray(x, dtype=float)
    radius = truncation_radius(h, trunc)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(norm > radius, radius / norm, 1.0)
    return x * scale


def coupling_gain_constants(sigma: float) -> tuple[float, float, float]:
    """The three Gaussian gain constants (c1, c2, c3) for noise scale sigma."""
    if sigma == 0:
        raise InputError("sigma must be nonzero")
    s = abs(sigma)
    s2 = sigma * sigma

    def p01(u):
        return math.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi)

    c1 = 5.0 / (s**3 * math.sqrt(2.0 * math.pi)) * min(
        math.exp(-1.0 / (2.0 * s2)), 8.0 * math.exp(-32.0 / s2)
    )
    c2 = (
        4.0
        * s**3
        * (1.0 - math.exp(-1.0 / s2))
        * adaptive_simpson(lambda u: u**3 * p01(u), 0.0, 1.0 / (2.0 * s))
    )
    c3 = (
        (1.0 - math.exp(-1.0 / (8.0 * s2)))
        / 16.0
        * adaptive_simpson(p01, 1.0 / (4.0 * s), 3.0 / (8.0 * s))
    )
    return c1, c2, c3


@dataclass(frozen=True)
class StepCeilings:
    """Admissible step-size ceilings, all clamped into (0, 1]."""

    hbar: float
    h1: float
    h2: float
    h3: float
    # log of the coupling-gain term of h1 when it is too small to matter
    h1_degenerate_term_log: float | None = None

    @property
    def coupling(self) -> float:
        return min(self.h1, self.h2, self.h3)


def step_ceilings(
    consts: DissipativityConstants,
    trunc: TruncationParams,
    *,
    c1: float,
    c3: float,
    log_cstar: float,
    Phi1: float,
    r1: float,
) -> StepCeilings:
    """Evaluate the four step-size ceilings from already-known constants."""
    K, L, R = consts.K, consts.L, consts.R
    M, tb = trunc.M, trunc.theta_bar
    if R <= 0:
        raise CalibrationError("coupling step ceilings require R > 0")
    base = (K / (M * M)) ** (1.0 / (1.0 - 2.0 * tb))
    hbar = min(base, 2.0 / K, CEILING_CAP)
    h2 = min(base, 1.0 / K, 1.0 / L, (2.0 * M) ** (1.0 / (tb - 1.0)), R * R, CEILING_CAP)
    log_gain_term = (2.0 / (1.0 - 2.0 * tb)) * (
        math.log(c1) + log_cstar + math.log(Phi1) - math.log(4.0 * M * c3)
    )
    h1_terms = [h2, r1 * r1 / 361.0, CEILING_CAP]
    degenerate_log = None
    gain_term = math.exp(log_gain_term) if log_gain_term > -745.0 else 0.0
    if gain_term >= DEGENERATE_TERM_FLOOR:
        h1_terms.append(gain_term)
    else:
        degenerate_log = log_gain_term
    h1 = min(h1_terms)
    h3 = min(
        (4.0 * M) ** (1.0 / (tb - 1.0)),
        4.0 * R * R,
        (4.0 * M * r1) ** (2.0 / (2.0 * tb - 1.0)),
        M ** (1.0 / (2.0 * tb - 1.0)),
        CEILING_CAP,
    )
    for name, v in [("hbar", hbar), ("h1", h1), ("h2", h2), ("h3", h3)]:
        if not (0.0 < v <= 1.0):
            raise CalibrationError(f"step ceiling {name} = {v} not in (0, 1]")
    return StepCeilings(hbar, h1, h2, h3, degenerate_log)


@dataclass(frozen=True)
class Calibration:
    """Every derived scheme/coupling parameter for one model.

    ``cstar``, ``c`` and ``phi_r1`` underflow for stiff models; their exact
    logarithms are carried alongside, and every internal comparison uses the
    logarithms.  ``coupling_defined`` is False when ``R = 0`` (uniformly
    dissipative drift), in which case only ``trunc`` and ``hbar`` are set.
    """

    model_name: str
    sigma: float
    consts: DissipativityConstants
    growth: GrowthConstants
    trunc: TruncationParams
    hbar: float
    coupling_defined: bool = True
    H: float = float("nan")
    m: float = float("nan")
    r1: float = float("nan")
    c1: float = float("nan")
    c2: float = float("nan")
    c3: float = float("nan")
    cstar: float = float("nan")
    log_cstar: float = float("nan")
    c: float = float("nan")
    log_c: float = float("nan")
    phi_r1: float = float("nan")
    log_phi_r1: float = float("nan")
    Phi1: float = float("nan")
    h1: float = float("nan")
    h2: float = float("nan")
    h3: float = float("nan")
    h1_degenerate_term_log: float | None = None
    m_recipe: str = "fixed_point"
    notes: tuple[str, ...] = field(default_factory=tuple)

    @property
    def h_coupling(self) -> float:
        """Largest step admissible for every coupling statement at once."""
        return min(self.h1, self.h2, self.h3)

    def require_coupling(self):
        if not self.coupling_defined:
            raise CalibrationError(
                f"model {self.model_name!r} has R = 0; coupling constants are undefined "
                "(uniformly dissipative case, use plain synchronous analysis)"
            )

    def items(self):
        """Flat (key, value) listing used by the CLI and the file format."""
        out = [
            ("model", self.model_name),
            ("sigma", self.sigma),
            ("L", self.consts.L),
            ("K", self.consts.K),
            ("R", self.consts.R),
            ("Lstar", self.growth.Lstar),
            ("ell", self.growth.ell),
            ("M", self.trunc.M),
            ("theta", self.trunc.theta),
            ("theta_bar", self.trunc.theta_bar),
            ("hbar", self.hbar),
            ("coupling_defined", self.coupling_defined),
        ]
        if self.coupling_defined:
            out += [
                ("H", self.H),
                ("m", self.m),
                ("r1", self.r1),
                ("c1", self.c1),
                ("c2", self.c2),
                ("c3", self.c3),
                ("cstar", self.cstar),
                ("log_cstar", self.log_cstar),
                ("c", self.c),
                ("log_c", self.log_c),
                ("phi_r1", self.phi_r1),
                ("log_phi_r1", self.log_phi_r1),
                ("Phi1", self.Phi1),
                ("h1", self.h1),
                ("h2", self.h2),
                ("h3", self.h3),
                (
                    "h1_degenerate_term_log",
                    "none" if self.h1_degenerate_term_log is None else self.h1_degenerate_term_log,
                ),
                ("m_recipe", self.m_recipe),
            ]
        return out

    def dump(self, fp: IO[str]) -> None:
        for key, value in self.items():
            fp.write(f"{key}={value!r}\n" if isinstance(value, str) else f"{key}={value!r}\n")


def recipe_M(model: DriftModel, consts: DissipativityConstants, growth: GrowthConstants) -> float:
    """Truncation scale: ``max{|b(0)|, 3 Lstar, 1, sqrt(K), 1/(512 R |sigma|)}``.

    The ``3 Lstar`` floor (rather than 2) is what the truncation-defect
    moment bound actually needs; without it the radius formula is still
    defined but the defect estimates lose their constants.
    """
    terms = [model.drift_at_origin_norm, 3.0 * growth.Lstar, 1.0, math.sqrt(consts.K)]
    if consts.R > 0:
        terms.append(1.0 / (512.0 * consts.R * abs(model.sigma)))
    return max(terms)


def _verify_contraction_hypotheses(M, consts, ceilings, H, m, c2, c3, log_cstar, Phi1, r1):
    """Direct hypotheses of the one-step contraction theorem at given (M, H, m)."""
    problems = []
    log_t2 = math.log(c2) + log_cstar + math.log(Phi1) - math.log(4.0 * c3)
    t2 = math.exp(log_t2) if log_t2 > -745.0 else 0.0
    t3 = c3 / (16.0 * r1 * Phi1)
    if M < max(math.sqrt(consts.K), t2, t3, 1.0):
        problems.append(f"M = {M} below required max(sqrt(K), {t2}, {t3}, 1)")
    lo = math.sqrt(max(ceilings.h2, ceilings.h3))
    if not (lo <= H <= 2.0 * consts.R):
        problems.append(f"H = {H} outside [{lo}, {2 * consts.R}]")
    if m < 0.5 * math.sqrt(max(256.0 * ceilings.h1, ceilings.h2, ceilings.h3)):
        problems.append(f"m = {m} below half square root of max(256 h1, h2, h3)")
    return problems


def calibrate_full(
    bundle: ModelBundle,
    theta_bar: float = DEFAULT_THETA_BAR,
    theta: float | None = None,
) -> Calibration:
    """Derive the complete parameter set for a model.

    Deterministic: identical inputs give bitwise-identical calibrations.
    """
    model, consts, growth = bundle.model, bundle.dissipativity, bundle.growth
    theta = theta_bar if theta is None else theta
    M = recipe_M(model, consts, growth)
    trunc = TruncationParams(M=M, theta=theta, theta_bar=theta_bar, growth=growth)
    if model.drift_at_origin_norm > M or M < 3.0 * growth.Lstar:
        raise CalibrationError("recipe produced M below |b(0)| or 3 Lstar")

    base_hbar = (consts.K / (M * M)) ** (1.0 / (1.0 - 2.0 * theta_bar))
    hbar = min(base_hbar, 2.0 / consts.K, CEILING_CAP)

    if consts.R == 0:
        return Calibration(
            model_name=model.name,
            sigma=model.sigma,
            consts=consts,
            growth=growth,
            trunc=trunc,
            hbar=hbar,
            coupling_defined=False,
            notes=("R = 0: uniformly dissipative; coupling constants undefined",),
        )

    c1, c2, c3 = coupling_gain_constants(model.sigma)

    notes: list[str] = []
    m = 8.0
    m_recipe = "fixed_point"
    df = None
    for iteration in range(M_FIXED_POINT_MAX_ITER):
        r1 = 2.0 * consts.R + 2.0 * m
        df = _distfn.build_distance_function_raw(consts.L, c3, r1)
        log_update = 2.0 * math.log(c3) - math.log(8.0 * df.Phi1**2 * c2) - df.log_cstar
        update = math.exp(log_update) - consts.R if log_update < 709.0 else math.inf
        m_new = max(8.0, update)
        if not math.isfinite(m_new) or m_new > M_FIXED_POINT_CAP:
            # cstar decays double-exponentially in m, so once the update
            # exceeds any usable magnitude no finite fixed point exists.
            m = 8.0
            m_recipe = "fallback_min8"
            notes.append(
                "m-recipe fixed point diverges (update exceeds "
                f"{M_FIXED_POINT_CAP:g} at iteration {iteration}); using m = 8 and "
                "verifying the contraction hypotheses directly"
            )
            r1 = 2.0 * consts.R + 2.0 * m
            df = _distfn.build_distance_function_raw(consts.L, c3, r1)
            break
        if abs(m_new - m) < M_FIXED_POINT_TOL:
            m = m_new
            break
        m = m_new
    else:
        raise CalibrationError(
            f"m fixed point did not converge in {M_FIXED_POINT_MAX_ITER} iterations; "
            f"last iterates near m = {m}"
        )

    r1 = 2.0 * consts.R + 2.0 * m
    H = 2.0 * consts.R
    ceilings = step_ceilings(
        consts, trunc, c1=c1, c3=c3, log_cstar=df.log_cstar, Phi1=df.Phi1, r1=r1
    )
    problems = _verify_contraction_hypotheses(
        M, consts, ceilings, H, m, c2, c3, df.log_cstar, df.Phi1, r1
    )
    if problems:
        raise CalibrationError("contraction hypotheses fail: " + "; ".join(problems))

    log_phi_r1 = float(df.log_phi_vals[-1])
    log_c = min(
        df.log_cstar,
        log_phi_r1 + math.log(consts.K * consts.R / (4.0 * r1)),
        math.log(c2) + df.log_cstar + math.log(df.Phi1) - math.log(2.0 * c3),
        math.log(M),
    )
    cal = Calibration(
        model_name=model.name,
        sigma=model.sigma,
        consts=consts,
        growth=growth,
        trunc=trunc,
        hbar=ceilings.hbar,
        coupling_defined=True,
        H=H,
        m=m,
        r1=r1,
        c1=c1,
        c2=c2,
        c3=c3,
        cstar=df.cstar,
        log_cstar=df.log_cstar,
        c=math.exp(log_c) if log_c > -745.0 else 0.0,
        log_c=log_c,
        phi_r1=math.exp(log_phi_r1) if log_phi_r1 > -745.0 else 0.0,
        log_phi_r1=log_phi_r1,
        Phi1=df.Phi1,
        h1=ceilings.h1,
        h2=ceilings.h2,
        h3=ceilings.h3,
        h1_degenerate_term_log=ceilings.h1_degenerate_term_log,
        m_recipe=m_recipe,
        notes=tuple(notes),
    )
    _check_calibration_invariants(cal)
    return cal


def _check_calibration_invariants(cal: Calibration) -> None:
    problems = []
    if cal.r1 != 2.0 * cal.consts.R + 2.0 * cal.m:
        problems.append("r1 != 2R + 2m")
    upper = math.log(cal.c3) - math.log(4.0 * cal.r1 * cal.Phi1)
    lower = math.log(cal.c3) + cal.log_phi_r1 - math.log(4.0 * cal.r1 * (cal.r1 + 1.0))
    if not (lower - 1e-9 <= cal.log_cstar <= upper + 1e-9):
        problems.append(f"log cstar {cal.log_cstar} outside [{lower}, {upper}]")
    if cal.log_c + math.log(cal.h_coupling) >= 0.0:
        problems.append("c * h not below 1 on the admissible step range")
    if problems:
        raise CalibrationError("calibration invariants violated: " + "; ".join(problems))


def save_calibration(cal: Calibration, path) -> None:
    with open(path, "w") as fp:
        cal.dump(fp)


_FLOAT_KEYS = {
    "sigma", "L", "K", "R", "Lstar", "ell", "M", "theta", "theta_bar", "hbar",
    "H", "m", "r1", "c1", "c2", "c3", "cstar", "log_cstar", "c", "log_c",
    "phi_r1", "log_phi_r1", "Phi1", "h1", "h2", "h3",
}


def load_calibration(path) -> Calibration:
    """Rebuild a Calibration from the key=value file written by `save_calibration`."""
    raw: dict[str, str] = {}
    with open(path) as fp:
        for line in fp:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            raw[key.strip()] = value.strip().strip("'\"")
    try:
        consts = DissipativityConstants(
            L=float(raw["L"]), K=float(raw["K"]), R=float(raw["R"])
        )
        growth = GrowthConstants(Lstar=float(raw["Lstar"]), ell=float(raw["ell"]))
        trunc = TruncationParams(
            M=float(raw["M"]),
            theta=float(raw["theta"]),
            theta_bar=float(raw["theta_bar"]),
            growth=growth,
        )
        coupling_defined = raw.get("coupling_defined", "True") == "True"
        kwargs = dict(
            model_name=raw["model"],
            sigma=float(raw["sigma"]),
            consts=consts,
            growth=growth,
            trunc=trunc,
            hbar=float(raw["hbar"]),
            coupling_defined=coupling_defined,
        )
        if coupling_defined:
            for key in _FLOAT_KEYS - {
                "sigma", "L", "K", "R", "Lstar", "ell", "M", "theta", "theta_bar", "hbar"
            }:
                kwargs[key] = float(raw[key])
            dlog = raw.get("h1_degenerate_term_log", "none")
            kwargs["h1_degenerate_term_log"] = None if dlog == "none" else float(dlog)
            kwargs["m_recipe"] = raw.get("m_recipe", "fixed_point")
        return Calibration(**kwargs)
    except KeyError as exc:
        raise InputError(f"calibration file {path} is missing key {exc}") from exc
