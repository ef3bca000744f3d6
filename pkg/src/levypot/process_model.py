"""Process specifications: radial Levy densities and the built-in families.

A process is determined by the dimension d, the Gaussian coefficient
sigma2 (generator convention: sigma2 * Laplacian), and a radial Levy
density nu(s) with non-increasing profile.  The built-in families cover
power-law, slowly decaying, subordinate-Brownian, compactly supported and
critically singular profiles.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.special import gamma as _gamma

from ._quad import DEFAULT_QUAD, QuadratureConfig, integrate_radial
from .errors import ParamOutOfRange, UnknownFamily, ValidationFailed

__all__ = [
    "RadialProfile", "ProcessSpec", "ValidationReport",
    "make_family", "validate", "sphere_area", "ball_volume",
]


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d (omega_{d-1})."""
    return 2.0 * math.pi ** (d / 2.0) / _gamma(d / 2.0)


def ball_volume(d: int, r: float = 1.0) -> float:
    return sphere_area(d) * r ** d / d


@dataclass(frozen=True, eq=False)
class RadialProfile:
    """Radial Levy density nu(s), s > 0, with monotone non-increasing profile.

    eval_fn accepts scalars or numpy arrays of radii.  total_mass is the
    full-space integral of nu (finite iff the jump part is compound
    Poisson); support_radius is inf for fully supported profiles.
    """

    eval_fn: Callable
    d: int
    support_radius: float = math.inf
    singular_at_zero: bool = False
    total_mass: float = math.inf
    family_tag: str = "custom"
    params: dict = field(default_factory=dict)
    knee_radii: tuple = ()  # interior radii where the profile has kinks

    def __call__(self, s):
        with np.errstate(over="ignore", divide="ignore", under="ignore"):
            return self.eval_fn(s)

    @property
    def is_zero(self) -> bool:
        return self.total_mass == 0.0


@dataclass(frozen=True, eq=False)
class ProcessSpec:
    """Isotropic unimodal Levy process: dimension, Gaussian part, jump part."""

    d: int
    sigma2: float
    nu: RadialProfile
    family: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.d < 1:
            raise ParamOutOfRange("dimension must be a positive integer")
        if self.sigma2 < 0:
            raise ParamOutOfRange("sigma2 must be non-negative")
        if self.sigma2 == 0 and self.nu.is_zero:
            raise ParamOutOfRange("process must be non-constant")
        if self.nu.d != self.d:
            raise ParamOutOfRange("profile dimension disagrees with spec")

    @property
    def is_compound_poisson(self) -> bool:
        return self.sigma2 == 0.0 and math.isfinite(self.nu.total_mass) \
            and self.nu.total_mass > 0

    @property
    def has_finite_activity(self) -> bool:
        return math.isfinite(self.nu.total_mass)

    def __repr__(self):  # compact, used in CSV context columns
        ps = ",".join(f"{k}={v:g}" for k, v in sorted(self.params.items()))
        return f"{self.family}(d={self.d}{',' + ps if ps else ''})"


def _zero_profile(d: int) -> RadialProfile:
    def ev(s):
        return np.zeros_like(np.asarray(s, dtype=float))
    return RadialProfile(ev, d=d, support_radius=0.0, singular_at_zero=False,
                         total_mass=0.0, family_tag="zero")


def _require_positive(**kv):
    for k, v in kv.items():
        if not (v > 0):
            raise ParamOutOfRange(f"parameter {k} must be positive, got {v}")


@functools.lru_cache(maxsize=200_000)
def _vg_density_scalar(d: int, s: float) -> float:
    """Gaussian mixture density int_0^inf (4 pi t)^{-d/2} e^{-s^2/(4t)} t^{-1} e^{-t} dt."""
    if s <= 0:
        return math.inf
    ls = math.log(s)
    log4 = math.log(4.0)
    log4pi = math.log(4.0 * math.pi)

    # u = log t; the integrand is assembled in log space to dodge overflow
    def in_log(u):
        lg = -(d / 2.0) * (log4pi + u) - math.exp(min(2.0 * ls - log4 - u, 700.0)) \
            - math.exp(u)
        if lg <= -745.0:
            return 0.0
        if lg >= 708.0:
            raise OverflowError
        return math.exp(lg)

    # peak near t* = s/2 for large s, t* ~ s^2/(2d) for small s
    u0 = min(ls - math.log(2.0), max(2.0 * ls - math.log(2.0 * d + 2.0), -690.0))
    u0 = min(u0, 0.0)
    val = 0.0
    try:
        for a, b in ((u0 - 60.0, u0), (u0, u0 + 60.0)):
            v, _ = integrate.quad(in_log, a, b, epsabs=1e-300, epsrel=1e-12,
                                  limit=200)
            val += v
    except OverflowError:
        return math.inf
    return val


def _stable_profile(d, alpha, A):
    def ev(s):
        s = np.asarray(s, dtype=float)
        return A * s ** (-d - alpha)
    return RadialProfile(ev, d=d, singular_at_zero=True,
                         family_tag="stable", params={"alpha": alpha, "A": A})


def _slow_decay_profile(d, alpha, C):
    def ev(s):
        s = np.asarray(s, dtype=float)
        return C * s ** (-float(d)) * (1.0 + s) ** (-alpha)
    return RadialProfile(ev, d=d, singular_at_zero=True,
                         family_tag="slow_decay", params={"alpha": alpha, "C": C},
                         knee_radii=(1.0,))


def _variance_gamma_profile(d):
    def ev(s):
        arr = np.asarray(s, dtype=float)
        if arr.ndim == 0:
            return _vg_density_scalar(d, float(arr))
        out = np.empty(arr.shape, dtype=float)
        flat = arr.ravel()
        res = out.ravel()
        for i, x in enumerate(flat):
            res[i] = _vg_density_scalar(d, float(x))
        return out
    return RadialProfile(ev, d=d, singular_at_zero=True,
                         family_tag="variance_gamma", params={})


def _uniform_ball_mix_profile(d, weights_radii, tag, params):
    """Sum of c_i/|B_{R_i}| indicators; weights_radii = [(mass_i, R_i), ...]."""
    comps = [(m / ball_volume(d, R), R) for m, R in weights_radii]
    total = sum(m for m, _ in weights_radii)
    rmax = max(R for _, R in weights_radii)

    def ev(s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        for dens, R in comps:
            out = out + dens * (s < R)
        return out

    inner = tuple(sorted(R for _, R in weights_radii if R < rmax))
    return RadialProfile(ev, d=d, support_radius=rmax, singular_at_zero=False,
                         total_mass=total, family_tag=tag, params=params,
                         knee_radii=inner)


def _log_kernel_profile(d):
    def ev(s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(s < 1.0, s ** (-float(d)), 0.0)
    return RadialProfile(ev, d=d, support_radius=1.0, singular_at_zero=True,
                         family_tag="log_kernel", params={})


def make_family(family: str, **params) -> ProcessSpec:
    """Build and validate one of the built-in process families.

    Families and parameters:
      brownian(sigma2)                  pure Gaussian, generator sigma2*Lap
      stable(d, alpha, A)               nu(s) = A s^{-d-alpha}, 0 < alpha < 2
      slow_decay(d, alpha, C)           nu(s) = C s^{-d} (1+s)^{-alpha}
      variance_gamma(d)                 Gaussian mixture with t^{-1} e^{-t} weight
      two_uniform_cp(d, lam, R)         (1/|B_1|) 1{s<1} + (lam/|B_R|) 1{s<R}
      gauss_plus_uniform(d, lam, R)     sigma2 = 1 plus (lam/|B_R|) 1{s<R}
      log_kernel(d)                     nu(s) = s^{-d} 1{s<1}
    """
    p = dict(params)
    try:
        if family == "brownian":
            sigma2 = float(p.pop("sigma2", 1.0))
            d = int(p.pop("d", 3))
            _require_positive(sigma2=sigma2)
            spec = ProcessSpec(d=d, sigma2=sigma2, nu=_zero_profile(d),
                               family="brownian", params={"sigma2": sigma2})
        elif family == "stable":
            d = int(p.pop("d"))
            alpha = float(p.pop("alpha"))
            A = float(p.pop("A", 1.0))
            _require_positive(A=A)
            if not (0.0 < alpha < 2.0):
                raise ParamOutOfRange(f"stable index must lie in (0,2), got {alpha}")
            spec = ProcessSpec(d=d, sigma2=0.0, nu=_stable_profile(d, alpha, A),
                               family="stable", params={"alpha": alpha, "A": A})
        elif family == "slow_decay":
            d = int(p.pop("d"))
            alpha = float(p.pop("alpha"))
            C = float(p.pop("C", 1.0))
            _require_positive(C=C)
            if not (0.0 < alpha < 2.0):
                raise ParamOutOfRange(f"decay index must lie in (0,2), got {alpha}")
            spec = ProcessSpec(d=d, sigma2=0.0, nu=_slow_decay_profile(d, alpha, C),
                               family="slow_decay", params={"alpha": alpha, "C": C})
        elif family == "variance_gamma":
            d = int(p.pop("d"))
            spec = ProcessSpec(d=d, sigma2=0.0, nu=_variance_gamma_profile(d),
                               family="variance_gamma", params={})
        elif family == "two_uniform_cp":
            d = int(p.pop("d"))
            lam = float(p.pop("lam"))
            R = float(p.pop("R"))
            _require_positive(lam=lam, R=R)
            nu = _uniform_ball_mix_profile(
                d, [(1.0, 1.0), (lam, R)], "two_uniform_cp", {"lam": lam, "R": R})
            spec = ProcessSpec(d=d, sigma2=0.0, nu=nu,
                               family="two_uniform_cp", params={"lam": lam, "R": R})
        elif family == "gauss_plus_uniform":
            d = int(p.pop("d"))
            lam = float(p.pop("lam"))
            R = float(p.pop("R"))
            _require_positive(lam=lam, R=R)
            nu = _uniform_ball_mix_profile(
                d, [(lam, R)], "gauss_plus_uniform", {"lam": lam, "R": R})
            spec = ProcessSpec(d=d, sigma2=1.0, nu=nu,
                               family="gauss_plus_uniform", params={"lam": lam, "R": R})
        elif family == "log_kernel":
            d = int(p.pop("d"))
            spec = ProcessSpec(d=d, sigma2=0.0, nu=_log_kernel_profile(d),
                               family="log_kernel", params={})
        else:
            raise UnknownFamily(f"unknown family {family!r}")
    except KeyError as exc:
        raise ParamOutOfRange(f"missing parameter {exc} for family {family!r}") from exc
    if p:
        raise ParamOutOfRange(f"unexpected parameters for {family!r}: {sorted(p)}")

    report = validate(spec)
    if not report.ok:
        raise ValidationFailed(f"{family}: {report.problems}")
    return spec


# validation grid covers both ends of the O-regular-variation range
_GRID = np.logspace(-6.0, 6.0, 1000)


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    problems: tuple
    monotone_violations: int
    integrability: float
    total_mass: float
    compound_poisson: bool
    scaling_certified: bool | None = None
    scaling_worst_ratio: float | None = None


def validate(spec: ProcessSpec, scaling: tuple | None = None,
             cfg: QuadratureConfig = DEFAULT_QUAD) -> ValidationReport:
    """Diagnostic report: monotonicity, Levy integrability, total mass.

    `scaling`, if given, is an (M, alpha, R_inf) triple to check the
    two-sided power envelope of the profile (see scaling_indices for the
    full certification grid).
    """
    nu = spec.nu
    problems = []

    grid = _GRID
    vals = np.asarray(nu(grid), dtype=float)
    if np.any(vals < 0):
        problems.append("negative density values")
    diffs = np.diff(vals)
    viol = int(np.sum(diffs > 1e-12 * np.maximum(vals[:-1], 1e-300)))
    if viol:
        problems.append(f"{viol} monotonicity violations on the log grid")

    omega = sphere_area(spec.d)
    if nu.is_zero:
        integ = 0.0
        mass = 0.0
    else:
        def small(s):
            return float(nu(s)) * s ** (spec.d + 1)

        def large(s):
            return float(nu(s)) * s ** (spec.d - 1)

        knees = [k for k in nu.knee_radii if math.isfinite(k)]
        v1, _ = integrate_radial(small, 0.0, min(1.0, nu.support_radius), cfg,
                                 knees=knees)
        v2, _ = integrate_radial(large, 1.0, nu.support_radius, cfg, knees=knees)
        integ = omega * (v1 + v2)
        if not math.isfinite(integ):
            problems.append("Levy integrability integral diverges")
        if math.isfinite(nu.total_mass):
            mass, _ = integrate_radial(large, 0.0, nu.support_radius, cfg, knees=knees)
            mass *= omega
        else:
            mass = math.inf

    cp = spec.sigma2 == 0.0 and math.isfinite(mass) and mass > 0

    cert = worst = None
    if scaling is not None:
        from .scaling_indices import certify_scaling
        M, alpha, r_inf = scaling
        sc = certify_scaling(nu, M=M, alpha=alpha, R_inf=r_inf)
        cert, worst = sc.certified, sc.worst_ratio

    return ValidationReport(
        ok=not problems,
        problems=tuple(problems),
        monotone_violations=viol,
        integrability=integ,
        total_mass=mass,
        compound_poisson=cp,
        scaling_certified=cert,
        scaling_worst_ratio=worst,
    )
