"""Deterministic radial calculus: K, L, the characteristic exponent, the
potential kernel by Fourier inversion, and the generator on radial test
functions.

Conventions.  omega = surface area of the unit sphere; the Gaussian part of
the generator is sigma2 * Laplacian, so the exponent of a pure-Gaussian
process is sigma2 * rho^2.  The activity functional splits as

    K(r) = sigma2 * d / r^2 + (omega / r^2) int_0^r s^{d+1} nu(s) ds
    L(r) = omega int_r^inf s^{d-1} nu(s) ds

and all estimates in the package are phrased through K, L and K + L.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import gamma as _gamma
from scipy.special import jv, roots_chebyt, roots_gegenbauer

from ._quad import (DEFAULT_QUAD, QuadratureConfig, euler_sum,
                    euler_sum_adaptive, integrate_radial, integrate_tail,
                    integrate_zero_to, quiet_quad)
from .errors import DomainError, NonConvergentQuadrature, TransienceNotGuaranteed
from .process_model import ProcessSpec, sphere_area
from .radialfn import RadialC2

__all__ = [
    "QuadratureConfig", "DEFAULT_QUAD", "PruittValues",
    "pruitt_K", "pruitt_L", "pruitt_values", "kl_sum", "h_scale",
    "psi", "potential_kernel_fourier", "potential_ball_integral",
    "generator_apply",
]


@dataclass(frozen=True)
class PruittValues:
    """Activity and tail-mass functionals at one radius."""

    r: float
    K: float
    L: float
    sum: float
    h: float


def _check_radius(r):
    if not (r > 0) or not math.isfinite(r):
        raise DomainError(f"radius must be positive and finite, got {r}")


@functools.lru_cache(maxsize=500_000)
def _pruitt_K_cached(spec: ProcessSpec, r: float, cfg: QuadratureConfig) -> float:
    gauss = spec.sigma2 * spec.d / (r * r)
    nu = spec.nu
    if nu.is_zero:
        return gauss
    d = spec.d

    # scaled variable t = s / r keeps intermediates in range for extreme r
    def integrand(t):
        return t ** (d + 1) * float(nu(r * t))

    upper = min(1.0, nu.support_radius / r)
    knees = [k / r for k in nu.knee_radii if 0 < k / r < upper]
    val, err = integrate_zero_to(integrand, upper, cfg, knees=knees)
    val *= sphere_area(d) * r ** d
    if not math.isfinite(val):
        raise NonConvergentQuadrature(f"K({r}) quadrature returned {val}")
    return gauss + val


@functools.lru_cache(maxsize=500_000)
def _pruitt_L_cached(spec: ProcessSpec, r: float, cfg: QuadratureConfig) -> float:
    nu = spec.nu
    if nu.is_zero or r >= nu.support_radius:
        return 0.0
    d = spec.d

    def integrand(t):
        return t ** (d - 1) * float(nu(r * t))

    knees = [k / r for k in nu.knee_radii if k / r > 1.0]
    upper = nu.support_radius / r if math.isfinite(nu.support_radius) else math.inf
    val, err = integrate_tail(integrand, 1.0, cfg, knees=knees, upper=upper)
    val *= sphere_area(d) * r ** d
    if not math.isfinite(val):
        raise NonConvergentQuadrature(f"L({r}) quadrature returned {val}")
    return val


def pruitt_K(spec: ProcessSpec, r: float, cfg: QuadratureConfig = DEFAULT_QUAD) -> float:
    """Activity functional at radius r."""
    _check_radius(r)
    return _pruitt_K_cached(spec, float(r), cfg)


def pruitt_L(spec: ProcessSpec, r: float, cfg: QuadratureConfig = DEFAULT_QUAD) -> float:
    """Mass of jumps larger than r."""
    _check_radius(r)
    return _pruitt_L_cached(spec, float(r), cfg)


def kl_sum(spec: ProcessSpec, r: float, cfg: QuadratureConfig = DEFAULT_QUAD) -> float:
    return pruitt_K(spec, r, cfg) + pruitt_L(spec, r, cfg)


def h_scale(spec: ProcessSpec, s: float, cfg: QuadratureConfig = DEFAULT_QUAD) -> float:
    """Boundary decay scale 1 / sqrt(K(s) + L(s))."""
    return 1.0 / math.sqrt(kl_sum(spec, s, cfg))


def pruitt_values(spec: ProcessSpec, r: float,
                  cfg: QuadratureConfig = DEFAULT_QUAD) -> PruittValues:
    K = pruitt_K(spec, r, cfg)
    L = pruitt_L(spec, r, cfg)
    tot = K + L
    return PruittValues(r=r, K=K, L=L, sum=tot,
                        h=tot ** -0.5 if tot > 0 else math.inf)


# ---------------------------------------------------------------------------
# spherical means of cos and of radial test functions

_SMALL_ARG = 1e-2


def _cos_mean(d: int, u):
    """Mean of cos over the unit sphere direction: j_d(u).

    j_1 = cos, j_3 = sin(u)/u; in general a normalised Bessel function of
    order d/2 - 1.  A three-term series is used below the small-argument
    cutoff.
    """
    u = np.asarray(u, dtype=float)
    small = np.abs(u) < _SMALL_ARG
    out = np.empty_like(u)
    if np.any(small):
        q = u[small] ** 2
        out[small] = (1.0 - q / (2.0 * d)
                      + q * q / (8.0 * d * (d + 2))
                      - q ** 3 / (48.0 * d * (d + 2) * (d + 4)))
    big = ~small
    if np.any(big):
        ub = u[big]
        if d == 1:
            out[big] = np.cos(ub)
        elif d == 3:
            out[big] = np.sin(ub) / ub
        else:
            nu_ord = d / 2.0 - 1.0
            out[big] = (_gamma(d / 2.0) * (2.0 / ub) ** nu_ord * jv(nu_ord, ub))
    return out if out.ndim else float(out)


def _one_minus_cos_mean(d: int, u):
    """g_d(u) = 1 - j_d(u), series-protected for small arguments."""
    u = np.asarray(u, dtype=float)
    small = np.abs(u) < _SMALL_ARG
    out = np.empty_like(u)
    if np.any(small):
        q = u[small] ** 2
        out[small] = (q / (2.0 * d)
                      - q * q / (8.0 * d * (d + 2))
                      + q ** 3 / (48.0 * d * (d + 2) * (d + 4)))
    big = ~small
    if np.any(big):
        out[big] = 1.0 - _cos_mean(d, u[big])
    return out if out.ndim else float(out)


@functools.lru_cache(maxsize=64)
def _sphere_mean_rule(d: int, n: int):
    """Nodes/weights for averaging F(|x + s theta|) over the sphere.

    Returns (u_i, w_i) with sum w_i = 1 so that the mean is
    sum_i w_i F(sqrt(x^2 + s^2 + 2 x s u_i)).
    """
    if d == 1:
        return np.array([-1.0, 1.0]), np.array([0.5, 0.5])
    if d == 2:
        x, w = roots_chebyt(n)
    elif d == 3:
        x, w = np.polynomial.legendre.leggauss(n)
    else:
        x, w = roots_gegenbauer(n, (d - 2) / 2.0)
    w = w / np.sum(w)
    return x, w


def _sphere_mean(f_value, d: int, x: float, s, n: int = 48):
    """Mean of the radial function over the sphere of radius s around |x|."""
    s = np.asarray(s, dtype=float)
    if x == 0.0:
        return f_value(s)
    u, w = _sphere_mean_rule(d, n)
    arg = np.sqrt(np.maximum(x * x + s[..., None] ** 2
                             + 2.0 * x * s[..., None] * u, 0.0))
    return np.sum(w * f_value(arg), axis=-1)


@functools.lru_cache(maxsize=32)
def _bessel_zeros(d: int, n: int):
    """First n positive zeros of J_{d/2-1}."""
    order = d / 2.0 - 1.0
    if order == 0.5:
        return np.pi * np.arange(1, n + 1)
    import mpmath
    return np.array([float(mpmath.besseljzero(order, k)) for k in range(1, n + 1)])


# ---------------------------------------------------------------------------
# characteristic exponent

def psi(spec: ProcessSpec, rho: float, cfg: QuadratureConfig = DEFAULT_QUAD,
        max_panels: int = 400) -> float:
    """Characteristic exponent Psi(rho) of the process.

    Psi(rho) = sigma2 rho^2 + omega int_0^inf s^{d-1} nu(s) (1 - j_d(rho s)) ds.
    The oscillatory part of the integrand is summed between consecutive
    Bessel zeros with series acceleration.
    """
    _check_radius(rho)
    gauss = spec.sigma2 * rho * rho
    nu = spec.nu
    if nu.is_zero:
        return gauss
    d = spec.d
    omega = sphere_area(d)
    support = nu.support_radius

    zeros = _bessel_zeros(d, max_panels + 4)
    u0 = zeros[2]
    s0 = min(u0 / rho, support)

    def smooth(s):
        return s ** (d - 1) * float(nu(s)) * float(_one_minus_cos_mean(d, rho * s))

    knees = [k for k in (_SMALL_ARG / rho, 1.0 / rho, support) + nu.knee_radii
             if 0 < k < s0]
    val, err = integrate_zero_to(smooth, s0, cfg, knees=sorted(set(knees)))
    total = gauss + omega * val

    if s0 >= support:
        return total

    # remaining range: full tail mass minus the oscillatory correction
    def tail_mass(s):
        return s ** (d - 1) * float(nu(s))

    upper = support if math.isfinite(support) else math.inf
    vt, et = integrate_tail(tail_mass, s0, cfg, knees=[k for k in (1.0,) if k > s0],
                            upper=upper)
    total += omega * vt

    corr = _osc_tail_correction(spec, rho, s0, abs(total), cfg, max_panels, zeros)
    result = total - omega * corr
    if not math.isfinite(result):
        raise NonConvergentQuadrature(f"Psi({rho}) evaluated to {result}")
    return result


def _osc_tail_correction(spec, rho, s0, total_scale, cfg, max_panels, zeros):
    """int_{s0}^{support} s^{d-1} nu(s) j_d(rho s) ds.

    In d = 1 and d = 3 the kernel reduces to a pure trigonometric weight, so
    QUADPACK's oscillatory integrators apply; otherwise panels between
    Bessel zeros are summed with series acceleration.
    """
    d = spec.d
    nu = spec.nu
    support = nu.support_radius
    eps_abs = cfg.abs_tol + 0.1 * cfg.rel_tol * total_scale

    if d in (1, 3):
        if d == 3:
            def base(s):
                with np.errstate(over="ignore", divide="ignore", under="ignore"):
                    v = s * float(nu(s)) / rho
                return v if math.isfinite(v) else 0.0
            weight = "sin"
        else:
            def base(s):
                with np.errstate(over="ignore", divide="ignore", under="ignore"):
                    v = float(nu(s))
                return v if math.isfinite(v) else 0.0
            weight = "cos"
        with quiet_quad():
            if math.isfinite(support):
                v, _ = integrate.quad(base, s0, support, weight=weight, wvar=rho,
                                      epsabs=eps_abs, epsrel=1e-9,
                                      limit=max(cfg.max_subdivisions, 500))
            else:
                v, _ = integrate.quad(base, s0, np.inf, weight=weight, wvar=rho,
                                      epsabs=eps_abs, limlst=80,
                                      limit=max(cfg.max_subdivisions, 500))
        return v

    def osc(s):
        return s ** (d - 1) * float(nu(s)) * float(_cos_mean(d, rho * s))

    if math.isfinite(support):
        panels = []
        prev = s0
        with quiet_quad():
            for k in range(3, max_panels + 4):
                edge = min(zeros[k] / rho, support)
                v, _ = integrate.quad(osc, prev, edge, epsabs=cfg.abs_tol,
                                      epsrel=1e-9, limit=cfg.max_subdivisions)
                panels.append(v)
                prev = edge
                if edge >= support:
                    break
        return math.fsum(panels)

    def panel(k):
        with quiet_quad():
            v, _ = integrate.quad(osc, zeros[k + 2] / rho, zeros[k + 3] / rho,
                                  epsabs=cfg.abs_tol, epsrel=1e-9,
                                  limit=cfg.max_subdivisions)
        return v

    corr, _ = euler_sum_adaptive(panel, max_panels, cfg, scale=total_scale)
    return corr


class _PsiTable:
    """Log-log spline of the jump part of Psi plus the exact Gaussian term.

    For power-law families the log-log graph is a straight line, so the
    interpolation is exact up to quadrature noise; in general the node
    density keeps the error far below the Fourier-inversion tolerance.
    """

    def __init__(self, spec: ProcessSpec, rho_lo: float, rho_hi: float,
                 cfg: QuadratureConfig, per_decade: int = 16):
        self.spec = spec
        self.cfg = cfg
        self.pure_gauss = spec.nu.is_zero
        if self.pure_gauss:
            return
        n = max(8, int(per_decade * math.log10(rho_hi / rho_lo)) + 1)
        lr = np.linspace(math.log(rho_lo), math.log(rho_hi), n)
        base = ProcessSpec(d=spec.d, sigma2=0.0, nu=spec.nu,
                           family=spec.family, params=spec.params)
        vals = np.array([psi(base, math.exp(t), cfg) for t in lr])
        if np.any(vals <= 0):
            raise NonConvergentQuadrature("non-positive exponent values in table")
        from scipy.interpolate import CubicSpline
        self._lo, self._hi = lr[0], lr[-1]
        self._spl = CubicSpline(lr, np.log(vals))
        self._slope_lo = (self._spl(self._lo + 1e-3) - self._spl(self._lo)) / 1e-3
        self._slope_hi = (self._spl(self._hi) - self._spl(self._hi - 1e-3)) / 1e-3

    def __call__(self, rho):
        rho = np.asarray(rho, dtype=float)
        gauss = self.spec.sigma2 * rho * rho
        if self.pure_gauss:
            return gauss
        t = np.log(np.maximum(rho, 1e-300))
        t_cl = np.clip(t, self._lo, self._hi)
        lv = self._spl(t_cl)
        lv = lv + np.where(t < self._lo, (t - self._lo) * self._slope_lo, 0.0)
        lv = lv + np.where(t > self._hi, (t - self._hi) * self._slope_hi, 0.0)
        return gauss + np.exp(lv)


@functools.lru_cache(maxsize=64)
def _psi_table(spec: ProcessSpec, lo_exp: int, hi_exp: int,
               cfg: QuadratureConfig) -> _PsiTable:
    return _PsiTable(spec, 10.0 ** lo_exp, 10.0 ** hi_exp, cfg)


def potential_kernel_fourier(spec: ProcessSpec, x_norm: float,
                             cfg: QuadratureConfig = DEFAULT_QUAD,
                             max_panels: int = 200):
    """Potential kernel U(|x|) by radial Fourier inversion.

    U(|x|) = (2 pi)^{-d/2} |x|^{1-d/2} int_0^inf J_{d/2-1}(rho |x|)
             rho^{d/2} / Psi(rho) d rho,
    summed between Bessel zeros with acceleration of the alternating tail.
    Returns (value, error_indicator).
    """
    _check_radius(x_norm)
    d = spec.d
    if d < 3:
        raise TransienceNotGuaranteed(f"potential kernel requires d >= 3, got d={d}")
    x = float(x_norm)
    zeros = _bessel_zeros(d, max_panels + 4)
    lo_exp = min(-7, int(math.floor(math.log10(1e-3 / x))))
    hi_exp = max(5, int(math.ceil(math.log10(zeros[-1] / x * 1.5))))
    table = _psi_table(spec, lo_exp, hi_exp, cfg)
    order = d / 2.0 - 1.0

    def integrand(rho):
        if rho <= 0:
            return 0.0
        ps = float(table(rho))
        if ps <= 0:
            return 0.0
        return jv(order, rho * x) * rho ** (d / 2.0) / ps

    with quiet_quad():
        first, e1 = integrate.quad(integrand, 0.0, zeros[0] / x,
                                   epsabs=cfg.abs_tol, epsrel=1e-10,
                                   limit=cfg.max_subdivisions)

    perr = [0.0]

    def panel(k):
        with quiet_quad():
            v, e = integrate.quad(integrand, zeros[k] / x, zeros[k + 1] / x,
                                  epsabs=cfg.abs_tol, epsrel=1e-10,
                                  limit=cfg.max_subdivisions)
        perr[0] = max(perr[0], e)
        return v

    tail, terr = euler_sum_adaptive(panel, max_panels, cfg, min_panels=32,
                                    scale=abs(first))
    pref = (2.0 * math.pi) ** (-d / 2.0) * x ** (1.0 - d / 2.0)
    val = pref * (first + tail)
    err = pref * (e1 + perr[0] + terr)
    if not math.isfinite(val):
        raise NonConvergentQuadrature(f"U({x}) evaluated to {val}")
    return val, err


def potential_ball_integral(spec: ProcessSpec, r: float,
                            cfg: QuadratureConfig = DEFAULT_QUAD,
                            nodes: int = 20) -> float:
    """int_{B_r} U(z) dz by log-Gauss quadrature over the radius.

    Used for bounded-ratio checks against 1 / (K + L); the tiny mass below
    radius 1e-5 r is dropped, which is far inside those checks' slack.
    """
    _check_radius(r)
    lo, hi = math.log(1e-5 * r), math.log(r)
    xg, wg = np.polynomial.legendre.leggauss(nodes)
    ts = 0.5 * (hi - lo) * (xg + 1.0) + lo
    ws = 0.5 * (hi - lo) * wg
    total = 0.0
    for t, w in zip(ts, ws):
        s = math.exp(t)
        u, _ = potential_kernel_fourier(spec, s, cfg)
        total += w * s ** spec.d * u
    return sphere_area(spec.d) * total


# ---------------------------------------------------------------------------
# generator

def generator_apply(spec: ProcessSpec, f: RadialC2, x_norm: float,
                    cfg: QuadratureConfig = DEFAULT_QUAD,
                    eps: float | None = None, mean_nodes: int = 48):
    """Apply the generator to a radial C^2 test function at |x| = x_norm.

    The jump integral is split at radius eps: inside, a second-order Taylor
    surrogate (the compensator vanishes by symmetry); outside, spherical
    shells against the sphere mean of f.  Returns (value, error_indicator)
    where the indicator combines quadrature errors and the Taylor remainder
    estimate.
    """
    if x_norm < 0:
        raise DomainError("x_norm must be non-negative")
    d = spec.d
    x = float(x_norm)
    lap = float(f.laplacian(x, d))
    total = spec.sigma2 * lap
    nu = spec.nu
    if nu.is_zero:
        return total, 0.0
    omega = sphere_area(d)

    if eps is None:
        eps = min(1.0, f.inner_scale) / 64.0
    eps = min(eps, nu.support_radius)

    # second moment of jumps below eps (scaled variable keeps range safe)
    def small_i(t):
        return t ** (d + 1) * float(nu(eps * t))

    m2, m2_err = integrate_zero_to(small_i, 1.0, cfg)
    m2 *= omega * eps ** d * eps * eps
    total += lap / (2.0 * d) * m2

    # Taylor remainder: modulus of the Laplacian over the eps-ball
    probes = [max(x - eps, 0.0), x, x + eps]
    lap_vals = [float(f.laplacian(p, d)) for p in probes]
    rem = (max(lap_vals) - min(lap_vals)) / (2.0 * d) * m2

    fx = float(f.value(x))
    features = list(getattr(f, "feature_radii", ())) or \
        [f.inner_scale, 2.0 * f.inner_scale]
    knees = set(nu.knee_radii)
    for rho in features:
        knees.add(abs(x - rho))
        knees.add(x + rho)
    if math.isfinite(nu.support_radius):
        knees.add(nu.support_radius)
    knees = sorted(k for k in knees if k > eps)

    def outer(s):
        m = float(_sphere_mean(f.value, d, x, np.asarray([s]), mean_nodes)[0])
        return s ** (d - 1) * float(nu(s)) * (m - fx)

    upper = nu.support_radius if math.isfinite(nu.support_radius) else math.inf
    val, qerr = integrate_tail(outer, eps, cfg, knees=knees, upper=upper)
    total += omega * val
    return total, abs(rem) + omega * qerr + m2_err
