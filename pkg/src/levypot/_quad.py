"""Internal quadrature helpers for radial integrals.

All radial integrands here are functions of a single positive variable.
Singular endpoints at zero are handled with the substitution s = exp(u);
infinite tails with per-decade panels so that slowly decaying integrands
(logarithmic tails, knees far from the origin) do not defeat QUADPACK.
"""

from __future__ import annotations

import contextlib
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import NonConvergentQuadrature


@contextlib.contextmanager
def quiet_quad():
    """Silence QUADPACK roundoff chatter; error estimates are checked by hand."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        yield

# Smallest radius at which integrands are still evaluated; below it the
# integrand is treated as zero.  For any Levy-integrable profile, the mass
# carried below this scale is far under every tolerance used in the package.
_S_FLOOR = 1e-290


@dataclass(frozen=True)
class QuadratureConfig:
    """Tolerances for the deterministic integrators."""

    rel_tol: float = 1e-10
    abs_tol: float = 1e-14
    max_subdivisions: int = 200

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("quadrature tolerances must be positive")


DEFAULT_QUAD = QuadratureConfig()


def _guarded(fn):
    """Wrap an integrand so that NaN/inf evaluations collapse to zero.

    Overflow can only occur within astronomically small-radius regions whose
    total contribution is below the tolerance floor (see _S_FLOOR).
    """

    def wrapped(s: float) -> float:
        if s <= _S_FLOOR:
            return 0.0
        with np.errstate(over="ignore", divide="ignore", invalid="ignore",
                         under="ignore"):
            v = fn(s)
        if not math.isfinite(v):
            return 0.0
        return v

    return wrapped


def _quad(fn, a, b, cfg: QuadratureConfig, points=None):
    kwargs = {}
    if points:
        pts = sorted(p for p in points if a < p < b)
        if pts:
            kwargs["points"] = pts
    with quiet_quad():
        val, err = integrate.quad(
            fn, a, b,
            epsabs=0.0, epsrel=cfg.rel_tol,
            limit=cfg.max_subdivisions, **kwargs,
        )
    return val, err


def integrate_zero_to(fn, b, cfg: QuadratureConfig = DEFAULT_QUAD, knees=()):
    """Integrate fn over (0, b] with a log substitution near the origin.

    fn may be singular (but integrable) at zero.  `knees` lists interior
    radii where the integrand has kinks.
    """
    if b <= 0:
        return 0.0, 0.0
    g = _guarded(fn)
    # s = b * exp(u), u in (-inf, 0]
    def in_log(u):
        s = b * math.exp(u)
        return g(s) * s

    pts = [math.log(k / b) for k in knees if 0 < k < b]
    # QUADPACK cannot take interior points on an infinite interval; split.
    lo = min(pts) if pts else 0.0
    total, errs = 0.0, 0.0
    with quiet_quad():
        v, e = integrate.quad(in_log, -np.inf, lo, epsabs=0.0,
                              epsrel=cfg.rel_tol, limit=cfg.max_subdivisions)
    total += v
    errs += e
    if pts:
        v, e = _quad(in_log, lo, 0.0, cfg, points=pts)
        total += v
        errs += e
    return total, errs


def integrate_tail(fn, a, cfg: QuadratureConfig = DEFAULT_QUAD, knees=(),
                   upper=math.inf):
    """Integrate fn over [a, upper) where upper may be infinite.

    The tail is split at the knees and then into geometric panels; panels
    stop once their contribution falls below tolerance.  This copes with
    integrands whose decay starts only beyond a distant knee.
    """
    if upper <= a:
        return 0.0, 0.0
    g = _guarded(fn)
    cut = [a] + sorted(k for k in knees if a < k < upper)
    total, errs = 0.0, 0.0
    for lo, hi in zip(cut[:-1], cut[1:]):
        v, e = _quad(g, lo, hi, cfg)
        total += v
        errs += e
    lo = cut[-1]
    if math.isfinite(upper):
        v, e = _quad(g, lo, upper, cfg)
        return total + v, errs + e
    # geometric panels [lo*4^k, lo*4^(k+1))
    if lo <= 0:
        lo = _S_FLOOR
    panel_lo = lo
    stall = 0
    for _ in range(600):
        panel_hi = panel_lo * 4.0
        v, e = _quad(g, panel_lo, panel_hi, cfg)
        total += v
        errs += e
        scale = max(abs(total), cfg.abs_tol)
        if abs(v) < cfg.rel_tol * scale * 0.1 + cfg.abs_tol:
            stall += 1
            if stall >= 3:
                return total, errs
        else:
            stall = 0
        panel_lo = panel_hi
    raise NonConvergentQuadrature(
        f"tail integral from {a} did not settle within panel budget")


def integrate_radial(fn, a, b, cfg: QuadratureConfig = DEFAULT_QUAD, knees=()):
    """Integrate fn over (a, b) choosing substitutions as appropriate."""
    if b <= a:
        return 0.0, 0.0
    if a <= 0:
        if math.isfinite(b):
            return integrate_zero_to(fn, b, cfg, knees)
        mid = max([k for k in knees if k > 0], default=1.0)
        v1, e1 = integrate_zero_to(fn, mid, cfg, knees)
        v2, e2 = integrate_tail(fn, mid, cfg, knees)
        return v1 + v2, e1 + e2
    if math.isinf(b):
        return integrate_tail(fn, a, cfg, knees)
    return _quad(_guarded(fn), a, b, cfg, points=knees)


def euler_sum_adaptive(panel_fn, n_max: int, cfg: QuadratureConfig = DEFAULT_QUAD,
                       min_panels: int = 24, check_every: int = 8,
                       scale: float = 0.0):
    """Lazily sum oscillatory panels until the accelerated tail settles.

    panel_fn(k) returns the k-th panel integral.  `scale` is an external
    magnitude against which the relative tolerance is measured (useful when
    the alternating part is a small correction to a larger total).
    """
    terms = []
    best, best_err = 0.0, math.inf
    for k in range(n_max):
        terms.append(panel_fn(k))
        if len(terms) >= min_panels and (len(terms) - min_panels) % check_every == 0:
            val, err = euler_sum(terms, cfg)
            if err < best_err:
                best, best_err = val, err
            tol = cfg.abs_tol + cfg.rel_tol * max(abs(val), scale)
            if err <= tol:
                return val, err
    return best, best_err


def euler_sum(terms, cfg: QuadratureConfig = DEFAULT_QUAD):
    """Sum an (eventually) alternating series by iterated averaging.

    `terms` is a sequence of partial contributions I_k.  Returns the
    accelerated limit of the partial sums together with an error estimate.
    Handles slowly decaying and even mildly growing oscillatory terms
    (Abel-type regularisation).
    """
    t = np.asarray(terms, dtype=float)
    if t.size == 0:
        return 0.0, 0.0
    s = np.cumsum(t)
    prev = s[-1]
    # iterated pairwise averaging of the partial-sum sequence
    best = prev
    best_err = math.inf
    cur = s
    for _ in range(len(s) - 1):
        cur = 0.5 * (cur[1:] + cur[:-1])
        err = abs(cur[-1] - prev)
        prev = cur[-1]
        if err < best_err:
            best_err = err
            best = cur[-1]
        if err <= cfg.abs_tol + cfg.rel_tol * abs(cur[-1]):
            return cur[-1], err
    return best, best_err
