"""O-regular-variation machinery: Matuszewska index estimation on grids,
scaling-condition certification, Karamata-type integral comparisons, and the
index relations between the exponent, K, L and the jump density.

All claims produced here are grid-based: indices are extremal pair slopes of
log phi against log r, and every comparability statement is reported as an
observed ratio window on a finite grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._quad import DEFAULT_QUAD, QuadratureConfig, integrate_radial, integrate_tail
from .errors import DegenerateProfile, DivergentIntegral
from .process_model import ProcessSpec, RadialProfile

__all__ = [
    "IndexEstimate", "matuszewska_indices",
    "ScalingCertificate", "certify_scaling",
    "KaramataReport", "karamata_check",
    "IndexRelationsReport", "index_relations_report",
]


@dataclass(frozen=True)
class IndexEstimate:
    """Two-sided power-law envelope estimate at zero or at infinity.

    lower/upper are the extremal dyadic-pair slopes; -inf signals that the
    slopes diverge across decades (super-polynomial decay).  A, B are the
    envelope constants realised on the grid with exponents lower and upper,
    and R0 the grid edge on the regime side.
    """

    regime: str
    lower: float
    upper: float
    A: float
    B: float
    R0: float


def _as_callable(profile):
    if isinstance(profile, RadialProfile):
        return profile
    return profile


def matuszewska_indices(profile, regime: str, grid_decades: float = 6.0,
                        per_decade: int = 25, R0: float = 1.0,
                        diverge_tol: float = 1.0) -> IndexEstimate:
    """Estimate lower/upper indices of a positive profile at zero or infinity.

    Slopes log(phi(r2)/phi(r1)) / log(r2/r1) are collected over all grid
    pairs at least a factor 2 apart; the extremes estimate the indices.
    Divergence of the extremal slope with pair separation is reported as an
    infinite index rather than a number.
    """
    if regime not in ("zero", "infinity"):
        raise ValueError("regime must be 'zero' or 'infinity'")
    phi = _as_callable(profile)
    n = int(grid_decades * per_decade) + 1
    if regime == "infinity":
        grid = R0 * np.logspace(0.0, grid_decades, n)
    else:
        grid = R0 * np.logspace(-grid_decades, 0.0, n)
    with np.errstate(over="ignore", under="ignore", divide="ignore"):
        vals = np.asarray(phi(grid), dtype=float)

    # trim to the longest representable stretch on the R0 side (profiles with
    # super-exponential decay underflow before the far grid edge)
    good = np.isfinite(vals) & (vals > 0.0)
    if regime == "infinity":
        k = int(np.argmin(good)) if not good.all() else n
        grid, vals = grid[:k], vals[:k]
    else:
        k = n - 1 - int(np.argmin(good[::-1])) if not good.all() else -1
        grid, vals = grid[k + 1:], vals[k + 1:]
    if len(grid) < 2 or math.log10(grid[-1] / grid[0]) < 1.5:
        raise DegenerateProfile(
            f"profile not positive and finite over enough of the {regime} grid")

    # indices are asymptotic: estimate on the far half of the usable range
    lr_all = np.log(grid)
    span = lr_all[-1] - lr_all[0]
    if regime == "infinity":
        sel = lr_all >= lr_all[0] + span / 2.0
    else:
        sel = lr_all <= lr_all[-1] - span / 2.0
    lr = lr_all[sel]
    lv = np.log(vals[sel])
    m = len(lr)

    slopes, mids = [], []
    for i in range(m):
        for j in range(i + 1, m):
            sep = lr[j] - lr[i]
            if sep < math.log(2.0) - 1e-12:
                continue
            slopes.append((lv[j] - lv[i]) / sep)
            mids.append(0.5 * (lr[i] + lr[j]))
    if not slopes:
        raise DegenerateProfile("grid too short for pair slopes")
    slopes = np.asarray(slopes)
    mids = np.asarray(mids)
    lower = float(np.min(slopes))
    upper = float(np.max(slopes))

    # super-polynomial detection: extremal slopes keep drifting as the pairs
    # move toward the asymptotic side of the grid
    med = np.median(mids)
    asym = mids >= med if regime == "infinity" else mids <= med
    if np.any(asym) and np.any(~asym):
        if np.min(slopes[asym]) < np.min(slopes[~asym]) - diverge_tol:
            lower = -math.inf
        if np.max(slopes[asym]) > np.max(slopes[~asym]) + diverge_tol:
            upper = math.inf
        elif np.max(slopes[asym]) < np.max(slopes[~asym]) - diverge_tol:
            upper = -math.inf

    A = B = 1.0
    if math.isfinite(lower) and math.isfinite(upper):
        ratios_l, ratios_u = [], []
        step = max(1, m // 20)
        for i in range(0, m - 1, step):
            for j in range(i + 1, m, step):
                sep = lr[j] - lr[i]
                if sep <= 0:
                    continue
                ratios_l.append(math.exp((lv[j] - lv[i]) - lower * sep))
                ratios_u.append(math.exp((lv[j] - lv[i]) - upper * sep))
        A = min(ratios_l) if ratios_l else 1.0
        B = max(ratios_u) if ratios_u else 1.0
    R0_edge = float(math.exp(lr[0])) if regime == "infinity" \
        else float(math.exp(lr[-1]))
    return IndexEstimate(regime=regime, lower=float(lower), upper=float(upper),
                         A=float(A), B=float(B), R0=R0_edge)


@dataclass(frozen=True)
class ScalingCertificate:
    certified: bool
    worst_ratio: float
    worst_pair: tuple
    M: float
    alpha: float
    R_inf: float


def certify_scaling(profile: RadialProfile, M: float, alpha: float,
                    R_inf: float = math.inf, n_per_decade: int = 16,
                    r_min: float | None = None) -> ScalingCertificate:
    """Check nu(r1)/nu(r2) <= M (r1/r2)^(-d-alpha) on a two-parameter log grid.

    The grid spans (r_min, 2*R_inf); for fully supported profiles with
    R_inf = inf the default window is [1e-4, 1e4].  Returns the maximal
    violation ratio (<= 1 means certified) and its location.
    """
    if M <= 0:
        raise ValueError("M must be positive")
    d = profile.d
    hi = 2.0 * R_inf if math.isfinite(R_inf) else 1e4
    lo = r_min if r_min is not None else min(1e-4, hi * 1e-8)
    n = max(8, int(n_per_decade * math.log10(hi / lo)) + 1)
    grid = np.logspace(math.log10(lo), math.log10(hi), n)
    with np.errstate(over="ignore", under="ignore", divide="ignore"):
        vals = np.asarray(profile(grid), dtype=float)

    worst = 0.0
    pair = (math.nan, math.nan)
    for i in range(n):
        vi = vals[i]
        if not math.isfinite(vi) or vi <= 0.0:
            continue  # inequality holds trivially where nu(r1) = 0
        for j in range(i + 1, n):
            bound = M * (grid[i] / grid[j]) ** (-d - alpha)
            vj = vals[j]
            if vj <= 0.0 or not math.isfinite(vj):
                ratio = math.inf
            else:
                ratio = (vi / vj) / bound
            if ratio > worst:
                worst = ratio
                pair = (float(grid[i]), float(grid[j]))
            if ratio == math.inf:
                break
    return ScalingCertificate(certified=worst <= 1.0 + 1e-9, worst_ratio=worst,
                              worst_pair=pair, M=M, alpha=alpha, R_inf=R_inf)


@dataclass(frozen=True)
class KaramataReport:
    case: str
    s: float
    grid: np.ndarray
    ratios: np.ndarray
    ratio_min: float
    ratio_max: float
    bounded: bool


_KARAMATA_CASES = ("inf_upper", "inf_lower", "zero_lower", "zero_upper", "global")


def karamata_check(profile, s: float, case: str,
                   C_window: float | None = None, R: float = 1.0,
                   grid_decades: float = 3.0, points: int = 13,
                   cfg: QuadratureConfig = DEFAULT_QUAD) -> KaramataReport:
    """Compare a Karamata-type integral of phi against r^{-s} phi(r).

    Cases (phi positive, dt/t measure, all ratios against r^{-s} phi(r)):
      inf_upper:  int_r^inf t^{-s} phi(t) dt/t          (r > R)
      inf_lower:  int_R^r  t^{-s} phi(t) dt/t           (r >= 2R)
      zero_lower: int_0^r  t^{-s} phi(t) dt/t           (r < R)
      zero_upper: int_r^R  t^{-s} phi(t) dt/t           (r <= R/2)
      global:     int_0^r  t^{-s} phi(t) dt/t           (all r; s <= 0,
                  non-increasing phi)
    The report asserts only that the observed ratio window is finite (and
    inside C_window when one is supplied).
    """
    if case not in _KARAMATA_CASES:
        raise ValueError(f"case must be one of {_KARAMATA_CASES}")
    phi = _as_callable(profile)

    def f(t):
        return t ** (-s - 1.0) * float(phi(t))

    if case == "inf_upper":
        grid = R * np.logspace(0.1, grid_decades, points)
    elif case == "inf_lower":
        grid = R * np.logspace(math.log10(2.0), grid_decades, points)
    elif case == "zero_lower":
        grid = R * np.logspace(-grid_decades, -0.1, points)
    elif case == "zero_upper":
        grid = R * np.logspace(-grid_decades, -math.log10(2.0), points)
    else:
        grid = np.logspace(-grid_decades / 2.0, grid_decades / 2.0, points)

    ratios = np.empty(points)
    for idx, r in enumerate(grid):
        if case == "inf_upper":
            val, _ = integrate_tail(f, r, cfg)
        elif case == "inf_lower":
            val, _ = integrate_radial(f, R, r, cfg)
        elif case in ("zero_lower", "global"):
            val, _ = integrate_radial(f, 0.0, r, cfg)
        else:
            val, _ = integrate_radial(f, r, R, cfg)
        if not math.isfinite(val):
            raise DivergentIntegral(f"Karamata integral diverges at r={r}")
        denom = r ** (-s) * float(phi(r))
        ratios[idx] = val / denom
    rmin, rmax = float(np.min(ratios)), float(np.max(ratios))
    bounded = math.isfinite(rmax) and rmin > 0.0
    if C_window is not None:
        bounded = bounded and rmax <= C_window and rmin >= 1.0 / C_window
    return KaramataReport(case=case, s=s, grid=grid, ratios=ratios,
                          ratio_min=rmin, ratio_max=rmax, bounded=bounded)


@dataclass
class IndexRelationsReport:
    """Estimated indices of the exponent, K, L, nu plus implication checks."""

    psi_zero: IndexEstimate
    psi_inf: IndexEstimate
    K_inf: IndexEstimate
    L_inf: IndexEstimate
    K_zero: IndexEstimate
    L_zero: IndexEstimate
    nu_inf: IndexEstimate | None
    checks: dict = field(default_factory=dict)
    comparability: dict = field(default_factory=dict)


def index_relations_report(spec: ProcessSpec, tolerance: float = 0.1,
                           grid_decades: float = 3.0, per_decade: int = 8,
                           cfg: QuadratureConfig = DEFAULT_QUAD) -> IndexRelationsReport:
    """Estimate indices of Psi at zero/infinity and K, L at both regimes,
    then check the exponent/K/L/nu implications as inequalities within
    `tolerance`, and the comparability claims as bounded-ratio windows.
    """
    from .radial_calculus import kl_sum, pruitt_K, pruitt_L, psi

    def psi_fn(rho):
        rho = np.atleast_1d(np.asarray(rho, dtype=float))
        return np.array([psi(spec, float(p), cfg) for p in rho])

    def K_fn(r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        return np.array([pruitt_K(spec, float(t), cfg) for t in r])

    def L_fn(r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        return np.array([pruitt_L(spec, float(t), cfg) for t in r])

    kw = dict(grid_decades=grid_decades, per_decade=per_decade)
    psi_zero = matuszewska_indices(psi_fn, "zero", **kw)
    psi_inf = matuszewska_indices(psi_fn, "infinity", **kw)
    K_inf = matuszewska_indices(K_fn, "infinity", **kw)
    K_zero = matuszewska_indices(K_fn, "zero", **kw)
    try:
        L_inf = matuszewska_indices(L_fn, "infinity", **kw)
        L_zero = matuszewska_indices(L_fn, "zero", **kw)
    except DegenerateProfile:
        L_inf = L_zero = IndexEstimate("degenerate", math.nan, math.nan,
                                       math.nan, math.nan, math.nan)
    nu_inf = None
    if not spec.nu.is_zero and spec.nu.support_radius == math.inf:
        try:
            nu_inf = matuszewska_indices(spec.nu, "infinity", **kw)
        except DegenerateProfile:
            nu_inf = None

    checks = {}
    # upper index of the exponent at zero vs lower index of L at infinity
    if math.isfinite(psi_zero.upper) and math.isfinite(L_inf.lower):
        checks["a_psi0_upper_vs_L_inf_lower"] = \
            abs(psi_zero.upper + L_inf.lower) <= tolerance
    # lower index of the exponent at zero vs upper index of K at infinity
    if math.isfinite(psi_zero.lower) and math.isfinite(K_inf.upper):
        checks["b_psi0_lower_vs_K_inf_upper"] = \
            abs(psi_zero.lower + K_inf.upper) <= tolerance
    # upper index at infinity vs L at zero (pure-jump only)
    if spec.sigma2 == 0.0 and math.isfinite(psi_inf.upper) \
            and math.isfinite(L_zero.lower):
        checks["c_psiinf_upper_vs_L_zero_lower"] = \
            abs(psi_inf.upper + L_zero.lower) <= tolerance
    # lower index at infinity vs K at zero
    if math.isfinite(psi_inf.lower) and math.isfinite(K_zero.upper):
        checks["d_psiinf_lower_vs_K_zero_upper"] = \
            abs(psi_inf.lower + K_zero.upper) <= tolerance
    # one-sided implication: nu lower index -d-beta at infinity forces the
    # exponent's upper index at zero to be at most beta
    if nu_inf is not None and math.isfinite(nu_inf.lower) \
            and math.isfinite(psi_zero.upper):
        beta_from_nu = -nu_inf.lower - spec.d
        checks["nu_tail_controls_psi0_upper"] = \
            psi_zero.upper <= beta_from_nu + tolerance

    comparability = {}
    rs = np.logspace(0.2, grid_decades, 9)
    if not spec.nu.is_zero:
        lv = np.array([pruitt_L(spec, float(r), cfg) for r in rs])
        if np.all(lv > 0):
            tot = np.array([kl_sum(spec, float(r), cfg) for r in rs])
            pv = np.array([psi(spec, 1.0 / float(r), cfg) for r in rs])
            comparability["L_over_KL_window"] = (float(np.min(lv / tot)),
                                                 float(np.max(lv / tot)))
            comparability["psi_over_KL_window"] = (float(np.min(pv / tot)),
                                                   float(np.max(pv / tot)))
    return IndexRelationsReport(
        psi_zero=psi_zero, psi_inf=psi_inf, K_inf=K_inf, L_inf=L_inf,
        K_zero=K_zero, L_zero=L_zero, nu_inf=nu_inf,
        checks=checks, comparability=comparability)
