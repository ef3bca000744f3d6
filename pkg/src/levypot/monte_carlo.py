"""Path simulation and statistical estimators.

Scheme.  Jumps with radius above a cutoff are simulated as a compound
Poisson stream (rate L(eps), radius by inverse transform of the radial
tail, direction uniform); jumps below the cutoff are replaced by an
isotropic Gaussian matching their variance; a non-zero Gaussian component
adds 2*sigma2*dt per coordinate (generator convention sigma2 * Laplacian).
Finite-activity jump parts are simulated exactly, event by event, with no
cutoff.  Diffusive boundary crossings inside a step are resolved with a
flat-boundary bridge correction.

Determinism.  Every estimator splits its paths into fixed-size batches;
batch b of a run with seed s draws from a counter-based generator keyed by
(s, stream, b), and batch results are reduced in index order.  Results are
therefore bit-identical for any thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from ._quad import DEFAULT_QUAD
from .errors import CutoffTooSmall, DomainError
from .process_model import ProcessSpec, ball_volume, sphere_area
from .radial_calculus import kl_sum, pruitt_K, pruitt_L

__all__ = [
    "SimScheme", "Estimate", "GreenBallResult", "ExitLawResult",
    "sample_path_step", "big_jump_rate", "jump_radius_quantile",
    "exit_time_ball", "hit_ball_prob", "green_ball", "poisson_kernel_ball",
    "harmonic_eval", "green_halfspace",
    "BallDomain", "BallComplement", "HalfSpace", "CustomDomain",
    "exsup_f0", "exsup_annulus_integral",
]

_MASK48 = (1 << 48) - 1
_BATCH = 16384


@dataclass(frozen=True)
class SimScheme:
    """Discretisation parameters for one simulation run."""

    epsilon: float
    dt: float
    horizon: float
    outer_kill_radius: float = math.inf
    bridge_correction: bool = True
    adaptive: bool = True  # far-field runs may coarsen the cutoff with distance
    batch_size: int = _BATCH

    def __post_init__(self):
        if self.dt <= 0 or self.horizon <= 0:
            raise DomainError("dt and horizon must be positive")
        if self.epsilon < 0:
            raise DomainError("epsilon must be non-negative")

    @classmethod
    def auto(cls, spec: ProcessSpec, scale: float, eps_frac: float = 0.01,
             dt_frac: float = 0.002, horizon_factor: float = 400.0,
             **overrides) -> "SimScheme":
        """Sensible defaults for geometry of linear size `scale`.

        The time step is a fraction of the natural exit-time scale
        1 / (K + L)(scale); the cutoff a fraction of `scale`.  Exact
        finite-activity simulation ignores epsilon.
        """
        t0 = 1.0 / kl_sum(spec, scale)
        base = dict(
            epsilon=eps_frac * scale,
            dt=dt_frac * t0,
            horizon=horizon_factor * t0,
            outer_kill_radius=math.inf,
        )
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo result with its statistical and scheme context."""

    mean: float
    stderr: float
    n: int
    seed: int
    scheme: SimScheme
    censored_fraction: float = 0.0
    bias_bound: float = 0.0
    flags: tuple = ()


@dataclass(frozen=True)
class GreenBallResult:
    """Radial occupation-density histogram around the pole."""

    bin_edges: np.ndarray
    density: np.ndarray
    stderr: np.ndarray
    exit_time: Estimate
    atom_mass: float = 0.0  # finite-activity holding time at the start point
    atom_stderr: float = 0.0


@dataclass(frozen=True)
class ExitLawResult:
    """Exit-position density per annulus plus singular boundary mass."""

    annuli: np.ndarray
    density: np.ndarray
    stderr: np.ndarray
    boundary_mass: float
    boundary_stderr: float
    beyond_mass: float
    n: int
    seed: int
    scheme: SimScheme


# ---------------------------------------------------------------------------
# RNG and batching

def _rng_for(seed: int, stream: int, batch: int) -> np.random.Generator:
    key = np.array([seed & np.iinfo(np.uint64).max,
                    ((stream & 0xFFFF) << 48) | (batch & _MASK48)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _batches(n: int, batch_size: int):
    out = []
    idx = 0
    while n > 0:
        bn = min(batch_size, n)
        out.append((idx, bn))
        n -= bn
        idx += 1
    return out


def _run_batches(n: int, seed: int, stream: int, worker: Callable,
                 threads: int, batch_size: int):
    """Run worker(batch_index, batch_n, rng) over a fixed partition.

    Results come back in batch-index order regardless of thread count.
    """
    parts = _batches(n, batch_size)

    def call(p):
        idx, bn = p
        return worker(idx, bn, _rng_for(seed, stream, idx))

    if threads <= 1:
        return [call(p) for p in parts]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(call, parts))


def _estimate_from_moments(parts, seed, scheme, extra_flags=()):
    """parts: list of (sum, sumsq, n, censored) reduced in index order."""
    total = sum(p[0] for p in parts)
    total_sq = sum(p[1] for p in parts)
    n = sum(p[2] for p in parts)
    cens = sum(p[3] for p in parts)
    mean = total / n
    var = max(total_sq - total * total / n, 0.0) / max(n - 1, 1)
    flags = tuple(extra_flags)
    frac = cens / n
    if frac > 1e-3:
        flags += ("censored_fraction_above_1e-3",)
    return Estimate(mean=mean, stderr=math.sqrt(var / n), n=n, seed=seed,
                    scheme=scheme, censored_fraction=frac, flags=flags)


# ---------------------------------------------------------------------------
# per-spec sampling tables

class _SpecSampler:
    """Cached tables: big-jump rate, radius quantile, small-jump variance."""

    def __init__(self, spec: ProcessSpec, s_lo: float, s_hi: float):
        self.spec = spec
        d = spec.d
        nu = spec.nu
        self.exact = spec.has_finite_activity
        self.total_mass = nu.total_mass
        support = nu.support_radius
        from scipy.interpolate import PchipInterpolator

        if self.exact:
            # radius CDF table: mass(s) = omega int_0^s u^{d-1} nu(u) du
            hi = support if math.isfinite(support) else s_hi
            grid = np.unique(np.concatenate([
                np.logspace(math.log10(hi) - 9, math.log10(hi), 400),
                np.asarray([k for k in nu.knee_radii if 0 < k <= hi]),
            ]))
            from ._quad import integrate_zero_to
            mass = np.array([
                sphere_area(d) * integrate_zero_to(
                    lambda t, b=b: t ** (d - 1) * float(nu(t)), b, DEFAULT_QUAD,
                    knees=[k for k in nu.knee_radii if k < b])[0]
                for b in grid])
            keep = mass > 0
            g, m = grid[keep], mass[keep]
            m = np.maximum.accumulate(m)
            uniq = np.concatenate([[True], np.diff(m) > 0])
            self._minv = PchipInterpolator(np.log(m[uniq]), np.log(g[uniq]))
            self._m_range = (m[uniq][0], m[uniq][-1])
            self.rate0 = self.total_mass
            self._mix = None
            if nu.family_tag in ("two_uniform_cp", "gauss_plus_uniform"):
                comps = [(1.0, 1.0), (nu.params["lam"], nu.params["R"])] \
                    if nu.family_tag == "two_uniform_cp" \
                    else [(nu.params["lam"], nu.params["R"])]
                w = np.array([c[0] for c in comps])
                self._mix = (np.cumsum(w) / np.sum(w),
                             np.array([c[1] for c in comps]))
        else:
            hi = min(s_hi, support)
            n_nodes = max(24, int(24 * math.log10(hi / s_lo)) + 1)
            grid = np.logspace(math.log10(s_lo), math.log10(hi), n_nodes)
            grid = np.unique(np.concatenate(
                [grid, [k for k in nu.knee_radii if s_lo < k < hi]]))
            L = np.array([pruitt_L(spec, float(s)) for s in grid])
            keep = L > 0
            g, Lv = grid[keep], L[keep]
            # strictly decreasing for the inverse
            Lv = np.minimum.accumulate(Lv)
            uniq = np.concatenate([[True], np.diff(Lv) < 0])
            self._linv = PchipInterpolator(np.log(Lv[uniq])[::-1],
                                           np.log(g[uniq])[::-1])
            self._l_range = (Lv[uniq][-1], Lv[uniq][0])
            self._ltab = PchipInterpolator(np.log(g[uniq]),
                                           np.log(Lv[uniq]))
            self._g_range = (g[uniq][0], g[uniq][-1])
            # small-jump variance rate per coordinate
            gauss_k = spec.sigma2 * d
            V = np.array([
                max(pruitt_K(spec, float(s)) - gauss_k / (s * s), 0.0)
                * s * s / d for s in grid])
            keepv = V > 0
            if np.any(keepv):
                self._vtab = PchipInterpolator(np.log(grid[keepv]),
                                               np.log(V[keepv]))
                self._v_range = (grid[keepv][0], grid[keepv][-1])
            else:
                self._vtab = None

    # -- infinite-activity interface
    def rate(self, eps):
        """Big-jump rate L(eps), vectorised, from the log-log table."""
        eps = np.asarray(eps, dtype=float)
        lo, hi = self._g_range
        out = np.zeros_like(eps)
        inside = eps < hi
        e = np.clip(eps, lo, hi)
        out[inside] = np.exp(self._ltab(np.log(e[inside])))
        return out if out.ndim else float(out)

    def smalljump_var_rate(self, eps):
        """Per-coordinate variance rate of jumps below eps."""
        if self._vtab is None:
            return np.zeros_like(np.asarray(eps, dtype=float))
        eps = np.asarray(eps, dtype=float)
        lo, hi = self._v_range
        return np.exp(self._vtab(np.log(np.clip(eps, lo, hi))))

    def radius_from_tail(self, w):
        """Radius s with L(s) = w (tail inverse transform)."""
        w = np.asarray(w, dtype=float)
        lo, hi = self._l_range
        return np.exp(self._linv(np.log(np.clip(w, lo, hi))))

    # -- exact finite-activity interface
    def exact_radius(self, u, rng=None):
        """Radius quantile of the normalised jump measure at u in (0,1)."""
        if self._mix is not None:
            cum, radii = self._mix
            u = np.asarray(u, dtype=float)
            comp = np.searchsorted(cum, u, side="left")
            comp = np.minimum(comp, len(radii) - 1)
            # rescale u within its component, then uniform-in-ball radius
            prev = np.where(comp > 0, cum[comp - 1], 0.0)
            ulocal = (u - prev) / (cum[comp] - prev)
            return radii[comp] * ulocal ** (1.0 / self.spec.d)
        m = np.clip(np.asarray(u, dtype=float) * self.total_mass,
                    self._m_range[0], self._m_range[1])
        return np.exp(self._minv(np.log(m)))


_SAMPLERS: dict = {}


def _sampler(spec: ProcessSpec, s_lo: float, s_hi: float) -> _SpecSampler:
    key = (id(spec), round(math.log10(s_lo), 6), round(math.log10(s_hi), 6))
    if key not in _SAMPLERS:
        _SAMPLERS[key] = _SpecSampler(spec, s_lo, s_hi)
    return _SAMPLERS[key]


def big_jump_rate(spec: ProcessSpec, eps: float) -> float:
    """Rate of jumps with radius above eps (equals the tail mass L(eps))."""
    if eps <= 0:
        if not spec.has_finite_activity:
            raise CutoffTooSmall("zero cutoff for an infinite-activity process")
        return spec.nu.total_mass
    return pruitt_L(spec, eps)


def jump_radius_quantile(spec: ProcessSpec, scheme: SimScheme, u) -> np.ndarray:
    """Quantile of the simulated jump-radius law.

    Exact processes: quantile of the normalised jump measure; truncated
    schemes: quantile of the radial tail beyond scheme.epsilon.
    """
    if spec.has_finite_activity:
        smp = _sampler(spec, 1e-6, 1e6)
        return smp.exact_radius(u)
    smp = _sampler(spec, scheme.epsilon / 4.0, _table_hi(spec, scheme))
    lam = big_jump_rate(spec, scheme.epsilon)
    return smp.radius_from_tail((1.0 - np.asarray(u, dtype=float)) * lam)


def _table_hi(spec, scheme):
    hi = scheme.outer_kill_radius if math.isfinite(scheme.outer_kill_radius) \
        else 1.0
    return max(1e4 * scheme.epsilon, 1e3 * hi, 1e3)


def _directions(rng, k: int, d: int) -> np.ndarray:
    v = rng.standard_normal((k, d))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return v / norms


def sample_path_step(spec: ProcessSpec, scheme: SimScheme,
                     rng: np.random.Generator, n: int = 1,
                     dt: float | None = None) -> np.ndarray:
    """Sample n independent increments of the process over one time step.

    Composition: Gaussian part (variance 2*sigma2*dt per coordinate), jumps
    above the cutoff (compound Poisson), small-jump Gaussian surrogate.
    Finite-activity processes get exact Poisson-count jumps and no surrogate.
    """
    d = spec.d
    if dt is None:
        dt = scheme.dt
    out = np.zeros((n, d))
    if spec.has_finite_activity:
        smp = _sampler(spec, 1e-6, 1e6)
        rate = spec.nu.total_mass
        var_rate = 2.0 * spec.sigma2
        eps_used = 0.0
    else:
        smp = _sampler(spec, scheme.epsilon / 4.0, _table_hi(spec, scheme))
        rate = big_jump_rate(spec, scheme.epsilon)
        if not math.isfinite(rate) or rate > 1e14:
            raise CutoffTooSmall(f"jump rate {rate} at cutoff {scheme.epsilon}")
        var_rate = 2.0 * spec.sigma2 + float(smp.smalljump_var_rate(scheme.epsilon))
        eps_used = scheme.epsilon
    if var_rate > 0:
        out += math.sqrt(var_rate * dt) * rng.standard_normal((n, d))
    counts = rng.poisson(rate * dt, n)
    k = int(counts.sum())
    if k:
        u = rng.random(k)
        if spec.has_finite_activity:
            radii = smp.exact_radius(u)
        else:
            radii = smp.radius_from_tail(u * rate)
        vecs = radii[:, None] * _directions(rng, k, d)
        idx = np.repeat(np.arange(n), counts)
        np.add.at(out, idx, vecs)
    return out


# ---------------------------------------------------------------------------
# domains

class BallDomain:
    """Open ball of radius r centred at the origin."""

    def __init__(self, r: float):
        self.r = float(r)

    def inside(self, pos):
        return np.linalg.norm(pos, axis=1) < self.r

    def boundary_gap(self, pos):
        return self.r - np.linalg.norm(pos, axis=1)


class BallComplement:
    """Complement of the closed ball of radius r."""

    def __init__(self, r: float):
        self.r = float(r)

    def inside(self, pos):
        return np.linalg.norm(pos, axis=1) > self.r

    def boundary_gap(self, pos):
        return np.linalg.norm(pos, axis=1) - self.r


class HalfSpace:
    """Upper half-space {x_d > 0}."""

    def inside(self, pos):
        return pos[:, -1] > 0.0

    def boundary_gap(self, pos):
        return pos[:, -1]


class CustomDomain:
    """Arbitrary indicator; no diffusive bridge correction is applied."""

    def __init__(self, indicator):
        self._ind = indicator

    def inside(self, pos):
        return np.asarray(self._ind(pos), dtype=bool)

    boundary_gap = None


# ---------------------------------------------------------------------------
# core engines

def _prep_x0(x0, d):
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 0:
        v = np.zeros(d)
        v[0] = float(x0)
        return v
    if x0.shape != (d,):
        raise DomainError(f"start point must be scalar or length-{d} vector")
    return x0


def _diffusive_exit_batch(spec, scheme, domain, x0, bn, rng, smp, rate,
                          var_rate, payoff=None, occupancy=None):
    """Step a batch until it leaves `domain`; infinite-activity or mixed specs.

    Per substep: diffuse, bridge-check the boundary, apply Poisson-count
    jumps, then test the domain indicator.  Returns per-path exit times,
    exit positions, censor flags, plus optional occupancy accumulators.
    """
    d = spec.d
    dt = scheme.dt
    pos = np.tile(x0, (bn, 1))
    t = np.zeros(bn)
    exit_t = np.zeros(bn)
    exit_pos = np.zeros((bn, d))
    exited_by_bridge = np.zeros(bn, dtype=bool)
    censored = np.zeros(bn, dtype=bool)
    alive_idx = np.arange(bn)
    use_bridge = (scheme.bridge_correction and var_rate > 0
                  and domain.boundary_gap is not None)
    occ = None
    if occupancy is not None:
        occ = np.zeros((bn, occupancy["nbins"]))
        edges = occupancy["edges"]
        center = occupancy["center"]

    sqv = math.sqrt(var_rate * dt) if var_rate > 0 else 0.0
    while alive_idx.size:
        m = alive_idx.size
        cur = pos[alive_idx]
        if sqv > 0:
            new = cur + sqv * rng.standard_normal((m, d))
        else:
            new = cur.copy()
        crossed = np.zeros(m, dtype=bool)
        if use_bridge:
            g_old = domain.boundary_gap(cur)
            g_new = domain.boundary_gap(new)
            still_in = g_new > 0
            p_cross = np.zeros(m)
            with np.errstate(over="ignore", under="ignore"):
                p_cross[still_in] = np.exp(
                    -2.0 * g_old[still_in] * np.maximum(g_new[still_in], 0.0)
                    / (var_rate * dt))
            crossed = rng.random(m) < p_cross
        if rate > 0:
            counts = rng.poisson(rate * dt, m)
            k = int(counts.sum())
            if k:
                u = rng.random(k)
                if smp.exact:
                    radii = smp.exact_radius(u)
                else:
                    radii = smp.radius_from_tail(u * rate)
                vecs = radii[:, None] * _directions(rng, k, d)
                idx = np.repeat(np.arange(m), counts)
                np.add.at(new, idx, vecs)

        if occ is not None:
            mid = 0.5 * (cur + new)
            rr = np.linalg.norm(mid - center, axis=1)
            bi = np.searchsorted(edges, rr, side="right") - 1
            ok = (bi >= 0) & (bi < occupancy["nbins"])
            w = np.where(crossed, 0.5 * dt, dt)
            rows = alive_idx[ok]
            np.add.at(occ, (rows, bi[ok]), w[ok])

        inside_new = domain.inside(new)
        out_now = crossed | ~inside_new
        tcur = t[alive_idx] + np.where(crossed, 0.5 * dt, dt)
        t[alive_idx] = tcur
        pos[alive_idx] = new
        if np.any(out_now):
            gone = alive_idx[out_now]
            exit_t[gone] = tcur[out_now]
            exit_pos[gone] = new[out_now]
            exited_by_bridge[gone] = crossed[out_now] & inside_new[out_now]
        over = (tcur >= scheme.horizon) & ~out_now
        if np.any(over):
            cens = alive_idx[over]
            censored[cens] = True
            exit_t[cens] = scheme.horizon
            exit_pos[cens] = new[over]
        alive = ~(out_now | over)
        alive_idx = alive_idx[alive]
    return exit_t, exit_pos, exited_by_bridge, censored, occ


def _cp_exit_batch(spec, scheme, domain, x0, bn, rng, smp,
                   occupancy=None, max_events: int = 1_000_000):
    """Exact event-driven batch for pure compound Poisson processes."""
    d = spec.d
    rate = spec.nu.total_mass
    pos = np.tile(x0, (bn, 1))
    t = np.zeros(bn)
    exit_t = np.zeros(bn)
    exit_pos = np.zeros((bn, d))
    censored = np.zeros(bn, dtype=bool)
    alive_idx = np.arange(bn)
    occ = None
    atom = np.zeros(bn)
    if occupancy is not None:
        occ = np.zeros((bn, occupancy["nbins"]))
        edges = occupancy["edges"]
        center = occupancy["center"]
    first_hold = np.ones(bn, dtype=bool)

    events = 0
    while alive_idx.size:
        events += 1
        if events > max_events:
            censored[alive_idx] = True
            exit_t[alive_idx] = t[alive_idx]
            exit_pos[alive_idx] = pos[alive_idx]
            break
        m = alive_idx.size
        holds = rng.exponential(1.0 / rate, m)
        tnew = t[alive_idx] + holds
        over = tnew >= scheme.horizon
        eff_hold = np.where(over, scheme.horizon - t[alive_idx], holds)
        if occ is not None:
            cur = pos[alive_idx]
            fh = first_hold[alive_idx]
            atom[alive_idx[fh]] += eff_hold[fh]
            if np.any(~fh):
                rr = np.linalg.norm(cur[~fh] - center, axis=1)
                bi = np.searchsorted(edges, rr, side="right") - 1
                ok = (bi >= 0) & (bi < occupancy["nbins"])
                rows = alive_idx[~fh][ok]
                np.add.at(occ, (rows, bi[ok]), eff_hold[~fh][ok])
        first_hold[alive_idx] = False

        u = rng.random(m)
        radii = smp.exact_radius(u)
        new = pos[alive_idx] + radii[:, None] * _directions(rng, m, d)
        t[alive_idx] = np.where(over, scheme.horizon, tnew)
        if np.any(over):
            cen = alive_idx[over]
            censored[cen] = True
            exit_t[cen] = scheme.horizon
            exit_pos[cen] = pos[cen]
        keep = ~over
        pos[alive_idx[keep]] = new[keep]
        inside = domain.inside(new[keep])
        out_now = ~inside
        if np.any(out_now):
            gone = alive_idx[keep][out_now]
            exit_t[gone] = tnew[keep][out_now]
            exit_pos[gone] = new[keep][out_now]
        alive_idx = alive_idx[keep][inside]
    bridge = np.zeros(bn, dtype=bool)
    return exit_t, exit_pos, bridge, censored, occ, atom


def _engine_setup(spec, scheme):
    """Choose exact vs truncated machinery and fetch the sampler tables."""
    if spec.has_finite_activity:
        smp = _sampler(spec, 1e-6, 1e6)
        rate = spec.nu.total_mass
        var_rate = 2.0 * spec.sigma2
    else:
        smp = _sampler(spec, scheme.epsilon / 4.0, _table_hi(spec, scheme))
        rate = big_jump_rate(spec, scheme.epsilon)
        if not math.isfinite(rate) or rate > 1e14:
            raise CutoffTooSmall(f"jump rate {rate} at cutoff {scheme.epsilon}")
        var_rate = 2.0 * spec.sigma2 \
            + float(smp.smalljump_var_rate(scheme.epsilon))
    return smp, rate, var_rate


def _is_pure_cp(spec):
    return spec.is_compound_poisson


# ---------------------------------------------------------------------------
# public estimators

_STREAM_EXIT = 1
_STREAM_HIT = 2
_STREAM_GREEN = 3
_STREAM_PK = 4
_STREAM_HARMONIC = 5
_STREAM_HALFSPACE = 6
_STREAM_STEP = 7
_STREAM_EXSUP = 8


def exit_time_ball(spec: ProcessSpec, scheme: SimScheme, r: float, x0,
                   n: int, seed: int = 0, threads: int = 1) -> Estimate:
    """Mean time to leave the ball of radius r from x0 (|x0| < r)."""
    x0 = _prep_x0(x0, spec.d)
    if np.linalg.norm(x0) >= r:
        raise DomainError("start point must lie inside the ball")
    domain = BallDomain(r)

    if _is_pure_cp(spec):
        smp = _sampler(spec, 1e-6, 1e6)

        def worker(idx, bn, rng):
            et, _, _, cens, _, _ = _cp_exit_batch(spec, scheme, domain, x0,
                                                  bn, rng, smp)
            return float(np.sum(et)), float(np.sum(et * et)), bn, int(cens.sum())
    else:
        smp, rate, var_rate = _engine_setup(spec, scheme)

        def worker(idx, bn, rng):
            et, _, _, cens, _ = _diffusive_exit_batch(
                spec, scheme, domain, x0, bn, rng, smp, rate, var_rate)
            return float(np.sum(et)), float(np.sum(et * et)), bn, int(cens.sum())

    parts = _run_batches(n, seed, _STREAM_EXIT, worker, threads,
                         scheme.batch_size)
    return _estimate_from_moments(parts, seed, scheme)


def _far_field_batch(spec, scheme, r_target, x0, bn, rng, smp,
                     eps0, kill_radius, max_steps=400_000):
    """Adaptive walk until the target ball is hit or the path is killed.

    Far from both spheres the cutoff and time step grow with the free
    distance, keeping the work per path logarithmic in the travel range.
    """
    d = spec.d
    pos = np.tile(x0, (bn, 1))
    t = np.zeros(bn)
    hit = np.zeros(bn, dtype=bool)
    censored = np.zeros(bn, dtype=bool)
    alive_idx = np.arange(bn)
    sigma_part = 2.0 * spec.sigma2
    adaptive = scheme.adaptive and not smp.exact

    for _ in range(max_steps):
        if not alive_idx.size:
            break
        m = alive_idx.size
        cur = pos[alive_idx]
        rad = np.linalg.norm(cur, axis=1)
        gap_in = rad - r_target
        gap_out = kill_radius - rad
        near = np.minimum(gap_in, gap_out)
        near = np.maximum(near, 1e-3 * r_target)
        if adaptive:
            eps_i = np.maximum(eps0, near / 16.0)
        else:
            eps_i = np.full(m, eps0)
        if smp.exact:
            rate_i = np.full(m, spec.nu.total_mass)
            var_i = np.full(m, sigma_part)
        else:
            rate_i = smp.rate(eps_i)
            var_i = sigma_part + smp.smalljump_var_rate(eps_i)
        # time step: diffusion confined to a fraction of the free distance,
        # at most ~0.5 expected jumps per step
        with np.errstate(divide="ignore"):
            dt_g = np.where(var_i > 0, (near / 4.0) ** 2 / (var_i * d), np.inf)
            dt_j = np.where(rate_i > 0, 0.5 / rate_i, np.inf)
        dt_i = np.minimum(np.minimum(dt_g, dt_j), scheme.horizon - t[alive_idx])
        dt_i = np.maximum(dt_i, 1e-12)

        new = cur.copy()
        anyvar = np.any(var_i > 0)
        if anyvar:
            new = new + np.sqrt(var_i * dt_i)[:, None] * rng.standard_normal((m, d))
        crossed = np.zeros(m, dtype=bool)
        if scheme.bridge_correction and anyvar:
            g_old = gap_in
            g_new = np.linalg.norm(new, axis=1) - r_target
            still_out = g_new > 0
            p = np.zeros(m)
            with np.errstate(over="ignore", under="ignore", divide="ignore"):
                vdt = var_i * dt_i
                p[still_out] = np.exp(-2.0 * g_old[still_out]
                                      * g_new[still_out] / vdt[still_out])
            crossed = rng.random(m) < p
        counts = rng.poisson(rate_i * dt_i)
        k = int(counts.sum())
        if k:
            u = rng.random(k)
            if smp.exact:
                radii = smp.exact_radius(u)
            else:
                w = u * np.repeat(rate_i, counts)
                radii = smp.radius_from_tail(w)
            vecs = radii[:, None] * _directions(rng, k, d)
            idx = np.repeat(np.arange(m), counts)
            np.add.at(new, idx, vecs)

        t[alive_idx] = t[alive_idx] + dt_i
        pos[alive_idx] = new
        rad_new = np.linalg.norm(new, axis=1)
        hit_now = crossed | (rad_new <= r_target)
        killed = (~hit_now) & (rad_new >= kill_radius)
        over = (~hit_now) & (~killed) & (t[alive_idx] >= scheme.horizon)
        if np.any(hit_now):
            hit[alive_idx[hit_now]] = True
        if np.any(over):
            censored[alive_idx[over]] = True
        alive = ~(hit_now | killed | over)
        alive_idx = alive_idx[alive]
    else:
        censored[alive_idx] = True
    return hit, censored


def hit_ball_prob(spec: ProcessSpec, scheme: SimScheme, r: float, x,
                  n: int, seed: int = 0, threads: int = 1) -> Estimate:
    """Probability of ever hitting the closed ball of radius r from x.

    Paths are killed beyond scheme.outer_kill_radius (default 50 |x|); the
    reported bias bound is the hitting upper-bound expression evaluated at
    the kill radius (up to its dimensional constant), plus censoring.
    """
    x0 = _prep_x0(x, spec.d)
    xn = float(np.linalg.norm(x0))
    if xn <= r:
        raise DomainError("start point must lie outside the ball")
    kill = scheme.outer_kill_radius
    if not math.isfinite(kill):
        kill = 50.0 * xn
    smp, rate, var_rate = _engine_setup(spec, scheme)

    def worker(idx, bn, rng):
        hit, cens = _far_field_batch(spec, scheme, r, x0, bn, rng, smp,
                                     scheme.epsilon, kill)
        h = hit.astype(float)
        return float(h.sum()), float(h.sum()), bn, int(cens.sum())

    parts = _run_batches(n, seed, _STREAM_HIT, worker, threads,
                         scheme.batch_size)
    est = _estimate_from_moments(parts, seed, scheme)
    from .bound_engine import ret_bounds
    try:
        _, ub = ret_bounds(spec, r, kill)
        bias = min(ub, 1.0)
    except Exception:
        bias = math.nan
    return replace(est, bias_bound=bias)


def _default_green_edges(r, x_norm, nbins):
    hi = r + x_norm
    return np.concatenate([[0.0], np.logspace(math.log10(hi) - 2.5,
                                              math.log10(hi), nbins)])


def green_ball(spec: ProcessSpec, scheme: SimScheme, r: float, x, n: int,
               seed: int = 0, threads: int = 1,
               bin_edges: np.ndarray | None = None,
               nbins: int = 32) -> GreenBallResult:
    """Occupation density of the ball B_r, radial shells around the pole x.

    Bin values estimate the shell average of the occupation density of the
    process killed on leaving B_r; their sum against shell volumes equals
    the mean exit time.  For compound Poisson specs the holding time at the
    start point is returned separately as an atom.
    """
    x0 = _prep_x0(x, spec.d)
    xn = float(np.linalg.norm(x0))
    if xn >= r:
        raise DomainError("pole must lie inside the ball")
    if bin_edges is None:
        bin_edges = _default_green_edges(r, xn, nbins)
    edges = np.asarray(bin_edges, dtype=float)
    nb = len(edges) - 1
    domain = BallDomain(r)
    occd = {"nbins": nb, "edges": edges, "center": x0}

    if _is_pure_cp(spec):
        smp = _sampler(spec, 1e-6, 1e6)

        def worker(idx, bn, rng):
            et, _, _, cens, occ, atom = _cp_exit_batch(
                spec, scheme, domain, x0, bn, rng, smp, occupancy=occd)
            return (occ.sum(axis=0), (occ * occ).sum(axis=0),
                    float(np.sum(et)), float(np.sum(et * et)),
                    bn, int(cens.sum()), float(atom.sum()),
                    float(np.sum(atom * atom)))
    else:
        smp, rate, var_rate = _engine_setup(spec, scheme)

        def worker(idx, bn, rng):
            et, _, _, cens, occ = _diffusive_exit_batch(
                spec, scheme, domain, x0, bn, rng, smp, rate, var_rate,
                occupancy=occd)
            return (occ.sum(axis=0), (occ * occ).sum(axis=0),
                    float(np.sum(et)), float(np.sum(et * et)),
                    bn, int(cens.sum()), 0.0, 0.0)

    parts = _run_batches(n, seed, _STREAM_GREEN, worker, threads,
                         scheme.batch_size)
    occ_sum = sum(p[0] for p in parts)
    occ_sq = sum(p[1] for p in parts)
    et_parts = [(p[2], p[3], p[4], p[5]) for p in parts]
    exit_est = _estimate_from_moments(et_parts, seed, scheme)
    ntot = sum(p[4] for p in parts)
    atom_sum = sum(p[6] for p in parts)
    atom_sq = sum(p[7] for p in parts)

    d = spec.d
    shell_vol = ball_volume(d, 1.0) * (edges[1:] ** d - edges[:-1] ** d)
    mean_occ = occ_sum / ntot
    var_occ = np.maximum(occ_sq - occ_sum ** 2 / ntot, 0.0) / max(ntot - 1, 1)
    density = mean_occ / shell_vol
    stderr = np.sqrt(var_occ / ntot) / shell_vol
    atom_mean = atom_sum / ntot
    atom_var = max(atom_sq - atom_sum ** 2 / ntot, 0.0) / max(ntot - 1, 1)
    return GreenBallResult(bin_edges=edges, density=density, stderr=stderr,
                           exit_time=exit_est, atom_mass=atom_mean,
                           atom_stderr=math.sqrt(atom_var / ntot))


def poisson_kernel_ball(spec: ProcessSpec, scheme: SimScheme, r: float,
                        n: int, seed: int = 0, threads: int = 1,
                        annuli: np.ndarray | None = None,
                        nbins: int = 32, x0=None) -> ExitLawResult:
    """Exit-position law from the ball B_r started at x0 (default centre).

    Densities per annulus outside the ball; exits landing on the boundary
    (diffusive crossings) are reported as singular mass.
    """
    x0 = _prep_x0(0.0 if x0 is None else x0, spec.d)
    if annuli is None:
        annuli = np.concatenate([[r], r * np.logspace(0.02, 2.5, nbins)])
    edges = np.asarray(annuli, dtype=float)
    nb = len(edges) - 1
    domain = BallDomain(r)

    if _is_pure_cp(spec):
        smp = _sampler(spec, 1e-6, 1e6)

        def runner(bn, rng):
            return _cp_exit_batch(spec, scheme, domain, x0, bn, rng, smp)[:4]
    else:
        smp, rate, var_rate = _engine_setup(spec, scheme)

        def runner(bn, rng):
            return _diffusive_exit_batch(spec, scheme, domain, x0, bn, rng,
                                         smp, rate, var_rate)[:4]

    def worker(idx, bn, rng):
        _, epos, bridge, cens = runner(bn, rng)
        rr = np.linalg.norm(epos, axis=1)
        landed = ~cens
        on_boundary = (bridge | (rr <= edges[0])) & landed
        outside = landed & ~on_boundary
        counts = np.histogram(rr[outside], bins=edges)[0].astype(float)
        beyond = float(np.sum(rr[outside] >= edges[-1]))
        return counts, float(on_boundary.sum()), beyond, bn, int(cens.sum())

    parts = _run_batches(n, seed, _STREAM_PK, worker, threads,
                         scheme.batch_size)
    counts = sum(p[0] for p in parts)
    nbound = sum(p[1] for p in parts)
    nbeyond = sum(p[2] for p in parts)
    ntot = sum(p[3] for p in parts)

    d = spec.d
    vol = ball_volume(d, 1.0) * (edges[1:] ** d - edges[:-1] ** d)
    p = counts / ntot
    density = p / vol
    stderr = np.sqrt(np.maximum(p * (1 - p), 0.0) / ntot) / vol
    bm = nbound / ntot
    return ExitLawResult(annuli=edges, density=density, stderr=stderr,
                         boundary_mass=bm,
                         boundary_stderr=math.sqrt(max(bm * (1 - bm), 0.0) / ntot),
                         beyond_mass=nbeyond / ntot, n=ntot, seed=seed,
                         scheme=scheme)


def harmonic_eval(spec: ProcessSpec, scheme: SimScheme, domain, f,
                  x, n: int, seed: int = 0, threads: int = 1) -> Estimate:
    """Monte Carlo mean of f at the exit position from `domain`, started at x.

    f maps an (m, d) array of exit positions to m values; censored paths
    contribute zero and are counted in the censored fraction.
    """
    x0 = _prep_x0(x, spec.d)
    if not domain.inside(x0[None, :])[0]:
        raise DomainError("start point must lie inside the domain")

    if _is_pure_cp(spec):
        smp = _sampler(spec, 1e-6, 1e6)

        def runner(bn, rng):
            return _cp_exit_batch(spec, scheme, domain, x0, bn, rng, smp)[:4]
    else:
        smp, rate, var_rate = _engine_setup(spec, scheme)

        def runner(bn, rng):
            return _diffusive_exit_batch(spec, scheme, domain, x0, bn, rng,
                                         smp, rate, var_rate)[:4]

    def worker(idx, bn, rng):
        _, epos, _, cens = runner(bn, rng)
        vals = np.asarray(f(epos), dtype=float)
        vals = np.where(cens, 0.0, vals)
        return float(vals.sum()), float(np.sum(vals * vals)), bn, int(cens.sum())

    parts = _run_batches(n, seed, _STREAM_HARMONIC, worker, threads,
                         scheme.batch_size)
    return _estimate_from_moments(parts, seed, scheme)


def green_halfspace(spec: ProcessSpec, scheme: SimScheme, x, y, n: int,
                    seed: int = 0, threads: int = 1,
                    probe_radius: float | None = None,
                    lateral_box: float | None = None) -> Estimate:
    """Occupation density of the half-space {x_d > 0} near y, started at x.

    The estimate is the mean occupation time of the ball B(y, probe_radius)
    before leaving the half-space, divided by the probe volume.  Paths are
    truncated laterally at `lateral_box` from y (flagged).
    """
    d = spec.d
    x0 = _prep_x0(x, d)
    y0 = _prep_x0(y, d)
    if x0[-1] <= 0 or y0[-1] <= 0:
        raise DomainError("both points must lie in the upper half-space")
    r = float(np.linalg.norm(x0 - y0))
    if probe_radius is None:
        probe_radius = 0.1 * min(r, y0[-1])
    if lateral_box is None:
        lateral_box = 60.0 * max(r, x0[-1], y0[-1])
    smp, rate0, var0 = _engine_setup(spec, scheme)
    eps0 = scheme.epsilon
    pvol = ball_volume(d, probe_radius)
    adaptive = scheme.adaptive and not smp.exact
    sigma_part = 2.0 * spec.sigma2

    def worker(idx, bn, rng):
        pos = np.tile(x0, (bn, 1))
        t = np.zeros(bn)
        occ = np.zeros(bn)
        cens = np.zeros(bn, dtype=bool)
        boxed = 0
        alive_idx = np.arange(bn)
        for _ in range(400_000):
            if not alive_idx.size:
                break
            m = alive_idx.size
            cur = pos[alive_idx]
            gap = cur[:, -1]
            disty = np.linalg.norm(cur - y0, axis=1)
            near = np.maximum(np.minimum(gap, np.maximum(
                disty - probe_radius, probe_radius)), 1e-3 * probe_radius)
            if adaptive:
                eps_i = np.maximum(eps0, near / 16.0)
                rate_i = smp.rate(eps_i)
                var_i = sigma_part + smp.smalljump_var_rate(eps_i)
            else:
                eps_i = np.full(m, eps0)
                rate_i = np.full(m, rate0)
                var_i = np.full(m, var0)
            with np.errstate(divide="ignore"):
                dt_g = np.where(var_i > 0, (near / 4.0) ** 2 / (var_i * d),
                                np.inf)
                dt_j = np.where(rate_i > 0, 0.5 / rate_i, np.inf)
            dt_i = np.minimum(np.minimum(dt_g, dt_j),
                              scheme.horizon - t[alive_idx])
            dt_i = np.clip(dt_i, 1e-12, scheme.dt * 1e6)

            new = cur.copy()
            anyvar = np.any(var_i > 0)
            if anyvar:
                new = new + np.sqrt(var_i * dt_i)[:, None] \
                    * rng.standard_normal((m, d))
            crossed = np.zeros(m, dtype=bool)
            if scheme.bridge_correction and anyvar:
                g_new = new[:, -1]
                still = g_new > 0
                p = np.zeros(m)
                with np.errstate(over="ignore", under="ignore", divide="ignore"):
                    vdt = var_i * dt_i
                    p[still] = np.exp(-2.0 * gap[still] * g_new[still]
                                      / vdt[still])
                crossed = rng.random(m) < p
            counts = rng.poisson(rate_i * dt_i)
            k = int(counts.sum())
            if k:
                u = rng.random(k)
                if smp.exact:
                    radii = smp.exact_radius(u)
                else:
                    radii = smp.radius_from_tail(u * np.repeat(rate_i, counts))
                vecs = radii[:, None] * _directions(rng, k, d)
                np.add.at(new, np.repeat(np.arange(m), counts), vecs)

            mid = 0.5 * (cur + new)
            inball = np.linalg.norm(mid - y0, axis=1) < probe_radius
            occ[alive_idx] += np.where(inball,
                                       np.where(crossed, 0.5, 1.0) * dt_i, 0.0)

            t[alive_idx] = t[alive_idx] + dt_i
            pos[alive_idx] = new
            out_h = crossed | (new[:, -1] <= 0.0)
            lat = np.linalg.norm((new - y0)[:, :-1], axis=1) > lateral_box
            over = t[alive_idx] >= scheme.horizon
            boxed += int(np.sum(lat & ~out_h))
            cfin = (over | lat) & ~out_h
            if np.any(cfin):
                cens[alive_idx[cfin]] = True
            alive = ~(out_h | lat | over)
            alive_idx = alive_idx[alive]
        else:
            cens[alive_idx] = True
        g = occ / pvol
        return float(g.sum()), float(np.sum(g * g)), bn, int(cens.sum())

    parts = _run_batches(n, seed, _STREAM_HALFSPACE, worker, threads,
                         scheme.batch_size)
    est = _estimate_from_moments(parts, seed, scheme)
    if est.censored_fraction > 0:
        est = replace(est, flags=est.flags + ("halfspace_truncation",))
    return est


# ---------------------------------------------------------------------------
# counterexample estimators (compound Poisson, d = 3)

def exsup_f0(lam: float, R: float, n: int, seed: int = 0, d: int = 3,
             threads: int = 1, max_steps: int = 512):
    """P(exit of B_2 lands in B_3) from the origin, small-jump conditioning.

    The jump chain is the exact compound Poisson chain of the two-uniform
    process; conditioning on all pre-exit jumps being drawn from the unit
    ball gives the unbiased representation  f(0) = E[p^N] + remainder,
    where N is the exit step of the unit-jump walk, p = 1/(1+lam), and the
    remainder (large jumps landing within B_5) is bounded analytically and
    reported.  This resolves probabilities of order lam^-3 that plain
    averaging cannot reach.
    """
    p = 1.0 / (1.0 + lam)

    def worker(idx, bn, rng):
        pos = np.zeros((bn, d))
        out = np.zeros(bn)
        steps = np.zeros(bn)
        alive = np.arange(bn)
        for k in range(1, max_steps + 1):
            if not alive.size:
                break
            m = alive.size
            radii = rng.random(m) ** (1.0 / d)
            stepv = radii[:, None] * _directions(rng, m, d)
            pos[alive] += stepv
            rr = np.linalg.norm(pos[alive], axis=1)
            exited = rr > 2.0
            if np.any(exited):
                gone = alive[exited]
                out[gone] = p ** k
                steps[gone] = k
            alive = alive[~exited]
        return (float(out.sum()), float(np.sum(out * out)), bn, 0,
                float(steps.sum()))

    parts = _run_batches(n, seed, _STREAM_EXSUP, worker, threads, _BATCH)
    est = _estimate_from_moments([p[:4] for p in parts], seed,
                                 SimScheme(epsilon=0.0, dt=1.0, horizon=1.0))
    mean_steps = sum(p[4] for p in parts) / est.n
    # a large jump lands in B_5 (and can contribute) with chance (5/R)^d
    remainder = (mean_steps + 3.0) * (5.0 / R) ** d
    return replace(est, bias_bound=remainder)


def exsup_annulus_integral(lam: float, R: float, n: int, seed: int = 0,
                           d: int = 3, threads: int = 1,
                           horizon: float = 1e9) -> Estimate:
    """int_{B_2 \\ B_1} f(z) dz for f(z) = P^z(exit of B_2 lands in B_3).

    Start points are sampled uniformly from the annulus; the chain is the
    exact event-driven compound Poisson process.
    """
    from .process_model import make_family
    spec = make_family("two_uniform_cp", d=d, lam=lam, R=R)
    smp = _sampler(spec, 1e-6, 1e6)
    vol = ball_volume(d, 2.0) - ball_volume(d, 1.0)
    scheme = SimScheme(epsilon=0.0, dt=1.0, horizon=horizon)
    domain = BallDomain(2.0)

    def worker(idx, bn, rng):
        rad = (1.0 + rng.random(bn) * (2.0 ** d - 1.0)) ** (1.0 / d)
        x0s = rad[:, None] * _directions(rng, bn, d)
        # step all starts jointly: reuse the CP engine per start point
        pos = x0s.copy()
        t = np.zeros(bn)
        vals = np.zeros(bn)
        alive = np.arange(bn)
        for _ in range(100000):
            if not alive.size:
                break
            m = alive.size
            t[alive] += rng.exponential(1.0 / spec.nu.total_mass, m)
            radii = smp.exact_radius(rng.random(m))
            pos[alive] += radii[:, None] * _directions(rng, m, d)
            rr = np.linalg.norm(pos[alive], axis=1)
            exited = rr > 2.0
            if np.any(exited):
                gone = alive[exited]
                vals[gone] = (rr[exited] < 3.0).astype(float)
            alive = alive[~exited]
        w = vals * vol
        return float(w.sum()), float(np.sum(w * w)), bn, 0

    parts = _run_batches(n, seed, _STREAM_EXSUP + 16, worker, threads, _BATCH)
    return _estimate_from_moments(parts, seed, scheme)
