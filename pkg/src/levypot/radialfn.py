"""Smooth radial test functions with derivative evaluators.

These feed the generator: each object exposes the radial profile F and its
first two derivatives, from which gradient/Hessian data (and the Laplacian)
of f(x) = F(|x|) follow.  All profiles here are C^2 on [0, inf) with
F'(0) = 0, so f is C^2 across the origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .process_model import sphere_area

__all__ = ["RadialC2", "GaussianBump", "SmoothBump", "Mollifier",
           "MollifiedNewton"]


class RadialC2:
    """Base: radial profile with two derivatives and an inner length scale."""

    inner_scale: float = 1.0

    def value(self, t):
        raise NotImplementedError

    def d1(self, t):
        raise NotImplementedError

    def d2(self, t):
        raise NotImplementedError

    def laplacian(self, t, d: int):
        """Laplacian of F(|x|) at |x| = t in dimension d."""
        t = np.asarray(t, dtype=float)
        out = np.where(t > 0,
                       self.d2(np.maximum(t, 1e-300))
                       + (d - 1) * self.d1(np.maximum(t, 1e-300))
                       / np.maximum(t, 1e-300),
                       d * self.d2(t))
        return out if out.ndim else float(out)

    def __call__(self, t):
        return self.value(t)


@dataclass
class GaussianBump(RadialC2):
    """F(t) = exp(-(t/scale)^2)."""

    scale: float = 1.0

    def __post_init__(self):
        self.inner_scale = self.scale

    def value(self, t):
        u = np.asarray(t, dtype=float) / self.scale
        return np.exp(-u * u)

    def d1(self, t):
        u = np.asarray(t, dtype=float) / self.scale
        return -2.0 * u * np.exp(-u * u) / self.scale

    def d2(self, t):
        u = np.asarray(t, dtype=float) / self.scale
        return (4.0 * u * u - 2.0) * np.exp(-u * u) / self.scale ** 2


def _smoothstep(u):
    """Quintic step: 0 -> 1 on [0,1] with vanishing first two derivatives at ends."""
    u = np.clip(u, 0.0, 1.0)
    return u ** 3 * (10.0 - 15.0 * u + 6.0 * u * u)


def _smoothstep_d1(u):
    inside = (u > 0.0) & (u < 1.0)
    u = np.clip(u, 0.0, 1.0)
    return np.where(inside, 30.0 * u ** 2 * (1.0 - u) ** 2, 0.0)


def _smoothstep_d2(u):
    inside = (u > 0.0) & (u < 1.0)
    u = np.clip(u, 0.0, 1.0)
    return np.where(inside, 60.0 * u * (1.0 - u) * (1.0 - 2.0 * u), 0.0)


@dataclass
class SmoothBump(RadialC2):
    """C^2 bump: 1 on [0, r_inner], 0 beyond r_outer, quintic in between."""

    r_inner: float
    r_outer: float

    def __post_init__(self):
        if not (0 <= self.r_inner < self.r_outer):
            raise ValueError("need 0 <= r_inner < r_outer")
        self.width = self.r_outer - self.r_inner
        self.inner_scale = self.r_inner if self.r_inner > 0 else self.width

    def value(self, t):
        u = (np.asarray(t, dtype=float) - self.r_inner) / self.width
        return 1.0 - _smoothstep(u)

    def d1(self, t):
        u = (np.asarray(t, dtype=float) - self.r_inner) / self.width
        return -_smoothstep_d1(u) / self.width

    def d2(self, t):
        u = (np.asarray(t, dtype=float) - self.r_inner) / self.width
        return -_smoothstep_d2(u) / self.width ** 2

    def hessian_sup(self) -> float:
        """Upper bound on the max Hessian entry of the radial extension."""
        # |F''| <= 10*sqrt(3)/3 / w^2, |F'|/t <= 1.875/(w * r_inner) on the collar
        w = self.width
        b1 = 10.0 * math.sqrt(3.0) / 3.0 / w ** 2
        t_min = max(self.r_inner, 1e-300)
        return b1 + 1.875 / (w * t_min)


@dataclass
class Mollifier(RadialC2):
    """kappa(t) = c (1 - (t/r)^2)^3 on [0, r], unit total mass in R^d."""

    r: float
    d: int

    def __post_init__(self):
        # int_0^1 t^{d-1} (1-t^2)^3 dt via the beta function
        from scipy.special import beta
        integral = 0.5 * beta(self.d / 2.0, 4.0)
        self.c = 1.0 / (sphere_area(self.d) * self.r ** self.d * integral)
        self.inner_scale = self.r

    def value(self, t):
        u = np.asarray(t, dtype=float) / self.r
        core = np.clip(1.0 - u * u, 0.0, None)
        return self.c * core ** 3

    def d1(self, t):
        u = np.asarray(t, dtype=float) / self.r
        core = np.clip(1.0 - u * u, 0.0, None)
        return self.c * (-6.0 * u / self.r) * core ** 2

    def d2(self, t):
        u = np.asarray(t, dtype=float) / self.r
        core = np.clip(1.0 - u * u, 0.0, None)
        return self.c * (24.0 * u * u * core - 6.0 * core ** 2) / self.r ** 2


class MollifiedNewton(RadialC2):
    """Smoothed Newtonian profile min(1, (R/t)^{d-2}) convolved with a mollifier.

    d = 3 only: the sphere mean of the kernel has a closed form there, which
    makes the convolution a single well-conditioned 1-d integral.  Outside
    the collar [R - r, R + r] the convolution equals the raw profile exactly;
    inside, a dense spline of the exact integral supplies values and
    derivatives.
    """

    def __init__(self, R: float, r: float, d: int = 3, nodes: int = 48,
                 collar_points: int = 1200):
        if d != 3:
            raise NotImplementedError("mollified Newtonian profile implemented for d=3")
        if not (0 < r < R):
            raise ValueError("need 0 < r < R")
        self.R = float(R)
        self.r = float(r)
        self.d = d
        self.inner_scale = self.r
        kappa = Mollifier(r=self.r, d=d)
        # Gauss-Legendre nodes on [0, r] for the mollifier shells
        x, w = np.polynomial.legendre.leggauss(nodes)
        s = 0.5 * self.r * (x + 1.0)
        ws = 0.5 * self.r * w * sphere_area(d) * s ** (d - 1) * kappa.value(s)
        # exact profile antiderivative Phi(t) = int_0^t u * h_R(u) du  (d = 3)
        R2 = self.R * self.R

        def phi(t):
            t = np.asarray(t, dtype=float)
            return np.where(t <= self.R, 0.5 * t * t,
                            0.5 * R2 + self.R * (t - self.R))

        def conv(t):
            # sphere mean of h_R at radius s around |x| = t:  (Phi(t+s)-Phi(|t-s|))/(2ts)
            t = np.asarray(t, dtype=float)[..., None]
            m = (phi(t + s) - phi(np.abs(t - s))) / (2.0 * t * s)
            return np.sum(ws * m, axis=-1)

        self._conv = conv
        lo, hi = self.R - self.r, self.R + self.r
        pad = 0.02 * self.r
        ts = np.linspace(lo - pad, hi + pad, collar_points)
        self._spline = CubicSpline(ts, conv(ts))
        self._spl_d1 = self._spline.derivative(1)
        self._spl_d2 = self._spline.derivative(2)
        self._lo, self._hi = lo, hi

    def raw(self, t):
        """Unsmoothed profile min(1, R/t) (d = 3)."""
        t = np.asarray(t, dtype=float)
        return np.minimum(1.0, self.R / np.maximum(t, 1e-300))

    def convolved(self, t):
        """Exact convolution value, evaluated by quadrature everywhere."""
        t = np.asarray(t, dtype=float)
        tt = np.maximum(t, 1e-300)
        return np.where(t > 0, self._conv(tt), 1.0)

    def value(self, t):
        t = np.asarray(t, dtype=float)
        inside = t <= self._lo
        outside = t >= self._hi
        collar = ~(inside | outside)
        out = np.empty_like(t)
        out[inside] = 1.0
        out[outside] = self.R / np.maximum(t[outside], 1e-300)
        if np.any(collar):
            out[collar] = self._spline(t[collar])
        return out if out.ndim else float(out)

    def d1(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        outside = t >= self._hi
        out[outside] = -self.R / np.maximum(t[outside], 1e-300) ** 2
        collar = (t > self._lo) & (t < self._hi)
        if np.any(collar):
            out[collar] = self._spl_d1(t[collar])
        return out if out.ndim else float(out)

    def d2(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        outside = t >= self._hi
        out[outside] = 2.0 * self.R / np.maximum(t[outside], 1e-300) ** 3
        collar = (t > self._lo) & (t < self._hi)
        if np.any(collar):
            out[collar] = self._spl_d2(t[collar])
        return out if out.ndim else float(out)
