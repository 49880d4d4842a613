"""Closed-form modified-Helmholtz field of a ball source and the spherical
mean-value identities used by the sphere-data reduction.

The source field v solves (laplace - tau^2) v + chi_B = 0 in R^3 for the
unit indicator of the ball B = B_eta(p).  All hyperbolic combinations are
evaluated in exponent-factored form so tau * length up to ~1e4 stays finite:

    varphi(xi) e^-xi = (xi - 1)/2 + (xi + 1) e^-2xi / 2
    sinh(x)    e^-x  = (1 - e^-2x)/2
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsideSource, NonPositiveTau
from .quadrature import ball_integral, sphere_integral


@dataclass(frozen=True, eq=False)
class BallSource:
    """Ball-supported initial datum: unit velocity on |x - p| < eta."""

    p: np.ndarray
    eta: float

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        if self.eta <= 0:
            raise ValueError("source radius must be positive")


def varphi(xi):
    """xi*cosh(xi) - sinh(xi), series-evaluated near 0 to avoid cancellation."""
    xi = np.asarray(xi, dtype=float)
    small = np.abs(xi) < 1e-2
    out = np.where(small,
                   xi**3 / 3.0 * (1.0 + xi**2 / 10.0 + xi**4 / 280.0),
                   _varphi_direct(np.where(small, 1.0, xi)))
    return out if out.ndim else float(out)


def _varphi_direct(xi):
    return xi * np.cosh(xi) - np.sinh(xi)


def varphi_scaled(xi):
    """varphi(xi) * exp(-xi), finite for arbitrarily large xi >= 0."""
    xi = np.asarray(xi, dtype=float)
    small = np.abs(xi) < 1e-2
    safe = np.where(small, 1.0, xi)
    out = np.where(small,
                   varphi(np.where(small, xi, 0.0)) * np.exp(-xi),
                   0.5 * (safe - 1.0) + 0.5 * (safe + 1.0) * np.exp(-2.0 * safe))
    return out if out.ndim else float(out)


def _sinhc(x):
    """sinh(x)/x with the removable singularity filled by series."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-4
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 + x * x / 6.0, np.sinh(safe) / safe)


def v_f(source: BallSource, x: np.ndarray, tau: float):
    """Source field at x.

    Outside the ball: varphi(tau*eta)/tau^3 * exp(-tau r)/r with r = |x-p|;
    inside: 1/tau^2 - (1+tau*eta) e^-tau*eta sinh(tau r)/(tau^3 r).  The two
    branches agree on r = eta.
    """
    if tau <= 0:
        raise NonPositiveTau("tau must be positive")
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x - source.p, axis=-1)
    eta = source.eta
    scalar = r.ndim == 0
    r = np.atleast_1d(r)

    out = np.empty_like(r)
    outside = r >= eta
    if np.any(outside):
        ro = r[outside]
        # varphi(te)/tau^3 * e^{-tau ro}/ro = varphi_scaled(te)/tau^3 * e^{-tau(ro-eta)}/ro
        out[outside] = (varphi_scaled(tau * eta) / tau**3
                        * np.exp(-tau * (ro - eta)) / ro)
    inside = ~outside
    if np.any(inside):
        ri = r[inside]
        # (1+te) e^-te sinh(t ri)/(t^3 ri): factor e^-te into the sinh
        # exponentials so large tau*eta cannot overflow.
        small = tau * ri < 1e-4
        # sinh(tau ri) e^{-tau eta} without overflow; series for tiny tau*ri
        term_over_r = np.where(
            small,
            (1.0 + tau * eta) * np.exp(-tau * eta) * tau * _sinhc(tau * ri),
            (1.0 + tau * eta) * 0.5
            * (np.exp(tau * (ri - eta)) - np.exp(-tau * (ri + eta)))
            / np.where(small, 1.0, ri))
        out[inside] = 1.0 / tau**2 - term_over_r / tau**3
    return float(out[0]) if scalar else out


def grad_v_f(source: BallSource, x: np.ndarray, tau: float):
    """Gradient of the source field, exterior closed form only."""
    if tau <= 0:
        raise NonPositiveTau("tau must be positive")
    x = np.asarray(x, dtype=float)
    diff = x - source.p
    r = np.linalg.norm(diff, axis=-1)
    if np.any(r < source.eta):
        raise InsideSource("gradient closed form requires |x - p| > eta")
    amp = (varphi_scaled(tau * source.eta) / tau**2
           * (1.0 + 1.0 / (tau * r))
           * np.exp(-tau * (r - source.eta)) / r)
    return (-diff / r[..., None]) * amp[..., None]


def v_f_quadrature(source: BallSource, x: np.ndarray, tau: float,
                   rtol: float = 1e-9) -> float:
    """Brute-force (1/4pi) int_B exp(-tau|x-y|)/|x-y| dy, the defining
    volume potential; oracle for the closed forms (x outside B only)."""
    x = np.asarray(x, dtype=float)

    def kern(y):
        d = np.linalg.norm(y - x, axis=-1)
        return np.exp(-tau * d) / d

    return ball_integral(kern, source.p, source.eta, rtol=rtol) / (4.0 * np.pi)


def mean_value_sphere(field, x: np.ndarray, r: float, tau: float,
                      rtol: float = 1e-11) -> float:
    """Spherical mean-value functional:
    tau/(4 pi r sinh(tau r)) * surface integral of the field over |y-x| = r.

    Equals field(x) whenever the field solves (laplace - tau^2) field = 0 on
    a neighbourhood of the closed ball (caller's responsibility).
    """
    x = np.asarray(x, dtype=float)
    total = sphere_integral(field, x, r, rtol=rtol)
    return tau / (4.0 * np.pi * r * np.sinh(tau * r)) * total


def mean_value_ball(field, x: np.ndarray, r: float, tau: float,
                    rtol: float = 1e-11) -> float:
    """Volume integral of the field over the ball |y-x| <= r.

    For solutions of the modified Helmholtz equation this equals
    4 pi varphi(tau r) / tau^3 * field(x).
    """
    x = np.asarray(x, dtype=float)
    return ball_integral(field, x, r, rtol=rtol)


def mean_value_ball_factor(r: float, tau: float) -> float:
    """The factor 4 pi varphi(tau r)/tau^3 relating the ball mean to the
    centre value."""
    return 4.0 * np.pi * varphi(tau * r) / tau**3
