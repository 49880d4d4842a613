"""Shared quadrature rules: spheres, balls, and polar discs.

All rules return plain (points, weights) arrays so callers can evaluate
vectorised integrands.  Refinement is by doubling the base rule until the
result stabilises; the sharply peaked integrands of this package are handled
upstream by restricting the integration window, not here.
"""
from __future__ import annotations

import numpy as np

from .errors import QuadratureNonConvergence

# 26-point octahedral rule on the unit sphere (exact through degree 7):
# 6 vertices, 12 edge midpoints, 8 face centres.
_LEB26_W = (1.0 / 21.0, 4.0 / 105.0, 27.0 / 840.0)


def lebedev26() -> tuple[np.ndarray, np.ndarray]:
    """Unit vectors and weights (summing to 1) of the 26-point sphere rule."""
    pts = []
    wts = []
    for i in range(3):
        for s in (+1.0, -1.0):
            v = np.zeros(3)
            v[i] = s
            pts.append(v)
            wts.append(_LEB26_W[0])
    r = 1.0 / np.sqrt(2.0)
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        for si in (+1.0, -1.0):
            for sj in (+1.0, -1.0):
                v = np.zeros(3)
                v[j] = si * r
                v[k] = sj * r
                pts.append(v)
                wts.append(_LEB26_W[1])
    r = 1.0 / np.sqrt(3.0)
    for sx in (+1.0, -1.0):
        for sy in (+1.0, -1.0):
            for sz in (+1.0, -1.0):
                pts.append(np.array([sx * r, sy * r, sz * r]))
                wts.append(_LEB26_W[2])
    return np.array(pts), np.array(wts)


def sphere_rule(n_polar: int) -> tuple[np.ndarray, np.ndarray]:
    """Product rule on the unit sphere: Gauss-Legendre in cos(theta) x
    periodic trapezoid in phi.

    Returns unit vectors (m, 3) and weights summing to 4*pi.
    """
    u, wu = np.polynomial.legendre.leggauss(n_polar)
    n_phi = 2 * n_polar
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    st = np.sqrt(1.0 - u**2)
    x = np.outer(st, np.cos(phi)).ravel()
    y = np.outer(st, np.sin(phi)).ravel()
    z = np.outer(u, np.ones(n_phi)).ravel()
    w = np.outer(wu, np.full(n_phi, 2.0 * np.pi / n_phi)).ravel()
    return np.column_stack([x, y, z]), w


def sphere_integral(f, center: np.ndarray, radius: float,
                    rtol: float = 1e-11, n_start: int = 6,
                    max_doublings: int = 8) -> float:
    """Integrate f over the sphere |x - center| = radius by doubling the
    product rule until the relative change drops below rtol.

    f maps an (m, 3) array of points to (m,) values.
    """
    prev = None
    n = n_start
    for _ in range(max_doublings + 1):
        units, w = sphere_rule(n)
        pts = center[None, :] + radius * units
        val = float(np.dot(w, f(pts))) * radius**2
        if prev is not None:
            if abs(val - prev) <= rtol * max(abs(val), 1e-300):
                return val
        prev = val
        n *= 2
    raise QuadratureNonConvergence(
        f"sphere_integral did not converge (last n_polar={n // 2})")


def ball_integral(f, center: np.ndarray, radius: float,
                  rtol: float = 1e-10, n_shells: int = 64,
                  max_doublings: int = 6) -> float:
    """Integrate f over the solid ball |x - center| <= radius.

    Radial Gauss-Legendre shells; each shell starts at the 26-point rule and
    is refined together with the shell count until stable.
    """
    leb_u, leb_w = lebedev26()

    def attempt(n_r: int, n_ang: int) -> float:
        r, wr = np.polynomial.legendre.leggauss(n_r)
        r = 0.5 * radius * (r + 1.0)
        wr = 0.5 * radius * wr
        if n_ang == 0:
            units, wa = leb_u, leb_w * 4.0 * np.pi
        else:
            units, wa = sphere_rule(n_ang)
        pts = center[None, None, :] + r[:, None, None] * units[None, :, :]
        vals = f(pts.reshape(-1, 3)).reshape(len(r), len(units))
        shell = vals @ wa           # integral over unit sphere directions
        return float(np.dot(wr, shell * r**2))

    prev = None
    n_r, n_ang = n_shells, 0
    for _ in range(max_doublings + 1):
        val = attempt(n_r, n_ang)
        if prev is not None:
            if abs(val - prev) <= rtol * max(abs(val), 1e-300):
                return val
        prev = val
        n_r = 2 * n_r
        n_ang = 6 if n_ang == 0 else 2 * n_ang
    raise QuadratureNonConvergence(
        f"ball_integral did not converge (last n_shells={n_r // 2})")


def disc_rule(r_outer, n_r: int, n_ang: int) -> tuple[np.ndarray, np.ndarray]:
    """Polar rule on the disc sigma in R^2, |sigma| < r_outer.

    r_outer may be a scalar or an (n_ang,) array of per-ray outer radii
    (star-shaped window).  Returns points (m, 2) and weights including the
    polar Jacobian.
    """
    t, wt = np.polynomial.legendre.leggauss(n_r)
    theta = 2.0 * np.pi * np.arange(n_ang) / n_ang
    w_theta = 2.0 * np.pi / n_ang
    r_out = np.broadcast_to(np.asarray(r_outer, dtype=float), (n_ang,))
    # radial nodes per ray: r = r_out * (t+1)/2
    r = 0.5 * np.outer(r_out, t + 1.0)              # (n_ang, n_r)
    wr = 0.5 * r_out[:, None] * wt[None, :]         # (n_ang, n_r)
    s1 = r * np.cos(theta)[:, None]
    s2 = r * np.sin(theta)[:, None]
    pts = np.column_stack([s1.ravel(), s2.ravel()])
    w = (wr * r * w_theta).ravel()
    return pts, w


def gauss_legendre_on(a: float, b: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights mapped to [a, b]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w
