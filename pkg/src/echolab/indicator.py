"""Indicator functionals: Laplace transforms of recordings, volume and
sphere indicators, the solver-free surface-integral shortcut, and the
asymptotic fits that turn a tau-sweep into geometry.

Indicator values decay like exp(-2 tau dist), so series are carried as
(log|I|, sign) pairs; every fit works in log space and the public value
arrays are reconstructed on demand (they may underflow to 0 for extreme tau,
which is fine for display).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    GammaNotZero,
    InsufficientTauRange,
    MissingSphereSamples,
    MissingVolumeSamples,
    NoiseFloorReached,
    QuadratureNonConvergence,
)
from .fields import BallSource, v_f, varphi_scaled
from .geometry import Obstacle, PatchAssembly, Sphere, first_reflector
from .quadrature import gauss_legendre_on

PEAK_CUT = 40.0   # keep surface nodes with 2 tau (Psi - d) <= PEAK_CUT


# ---------------------------------------------------------------------------
# series container
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class IndicatorSeries:
    """tau grid with signed log-magnitude indicator values."""

    tau: np.ndarray
    log_abs: np.ndarray
    sign: np.ndarray
    mode: str                      # volume | sphere | sphere-reduced | j-mode
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        self.log_abs = np.asarray(self.log_abs, dtype=float)
        self.sign = np.asarray(self.sign, dtype=float)
        if not (np.all(np.diff(self.tau) > 0) and np.all(self.tau > 0)):
            raise ValueError("tau grid must be positive and strictly increasing")

    @classmethod
    def from_values(cls, tau, values, mode: str, **meta) -> "IndicatorSeries":
        values = np.asarray(values, dtype=float)
        with np.errstate(divide="ignore"):
            log_abs = np.log(np.abs(values))
        return cls(tau=np.asarray(tau, float), log_abs=log_abs,
                   sign=np.sign(values), mode=mode, meta=dict(meta))

    @property
    def values(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return self.sign * np.exp(self.log_abs)

    def moments(self, dist: float) -> np.ndarray:
        """tau^4 e^{2 tau dist} I(tau), finite whenever the decay rate of the
        series matches dist."""
        return self.sign * np.exp(self.log_abs + 4.0 * np.log(self.tau)
                                  + 2.0 * self.tau * dist)

    def usable(self, floor_log: float | None = None,
               slope_tol: float | None = 0.01,
               min_points: int = 4) -> np.ndarray:
        """Indices of the usable tau window.

        A point is kept when it is finite, above the noise floor, and sits
        in the longest contiguous run where the local log-slope is stable
        (adjacent pairwise slopes differing by less than slope_tol,
        relatively).  Slope screening is skipped when fewer than min_points
        would survive it or when slope_tol is None.
        """
        ok = np.isfinite(self.log_abs) & (self.sign != 0)
        if floor_log is None:
            floor_log = self.meta.get("floor_log", -np.inf)
        ok &= self.log_abs > floor_log
        idx = np.nonzero(ok)[0]
        if slope_tol is None or len(idx) < min_points + 1:
            return idx
        x = 2.0 * self.tau[idx]
        y = self.log_abs[idx]
        slopes = np.diff(y) / np.diff(x)
        stable_gap = np.abs(np.diff(slopes)) <= slope_tol * np.abs(slopes[:-1])
        # longest run of consecutive stable slope pairs
        best_lo, best_hi = 0, 0
        lo = 0
        for k in range(len(stable_gap) + 1):
            if k == len(stable_gap) or not stable_gap[k]:
                if k - lo > best_hi - best_lo:
                    best_lo, best_hi = lo, k
                lo = k + 1
        run = idx[best_lo:best_hi + 2]     # slope pairs k cover points k..k+2
        return run if len(run) >= min_points else idx


# ---------------------------------------------------------------------------
# transforms of recordings
# ---------------------------------------------------------------------------

def laplace_transform(series: np.ndarray, dt: float, tau: float) -> np.ndarray:
    """Composite-trapezoid transform int_0^T e^{-tau t} u(t) dt, time-major
    input (n_steps+1, n_nodes) -> (n_nodes,)."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    n = series.shape[0]
    t = dt * np.arange(n)
    w = np.exp(-tau * t) * dt
    w[0] *= 0.5
    w[-1] *= 0.5
    return w @ series


def recording_transform(recording, tau: float, which: str = "ball") -> np.ndarray:
    """Laplace transform of a recording's node series at one tau."""
    if which == "ball":
        if recording.ball_series is None or recording.ball_series.shape[1] == 0:
            raise MissingVolumeSamples("recording has no ball nodes")
        return laplace_transform(recording.ball_series, recording.dt, tau)
    if which == "sphere":
        if recording.sphere_series is None or recording.sphere_series.shape[1] == 0:
            raise MissingSphereSamples("recording has no sphere nodes")
        return laplace_transform(recording.sphere_series, recording.dt, tau)
    raise ValueError("which must be 'ball' or 'sphere'")


def indicator_volume(recording, source: BallSource, tau: float,
                     reference=None) -> float:
    """int_B (w_f - v_f) dx on the recording's ball lattice.

    reference selects what plays v_f: None uses the analytic field at the
    nodes; a matched empty-obstacle recording uses its transform instead,
    cancelling the shared direct-field discretization error.
    """
    w = recording_transform(recording, tau, "ball")
    if reference is None:
        v = v_f(source, recording.ball_points, tau)
    else:
        v = recording_transform(reference, tau, "ball")
    return float(np.dot(recording.ball_weights, w - v))


def indicator_sphere(recording, source: BallSource, R: float, tau: float,
                     reference=None) -> float:
    """Surface integral of (w_f - v_f) over the observation sphere."""
    w = recording_transform(recording, tau, "sphere")
    if reference is None:
        v = v_f(source, recording.sphere_points, tau)
    else:
        v = recording_transform(reference, tau, "sphere")
    return float(np.dot(recording.sphere_weights, w - v))


def reduce_sphere(i_sphere: float, tau: float, R: float, eta: float) -> float:
    """Volume-indicator estimate implied by the sphere indicator:
    multiply by varphi(tau eta) / (tau^2 R sinh(tau R)), exponent-factored."""
    return i_sphere * np.exp(reduce_sphere_log_factor(tau, R, eta))


def reduce_sphere_log_factor(tau: float, R: float, eta: float) -> float:
    """log of the reduction factor; stable for tau*R far beyond overflow."""
    vs = varphi_scaled(tau * eta)
    # sinh(tau R) = e^{tau R} (1 - e^{-2 tau R}) / 2
    return (np.log(2.0 * vs) - tau * (R - eta)
            - np.log(tau**2 * R * (1.0 - np.exp(-2.0 * tau * R))))


# ---------------------------------------------------------------------------
# recordings -> series
# ---------------------------------------------------------------------------

def indicator_series(recording, source: BallSource, taus, mode: str,
                     R: float | None = None, reference=None,
                     **meta) -> IndicatorSeries:
    """Sweep the tau grid and build a series in one of the recording modes:
    volume, sphere, or sphere-reduced."""
    taus = np.asarray(taus, dtype=float)
    vals = np.empty_like(taus)
    for i, t in enumerate(taus):
        if mode == "volume":
            vals[i] = indicator_volume(recording, source, t, reference)
        elif mode == "sphere":
            vals[i] = indicator_sphere(recording, source, R, t, reference)
        elif mode == "sphere-reduced":
            raw = indicator_sphere(recording, source, R, t, reference)
            vals[i] = reduce_sphere(raw, t, R, source.eta)
        else:
            raise ValueError(f"unknown mode {mode!r}")
    return IndicatorSeries.from_values(taus, vals, mode, **meta)


# ---------------------------------------------------------------------------
# surface-integral shortcut (gamma == 0)
# ---------------------------------------------------------------------------

def _sphere_surface_values(obstacle: Sphere, source: BallSource, beta,
                           tau: float, dref: float, n_u: int, n_phi: int):
    """Integrand samples for the boundary energy functional on a sphere,
    scaled by exp(+2 tau (Psi - dref)) removal; returns (samples, weights)."""
    p = source.p
    c = obstacle.center
    rho = obstacle.radius
    m = np.linalg.norm(p - c)
    w_axis = (p - c) / m
    a = _orth(w_axis)
    b = np.cross(w_axis, a)

    psi_max = dref + PEAK_CUT / (2.0 * tau)
    u_min = (rho**2 + m**2 - psi_max**2) / (2.0 * rho * m)
    u_min = max(u_min, -1.0)
    u, wu = gauss_legendre_on(u_min, 1.0, n_u)
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    su = np.sqrt(np.clip(1.0 - u**2, 0.0, None))

    dirs = (u[:, None, None] * w_axis
            + su[:, None, None] * (np.cos(phi)[None, :, None] * a
                                   + np.sin(phi)[None, :, None] * b))
    x = c + rho * dirs                          # (n_u, n_phi, 3)
    nu = dirs.reshape(-1, 3)
    x = x.reshape(-1, 3)
    wq = (wu[:, None] * (2.0 * np.pi / n_phi) * rho**2
          ).repeat(n_phi).reshape(len(u), n_phi).ravel()
    return _j_integrand(x, nu, source, beta, tau, dref), wq


def _patch_surface_values(patch, source: BallSource, beta, tau: float,
                          dref: float, n_r: int, n_ang: int):
    """Same for one graph patch; the chart metric supplies nu dS."""
    angles = 2.0 * np.pi * np.arange(n_ang) / n_ang
    # per-ray window where the decay exponent passes PEAK_CUT
    rr = np.linspace(1e-6, 0.995 * patch.radius, 160)
    r_out = np.empty(n_ang)
    p = source.p
    for k, th in enumerate(angles):
        sig = np.column_stack([rr * np.cos(th), rr * np.sin(th)])
        Psi = np.linalg.norm(patch.embed(sig) - p, axis=-1)
        beyond = np.nonzero(2.0 * tau * (Psi - dref) > PEAK_CUT)[0]
        r_out[k] = 0.995 * patch.radius if len(beyond) == 0 else rr[beyond[0]]
    from .quadrature import disc_rule
    sig, w = disc_rule(r_out, n_r, n_ang)
    x = patch.embed(sig)
    g = patch.height_grad(sig)
    area = np.sqrt(1.0 + np.sum(g * g, axis=-1))
    nu = patch.normal(sig)
    return _j_integrand(x, nu, source, beta, tau, dref), w * area


def _j_integrand(x, nu, source: BallSource, beta, tau: float, dref: float):
    """(d_nu v - beta v) v with the common factor
    varphi_scaled(tau eta)^2 / tau^5 * exp(-2 tau (dref - eta)) removed."""
    p = source.p
    diff = p - x
    r = np.linalg.norm(diff, axis=-1)
    pn = np.sum(diff * nu, axis=-1)
    b = beta(x) if callable(beta) else float(beta)
    core = (1.0 + 1.0 / (tau * r)) * pn / r**3 - b / (tau * r**2)
    return core * np.exp(-2.0 * tau * (r - dref))


def _orth(n):
    a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    v = a - np.dot(a, n) * n
    return v / np.linalg.norm(v)


def j_surface_log(obstacle: Obstacle, source: BallSource, beta, tau: float,
                  gamma=0.0, rtol: float = 1e-10,
                  max_doublings: int = 6) -> tuple[float, float]:
    """(log|J(tau)|, sign) of the boundary energy functional

        J = int_{boundary} (d_nu v - beta v) v dS

    computed from the closed-form source field.  Valid (and only offered)
    for gamma identically zero.
    """
    if _gamma_nonzero(gamma):
        raise GammaNotZero("surface shortcut requires gamma == 0")
    if tau <= 0:
        raise ValueError("tau must be positive")
    drefs = [r.d for r in first_reflector(obstacle, source.p)]
    dref = min(drefs)

    def total(n1, n2) -> float:
        if isinstance(obstacle, Sphere):
            vals, w = _sphere_surface_values(obstacle, source, beta, tau,
                                             dref, n1, n2)
            return float(np.dot(w, vals))
        acc = 0.0
        for patch in obstacle.patches:
            vals, w = _patch_surface_values(patch, source, beta, tau,
                                            dref, n1, n2)
            acc += float(np.dot(w, vals))
        return acc

    n1, n2 = 96, 32
    prev = None
    for _ in range(max_doublings + 1):
        s = total(n1, n2)
        if prev is not None and abs(s - prev) <= rtol * max(abs(s), 1e-300):
            break
        prev = s
        n1 *= 2
        n2 *= 2
    else:
        raise QuadratureNonConvergence(f"j_surface at tau={tau}")

    eta = source.eta
    log_abs = (2.0 * np.log(varphi_scaled(tau * eta)) - 5.0 * np.log(tau)
               - 2.0 * tau * (dref - eta) + np.log(abs(s)))
    return float(log_abs), float(np.sign(s))


def j_surface(obstacle: Obstacle, source: BallSource, beta, tau: float,
              gamma=0.0) -> float:
    """J(tau) as a plain float (underflows for extreme tau; the pipeline
    uses the log form)."""
    log_abs, sign = j_surface_log(obstacle, source, beta, tau, gamma)
    with np.errstate(over="ignore"):
        return float(sign * np.exp(log_abs))


def _gamma_nonzero(gamma) -> bool:
    if callable(gamma):
        return True     # field form: caller must pass literal 0 for j-mode
    return float(gamma) != 0.0


def j_mode_series(obstacle: Obstacle, source: BallSource, beta, taus,
                  gamma=0.0, **meta) -> IndicatorSeries:
    """Indicator surrogate 2 J(tau) on a tau grid (log-space series)."""
    taus = np.sort(np.asarray(taus, dtype=float))
    logs = np.empty_like(taus)
    signs = np.empty_like(taus)
    for i, t in enumerate(taus):
        la, sg = j_surface_log(obstacle, source, beta, t, gamma)
        logs[i] = la + np.log(2.0)
        signs[i] = sg
    return IndicatorSeries(tau=taus, log_abs=logs, sign=signs,
                           mode="j-mode", meta=dict(meta))


# ---------------------------------------------------------------------------
# fits
# ---------------------------------------------------------------------------

def fit_dist(series: IndicatorSeries, floor_log: float | None = None,
             min_points: int = 4) -> float:
    """Decay rate of the indicator: least-squares slope of log|I| against
    2 tau over the upper half of the usable window, weighted toward large
    tau (weight tau) where the asymptotics hold; returns -slope."""
    idx = series.usable(floor_log)
    if len(idx) < min_points:
        raise NoiseFloorReached(
            f"only {len(idx)} usable tau points (need {min_points})")
    upper = idx[len(idx) // 2:] if len(idx) >= 2 * min_points else idx
    x = 2.0 * series.tau[upper]
    y = series.log_abs[upper]
    w = series.tau[upper]
    xm = np.average(x, weights=w)
    ym = np.average(y, weights=w)
    slope = (np.sum(w * (x - xm) * (y - ym))
             / np.sum(w * (x - xm) ** 2))
    return float(-slope)


def fit_log_asymptote(series: IndicatorSeries,
                      floor_log: float | None = None,
                      min_points: int = 4,
                      n_terms: int | None = None) -> tuple[float, float, float]:
    """Joint stabilized fit of the asymptote in log space.

    Model: log|I| + 4 log tau = log|a| - 2 dist tau + (b/a)/tau [+ c2/tau^2],
    solved by least squares over the upper half of the usable window.  This
    never forms e^{2 tau dist}, so a slightly biased distance cannot blow up
    the moments; returns (a, dist, second) with second = lim tau (M - a).

    The 1/tau^2 column is nearly collinear with tau over short low-tau
    windows and then trades against the distance, so it is only included
    (n_terms=4) when the window is long enough; short windows use the
    3-term model.
    """
    idx = series.usable(floor_log)
    if len(idx) < min_points:
        raise InsufficientTauRange(
            f"{len(idx)} usable points, need {min_points}")
    upper = idx[len(idx) // 2:] if len(idx) >= 2 * min_points else idx
    if n_terms is None:
        span = series.tau[upper[-1]] / series.tau[upper[0]]
        n_terms = 4 if (len(upper) >= 5 and span >= 2.5) else 3
    t = series.tau[upper]
    y = series.log_abs[upper] + 4.0 * np.log(t)
    cols = [np.ones_like(t), t, 1.0 / t, 1.0 / t**2][:n_terms]
    A = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    sign = float(np.sign(np.sum(series.sign[upper])))
    a = sign * float(np.exp(coef[0]))
    dist = float(-0.5 * coef[1])
    second = a * float(coef[2])
    return a, dist, second


def fit_moments(series: IndicatorSeries, dist: float,
                n_terms: int = 3, method: str = "richardson",
                floor_log: float | None = None) -> tuple[float, float]:
    """Limit and first correction of M(tau) = tau^4 e^{2 tau dist} I(tau).

    richardson: exact solve of the inverse-power model a + b/tau (+ c/tau^2)
    on the top n_terms usable points -- sequential Richardson elimination.
    ls: least squares with the same basis over the upper half window.
    Returns (a, second) with second the extrapolated limit of tau (M - a).
    """
    idx = series.usable(floor_log)
    if len(idx) < max(2, n_terms):
        raise InsufficientTauRange(
            f"{len(idx)} usable points, need {max(2, n_terms)}")
    M = series.moments(dist)[idx]
    taus = series.tau[idx]
    if method == "richardson":
        t = taus[-n_terms:]
        y = M[-n_terms:]
        A = t[:, None] ** (-np.arange(n_terms)[None, :])
        coef = np.linalg.solve(A, y)
    elif method == "ls":
        upper = slice(len(taus) // 2, None) if len(taus) >= 8 else slice(None)
        t = taus[upper]
        y = M[upper]
        A = t[:, None] ** (-np.arange(n_terms)[None, :])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    else:
        raise ValueError("method must be 'richardson' or 'ls'")
    a = float(coef[0])
    second = float(coef[1]) if n_terms >= 2 else 0.0
    return a, second
