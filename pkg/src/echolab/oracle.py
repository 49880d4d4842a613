"""Brute-force verification of every asymptotic coefficient.

Two independent routes are kept strictly separate:

* quadrature of the peaked surface integrals (tilde_integral) and Richardson
  extraction of their expansion coefficients, which knows nothing about the
  closed forms;
* the closed-form second-order coefficient, evaluated once through the full
  expansion machinery (G0_laplacian) and once through its simplified form
  (G0_laplacian_closed) -- the two must agree to round-off.

lemma31_check re-derives every derivative identity the closed forms rest on
by finite differences on the raw chart functions.

All index contractions run as explicit 2x2 loops; the summation convention
is never delegated to an array library.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateReflector,
    InsufficientTauRange,
    OutsideChart,
    QuadratureNonConvergence,
)
from .fdjet import Jet2, quartic_jet
from .geometry import (
    GraphPatch,
    curvatures,
    det_gap,
    fourth_BB_contraction,
    phase_derivatives,
    phase_fourth_tensor,
    psi,
    third_pair_contraction,
)
from .quadrature import disc_rule

PHASE_CUT = 30.0          # integrate where 2*tau*phi >= -PHASE_CUT
FD_STEP_SCALE = 4e-2      # stencil step, x min(1, chart radius)
FD_LEVELS = 2             # Richardson halvings on the stencil fits


# ---------------------------------------------------------------------------
# integrand
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LaplaceIntegrand:
    """Amplitude/phase pair on a chart: amplitude g0 or g1(beta_q), phase
    phi(sigma) = d - |x(sigma) - p| with a strict maximum at sigma = 0."""

    patch: GraphPatch
    d: float
    kind: str = "g0"            # "g0" | "g1"
    beta_q: float = 0.0

    def __post_init__(self):
        if self.kind not in ("g0", "g1"):
            raise ValueError("kind must be 'g0' or 'g1'")
        if det_gap(self.patch, self.d) <= 0.0:
            raise DegenerateReflector("phase maximum is degenerate")

    def amplitude(self, sigma: np.ndarray) -> np.ndarray:
        if self.kind == "g0":
            return g0_eval(self.patch, self.d, sigma)
        return g1_eval(self.patch, self.d, self.beta_q, sigma)

    def phase(self, sigma: np.ndarray) -> np.ndarray:
        return self.d - psi(self.patch, self.d, sigma)


def g0_eval(patch: GraphPatch, d: float, sigma: np.ndarray) -> np.ndarray:
    """Leading amplitude: Psi^-3 (grad h . sigma + d - h)."""
    s = np.asarray(sigma, dtype=float)
    Psi = psi(patch, d, s)
    h = patch.height(s)
    g = patch.height_grad(s)
    num = np.sum(g * s, axis=-1) + d - h
    return num / Psi**3


def g1_eval(patch: GraphPatch, d: float, beta_q: float,
            sigma: np.ndarray) -> np.ndarray:
    """Second amplitude: g0/Psi - beta/Psi^2 * sqrt(1 + |grad h|^2)."""
    s = np.asarray(sigma, dtype=float)
    Psi = psi(patch, d, s)
    g = patch.height_grad(s)
    area = np.sqrt(1.0 + np.sum(g * g, axis=-1))
    return g0_eval(patch, d, s) / Psi - beta_q * area / Psi**2


# ---------------------------------------------------------------------------
# peaked quadrature
# ---------------------------------------------------------------------------

def _window_radii(integrand: LaplaceIntegrand, tau: float,
                  angles: np.ndarray) -> np.ndarray:
    """Per-ray radius where the integrand has decayed to exp(-PHASE_CUT)."""
    r_max = 0.999 * integrand.patch.radius
    rr = np.linspace(1e-6, r_max, 160)
    out = np.empty(len(angles))
    for k, th in enumerate(angles):
        sig = np.column_stack([rr * np.cos(th), rr * np.sin(th)])
        ph = integrand.phase(sig)
        below = np.nonzero(2.0 * tau * ph < -PHASE_CUT)[0]
        out[k] = r_max if len(below) == 0 else rr[below[0]]
    return out


def tilde_integral(integrand: LaplaceIntegrand, tau: float,
                   rtol: float = 1e-11, max_doublings: int = 6) -> float:
    """Quadrature of int_{|sigma|<r_q} g(sigma) exp(2 tau phi(sigma)) dsigma.

    The domain is restricted to the window where the exponential is above
    exp(-PHASE_CUT); the discarded tail is bounded by exp(-PHASE_CUT) times
    the remaining area and is far below the returned tolerance.  No decay
    prefactor is applied: the phase itself vanishes at the origin.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    n_r, n_ang = 24, 16
    prev = None
    for _ in range(max_doublings + 1):
        angles = 2.0 * np.pi * np.arange(n_ang) / n_ang
        r_out = _window_radii(integrand, tau, angles)
        pts, w = disc_rule(r_out, n_r, n_ang)
        vals = integrand.amplitude(pts) * np.exp(
            2.0 * tau * integrand.phase(pts))
        val = float(np.dot(w, vals))
        if prev is not None and abs(val - prev) <= rtol * max(abs(val), 1e-300):
            return val
        prev = val
        n_r *= 2
        n_ang *= 2
    raise QuadratureNonConvergence(
        f"tilde_integral at tau={tau} (last n_r={n_r // 2})")


def two_term_fit(integrand: LaplaceIntegrand,
                 taus) -> tuple[float, float]:
    """First two expansion coefficients of sqrt(det gap) * tilde_integral:
    c1/tau + c2/tau^2 + O(tau^-3), by sequential Richardson elimination
    (exact solve of the inverse-power model on the top tau points)."""
    taus = np.sort(np.asarray(taus, dtype=float))
    if len(taus) < 4:
        raise InsufficientTauRange("need at least 4 tau values")
    root = np.sqrt(det_gap(integrand.patch, integrand.d))
    top = taus[-4:]
    y = np.array([root * tilde_integral(integrand, t) for t in top])
    powers = np.arange(1, 5)
    A = top[:, None] ** (-powers[None, :])
    coeffs = np.linalg.solve(A, y)
    return float(coeffs[0]), float(coeffs[1])


# ---------------------------------------------------------------------------
# closed-form second coefficient, two routes
# ---------------------------------------------------------------------------

def _b_matrix(patch: GraphPatch, d: float) -> np.ndarray:
    jet = phase_derivatives(patch, d)
    return np.linalg.inv(jet.hess)


def _c_matrix_closed(patch: GraphPatch, d: float) -> np.ndarray:
    """Hessian of g0 at the origin (closed form)."""
    eye = np.eye(2)
    return (4.0 * patch.hess - 3.0 * eye / d) / d**3


def G0_laplacian(patch: GraphPatch, d: float) -> float:
    """Scaled Laplacian of the Laplace-method kernel: the full expansion
    route, term by term, using the phase jet, B = (phase hess)^-1, the
    vanishing first amplitude derivatives and the closed-form amplitude
    Hessian."""
    gap = det_gap(patch, d)
    if gap <= 0:
        raise DegenerateReflector("det gap must be positive")
    jet = phase_derivatives(patch, d)
    B = np.linalg.inv(jet.hess)
    g0_at0 = 1.0 / d**2
    g0_grad = np.zeros(2)           # first derivatives vanish identically

    term1 = 0.0
    for s_ in range(2):
        for r_ in range(2):
            for q_ in range(2):
                for p_ in range(2):
                    term1 += (jet.third[s_, r_, q_] * B[s_, q_] * B[r_, p_]
                              * g0_grad[p_])

    C = _c_matrix_closed(patch, d)
    trace_cb = 0.0
    for p_ in range(2):
        for q_ in range(2):
            trace_cb += C[p_, q_] * B[q_, p_]

    term3 = g0_at0 * (third_pair_contraction(jet.third, jet.third, B)
                      - 0.25 * fourth_BB_contraction(jet.fourth, B))
    return term1 - trace_cb - term3


def G0_laplacian_closed(patch: GraphPatch, d: float) -> float:
    """Same quantity through the simplified closed form; must agree with
    G0_laplacian to round-off (the package's strongest algebra check)."""
    gap = det_gap(patch, d)
    if gap <= 0:
        raise DegenerateReflector("det gap must be positive")
    _, _, _, H = curvatures(patch)
    B = _b_matrix(patch, d)
    return (-8.0 / d**3
            + (7.0 - 6.0 * d * H) / (d**5 * gap)
            - 3.0 * (1.0 - d * H) ** 2 / (d**7 * gap**2)
            - third_pair_contraction(patch.third, patch.third, B) / d**2
            + fourth_BB_contraction(patch.fourth, B) / (4.0 * d**2))


# ---------------------------------------------------------------------------
# derivative-identity battery
# ---------------------------------------------------------------------------

@dataclass
class OracleReport:
    """Per-identity relative residuals for one chart/distance pair."""

    label: str
    residuals: dict[str, float] = field(default_factory=dict)

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values())

    def rows(self):
        for key in sorted(self.residuals):
            yield self.label, key, self.residuals[key]


def random_admissible_chart(rng: np.random.Generator, d: float = 2.0,
                            amplitude: float = 0.3,
                            min_gap: float = 0.05) -> GraphPatch:
    """Random quartic chart with a safely nondegenerate phase maximum at
    the given probe distance (rejection sampling on the det gap)."""
    from .geometry import random_quartic_patch
    for _ in range(200):
        patch = random_quartic_patch(rng, amplitude=amplitude)
        if det_gap(patch, d) > min_gap:
            return patch
    raise DegenerateReflector("could not sample an admissible chart")


def _rel(lhs, rhs, floor: float) -> float:
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    num = float(np.max(np.abs(lhs - rhs)))
    den = max(float(np.max(np.abs(lhs))), float(np.max(np.abs(rhs))), floor)
    return num / den


def lemma31_check(patch: GraphPatch, d: float,
                  step: float | None = None) -> OracleReport:
    """Finite-difference verification of the derivative identities behind
    the second-order coefficient, plus the algebraic side identities.

    Every left-hand side is rebuilt from the raw chart functions (psi, the
    height and the amplitude) by central differences; right-hand sides come
    from the closed forms.  The report carries per-identity residuals.
    """
    if step is None:
        step = FD_STEP_SCALE * min(1.0, patch.radius)
    lam = 1.0 / d
    eye = np.eye(2)
    h2 = patch.hess
    gap = det_gap(patch, d)
    _, _, _, H = curvatures(patch)
    B = _b_matrix(patch, d)
    trB = B[0, 0] + B[1, 1]
    normB2 = float(np.sum(B * B))

    phi_fn = lambda s: d - psi(patch, d, s)
    g0_fn = lambda s: g0_eval(patch, d, s)
    phi_jet = quartic_jet(phi_fn, np.zeros(2), step, refine=FD_LEVELS)
    g0_jet = quartic_jet(g0_fn, np.zeros(2), step, refine=FD_LEVELS)

    res: dict[str, float] = {}
    g0_scale = 1.0 / d**2

    # vanishing first amplitude derivative
    res["3.13"] = float(np.max(np.abs(g0_jet.grad))) / g0_scale

    # third phase tensor equals the height third tensor
    res["3.14"] = _rel(phi_jet.third, patch.third, floor=lam**2)

    # contracted fourth phase tensor with its curvature correction;
    # the sides nearly cancel for strong charts, so normalise by the
    # magnitude of the contracted terms themselves
    lhs_315 = fourth_BB_contraction(phi_jet.fourth, B)
    h4BB = fourth_BB_contraction(patch.fourth, B)
    corr = (-12.0 * (1.0 - d * H) ** 2 / (d**5 * gap**2)
            + (20.0 - 16.0 * d * H) / (d**3 * gap))
    scale4 = max(abs(lhs_315), abs(h4BB) + abs(corr), lam**3)
    res["3.15"] = abs(lhs_315 - (h4BB + corr)) / scale4

    # trace of (amplitude Hessian x B)
    trace_cb_fd = 0.0
    for p_ in range(2):
        for q_ in range(2):
            trace_cb_fd += g0_jet.hess[p_, q_] * B[q_, p_]
    rhs_316 = 8.0 / d**3 - 2.0 * (1.0 - d * H) / (d**5 * gap)
    res["3.16"] = _rel(trace_cb_fd, rhs_316, floor=lam**3)

    # first-derivative identity for Psi phi_pq away from the origin
    res["A.5"] = _identity_a5(patch, d, step)

    # closed-form fourth phase tensor
    closed4 = phase_fourth_tensor(h2, patch.fourth, d)
    res["A.10"] = _rel(phi_jet.fourth, closed4, floor=lam**3)

    # fourth contraction in trace form
    rhs_a12 = ((2.0 * normB2 + trB**2) / d**3
               - (_tr(B @ h2 @ B) + 3.0 * _tr(h2 @ B @ B)
                  + 2.0 * trB * _tr(h2 @ B)) / d**2
               + h4BB)
    res["A.12"] = abs(lhs_315 - rhs_a12) / scale4

    # pure algebra: B against the height Hessian
    a13 = [
        _rel(h2, np.linalg.inv(B) + eye / d, floor=lam),
        _rel(B @ h2 @ B, B + B @ B / d, floor=lam),
        _rel(h2 @ B @ B, B + B @ B / d, floor=lam),
        _rel(_tr(h2 @ B), 2.0 + trB / d, floor=1.0),
        _rel(_tr(B @ h2 @ B), trB + normB2 / d, floor=lam),
    ]
    res["A.13"] = max(a13)

    lhs_a14 = d**3 * (lhs_315 - h4BB)
    rhs_a14 = -2.0 * normB2 - trB**2 - 8.0 * d * trB
    scale_a14 = max(2.0 * normB2 + trB**2 + 8.0 * d * abs(trB),
                    d**3 * (abs(lhs_315) + abs(h4BB)), 1.0)
    res["A.14"] = abs(lhs_a14 - rhs_a14) / scale_a14

    det_phi = gap   # phase Hessian and the gap share the determinant
    normB2_closed = ((lam - h2[0, 0])**2 + (lam - h2[1, 1])**2
                     + 2.0 * h2[0, 1]**2) / det_phi**2
    trB_closed = -((lam - h2[0, 0]) + (lam - h2[1, 1])) / det_phi
    res["A.15"] = max(_rel(normB2, normB2_closed, floor=lam**2),
                      _rel(trB, trB_closed, floor=lam))
    res["A.15b"] = _rel(det_phi * (normB2 - trB**2), -2.0, floor=1.0)

    # amplitude Hessian: against both displayed forms
    psi_jet = quartic_jet(lambda s: psi(patch, d, s), np.zeros(2), step,
                          refine=FD_LEVELS)
    c_inter = (patch.hess - 3.0 * psi_jet.hess) / d**3
    c_closed = _c_matrix_closed(patch, d)
    res["A.16"] = max(_rel(g0_jet.hess, c_closed, floor=lam**3),
                      _rel(g0_jet.hess, c_inter, floor=lam**3))

    return OracleReport(label=f"d={d:g}", residuals=res)


def _tr(M: np.ndarray) -> float:
    return float(M[0, 0] + M[1, 1])


def _identity_a5(patch: GraphPatch, d: float, step: float) -> float:
    """Psi phi_pq = phi_p phi_q - (delta_pq + h_pq (h - d) + h_p h_q),
    checked at off-origin points with both sides finite-differenced."""
    worst = 0.0
    r0 = 0.25 * min(1.0, patch.radius)
    for ang in (0.3, 1.7, 3.9):
        s0 = np.array([r0 * np.cos(ang), r0 * np.sin(ang)])
        phi_jet = quartic_jet(lambda s: d - psi(patch, d, s), s0, step,
                              refine=FD_LEVELS)
        h_jet = quartic_jet(lambda s: patch.height(s), s0, step,
                            refine=FD_LEVELS)
        Psi = float(psi(patch, d, s0))
        h_val = float(patch.height(s0))
        for p_ in range(2):
            for q_ in range(2):
                lhs = Psi * phi_jet.hess[p_, q_]
                rhs = (phi_jet.grad[p_] * phi_jet.grad[q_]
                       - ((1.0 if p_ == q_ else 0.0)
                          + h_jet.hess[p_, q_] * (h_val - d)
                          + h_jet.grad[p_] * h_jet.grad[q_]))
                worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1.0))
    return worst


def contraction_identity_residual(B: np.ndarray) -> float:
    """(dd + dd + dd) B_pr B_qs = 2|B|^2 + (Trace B)^2 for symmetric B."""
    eye = np.eye(2)
    lhs = 0.0
    for p_ in range(2):
        for q_ in range(2):
            for r_ in range(2):
                for s_ in range(2):
                    lhs += ((eye[p_, q_] * eye[r_, s_]
                             + eye[q_, r_] * eye[p_, s_]
                             + eye[q_, s_] * eye[p_, r_])
                            * B[p_, r_] * B[q_, s_])
    rhs = 2.0 * float(np.sum(B * B)) + (B[0, 0] + B[1, 1])**2
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1.0)
