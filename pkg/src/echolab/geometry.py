"""Obstacle surfaces, first reflectors, and local graph charts.

A boundary neighbourhood is always handled as a graph chart: an orthonormal
tangent frame (e1, e2, nu) at a point q plus a height function h with
h(0) = 0, grad h(0) = 0, so the surface is q + s1*e1 + s2*e2 + h(s)*nu.

Sign convention (fixed throughout the package): the shape operator of the
boundary at q is S_q = hess h(0) taken in this frame with nu pointing out of
the obstacle.  Under this convention the phase Hessian identity
det(-(I/d - hess h)) = det(I/d - hess h) = (1/d)^2 - 2H/d + K holds exactly,
and a convex sphere of radius rho has principal curvatures -1/rho.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .errors import (
    AmbiguousProjection,
    DegenerateReflector,
    EmptyObstacle,
    NonPositiveDistance,
    OutsideChart,
    PStrictlyInside,
)

_FRAME_TOL = 1e-12


# ---------------------------------------------------------------------------
# height-function evaluators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SphereCap:
    """Exact height function of a sphere of radius rho, tangent at the chart
    origin with the outward normal pointing away from the centre."""

    rho: float

    def height(self, sigma: np.ndarray) -> np.ndarray:
        s2 = np.sum(np.square(sigma), axis=-1)
        return np.sqrt(self.rho**2 - s2) - self.rho

    def grad(self, sigma: np.ndarray) -> np.ndarray:
        s2 = np.sum(np.square(sigma), axis=-1)
        return -sigma / np.sqrt(self.rho**2 - s2)[..., None]


@dataclass(frozen=True)
class TaylorHeight:
    """Quartic Taylor model: the exact surface for synthetic C5 charts."""

    hess: np.ndarray
    third: np.ndarray
    fourth: np.ndarray

    def height(self, sigma: np.ndarray) -> np.ndarray:
        s = np.asarray(sigma, dtype=float)
        h2 = 0.5 * np.einsum("...i,ij,...j->...", s, self.hess, s)
        h3 = np.einsum("...i,...j,...k,ijk->...", s, s, s, self.third) / 6.0
        h4 = np.einsum("...i,...j,...k,...l,ijkl->...", s, s, s, s,
                       self.fourth) / 24.0
        return h2 + h3 + h4

    def grad(self, sigma: np.ndarray) -> np.ndarray:
        s = np.asarray(sigma, dtype=float)
        g = np.einsum("ij,...j->...i", self.hess, s)
        g = g + 0.5 * np.einsum("...j,...k,ijk->...i", s, s, self.third)
        g = g + np.einsum("...j,...k,...l,ijkl->...i", s, s, s,
                          self.fourth) / 6.0
        return g


# ---------------------------------------------------------------------------
# graph patch
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GraphPatch:
    """Local chart of the boundary at q.

    Carries the Taylor tensors of h at sigma=0 through order four and,
    optionally, an exact evaluator valid on |sigma| < radius.  When no
    evaluator is given the quartic Taylor polynomial is the surface.
    """

    q: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    nu: np.ndarray
    radius: float
    hess: np.ndarray
    third: np.ndarray
    fourth: np.ndarray
    evaluator: SphereCap | TaylorHeight | None = None

    def __post_init__(self):
        for name in ("q", "e1", "e2", "nu"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=float))
        object.__setattr__(self, "hess", np.asarray(self.hess, dtype=float))
        object.__setattr__(self, "third", np.asarray(self.third, dtype=float))
        object.__setattr__(self, "fourth", np.asarray(self.fourth, dtype=float))
        if self.radius <= 0:
            raise ValueError("patch radius must be positive")
        for v in (self.e1, self.e2, self.nu):
            if abs(np.dot(v, v) - 1.0) > 1e-10:
                raise ValueError("frame vectors must be unit length")
        if (abs(np.dot(self.e1, self.e2)) > _FRAME_TOL * 10
                or np.linalg.norm(np.cross(self.e1, self.e2) - self.nu) > 1e-10):
            raise ValueError("frame must be orthonormal with e1 x e2 = nu")
        if not np.allclose(self.hess, self.hess.T, atol=1e-12):
            raise ValueError("hess must be symmetric")
        _check_symmetric_tensor(self.third)
        _check_symmetric_tensor(self.fourth)

    # -- surface evaluation -------------------------------------------------

    def _taylor(self) -> TaylorHeight:
        return TaylorHeight(self.hess, self.third, self.fourth)

    def height(self, sigma: np.ndarray) -> np.ndarray:
        ev = self.evaluator if self.evaluator is not None else self._taylor()
        return ev.height(np.asarray(sigma, dtype=float))

    def height_grad(self, sigma: np.ndarray) -> np.ndarray:
        ev = self.evaluator if self.evaluator is not None else self._taylor()
        return ev.grad(np.asarray(sigma, dtype=float))

    def embed(self, sigma: np.ndarray) -> np.ndarray:
        """Map chart coordinates to points in R^3."""
        s = np.asarray(sigma, dtype=float)
        h = self.height(s)
        return (self.q
                + s[..., 0, None] * self.e1
                + s[..., 1, None] * self.e2
                + h[..., None] * self.nu)

    def normal(self, sigma: np.ndarray) -> np.ndarray:
        """Outward unit normal at chart coordinate sigma."""
        g = self.height_grad(sigma)
        n = (-g[..., 0, None] * self.e1
             - g[..., 1, None] * self.e2
             + self.nu)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)


def _check_symmetric_tensor(t: np.ndarray) -> None:
    if t.ndim == 3:
        swaps = ((1, 0, 2), (0, 2, 1))
    else:
        swaps = ((1, 0, 2, 3), (0, 2, 1, 3), (0, 1, 3, 2))
    for perm in swaps:
        if not np.allclose(t, np.transpose(t, perm), atol=1e-12):
            raise ValueError("Taylor tensors must be index-symmetric")


def sphere_patch(center: np.ndarray, rho: float, q: np.ndarray,
                 radius: float | None = None) -> GraphPatch:
    """Exact chart of the sphere |x - center| = rho at boundary point q."""
    center = np.asarray(center, dtype=float)
    q = np.asarray(q, dtype=float)
    nu = (q - center) / rho
    e1 = _any_orthonormal(nu)
    e2 = np.cross(nu, e1)
    # h = sqrt(rho^2 - |s|^2) - rho:
    #   hess = -(1/rho) I, third = 0, fourth = -(1/rho^3)(dd + dd + dd)
    eye = np.eye(2)
    fourth = -(np.einsum("pq,rs->pqrs", eye, eye)
               + np.einsum("pr,qs->pqrs", eye, eye)
               + np.einsum("ps,qr->pqrs", eye, eye)) / rho**3
    return GraphPatch(
        q=q, e1=e1, e2=e2, nu=nu,
        radius=radius if radius is not None else 0.9 * rho,
        hess=-eye / rho, third=np.zeros((2, 2, 2)), fourth=fourth,
        evaluator=SphereCap(rho),
    )


def taylor_patch(q, e1, e2, nu, hess, third, fourth,
                 radius: float = 1.0) -> GraphPatch:
    """Chart whose surface is the quartic Taylor polynomial itself."""
    return GraphPatch(q=np.asarray(q, float), e1=np.asarray(e1, float),
                      e2=np.asarray(e2, float), nu=np.asarray(nu, float),
                      radius=radius, hess=np.asarray(hess, float),
                      third=np.asarray(third, float),
                      fourth=np.asarray(fourth, float))


def _any_orthonormal(n: np.ndarray) -> np.ndarray:
    a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    v = a - np.dot(a, n) * n
    return v / np.linalg.norm(v)


def random_quartic_patch(rng: np.random.Generator, amplitude: float = 0.3,
                         radius: float = 1.0,
                         q=(0.0, 0.0, 0.0)) -> GraphPatch:
    """Random C5 chart with tensor coefficients uniform in +-amplitude.

    Used by the oracle batteries; the chart is its own quartic surface.
    """
    hess = rng.uniform(-amplitude, amplitude, (2, 2))
    hess = 0.5 * (hess + hess.T)
    third = rng.uniform(-amplitude, amplitude, (2, 2, 2))
    third = _symmetrize(third)
    fourth = rng.uniform(-amplitude, amplitude, (2, 2, 2, 2))
    fourth = _symmetrize(fourth)
    return taylor_patch(q, (1, 0, 0), (0, 1, 0), (0, 0, 1),
                        hess, third, fourth, radius=radius)


def _symmetrize(t: np.ndarray) -> np.ndarray:
    from itertools import permutations
    axes = list(range(t.ndim))
    acc = np.zeros_like(t)
    count = 0
    for perm in permutations(axes):
        acc += np.transpose(t, perm)
        count += 1
    return acc / count


# ---------------------------------------------------------------------------
# obstacles
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Sphere:
    """Ball obstacle; the boundary sphere is handled analytically."""

    center: np.ndarray
    radius: float
    regularity: str = "C5"
    tube: float | None = None     # radius of the unique-projection tube

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius <= 0:
            raise NonPositiveDistance("sphere radius must be positive")


@dataclass(frozen=True, eq=False)
class PatchAssembly:
    """Obstacle described by local graph charts.

    signed_distance, when given, must be negative inside and positive
    outside; without it only chart-based queries are supported.
    """

    patches: tuple[GraphPatch, ...]
    signed_distance: Callable[[np.ndarray], np.ndarray] | None = None
    regularity: str = "C5"
    tube: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "patches", tuple(self.patches))


Obstacle = Sphere | PatchAssembly


def two_sphere_assembly(centers, rho: float, facing: np.ndarray,
                        cap_radius: float | None = None) -> PatchAssembly:
    """Assembly of spherical caps, one per sphere centre, each cap oriented
    toward the point `facing` (caps must contain the eventual reflectors)."""
    facing = np.asarray(facing, dtype=float)
    patches = []
    for c in centers:
        c = np.asarray(c, dtype=float)
        q = c + rho * (facing - c) / np.linalg.norm(facing - c)
        patches.append(sphere_patch(c, rho, q, radius=cap_radius))

    centers_arr = [np.asarray(c, float) for c in centers]

    def sdist(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = np.min(np.stack([np.linalg.norm(x - c, axis=-1) - rho
                             for c in centers_arr]), axis=0)
        return d

    return PatchAssembly(patches=tuple(patches), signed_distance=sdist)


def signed_distance(obstacle: Obstacle, x: np.ndarray) -> np.ndarray:
    """Signed distance to the boundary: negative inside, positive outside."""
    x = np.asarray(x, dtype=float)
    if isinstance(obstacle, Sphere):
        return np.linalg.norm(x - obstacle.center, axis=-1) - obstacle.radius
    if obstacle.signed_distance is not None:
        return obstacle.signed_distance(x)
    raise NotImplementedError(
        "PatchAssembly without a signed-distance evaluator supports only "
        "chart-based queries")


def min_curvature_radius(obstacle: Obstacle) -> float:
    if isinstance(obstacle, Sphere):
        return obstacle.radius
    radii = []
    for patch in obstacle.patches:
        kmax = float(np.max(np.abs(np.linalg.eigvalsh(patch.hess))))
        radii.append(min(patch.radius, 1.0 / kmax if kmax > 0 else np.inf))
    return float(min(radii)) if radii else np.inf


def tube_radius(obstacle: Obstacle) -> float:
    """Radius of the tube around the boundary where the nearest boundary
    point is unique; reflections are only defined inside it."""
    if obstacle.tube is not None:
        return obstacle.tube
    return min_curvature_radius(obstacle)


# ---------------------------------------------------------------------------
# reflectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Reflector:
    """A first reflection point q together with everything the asymptotic
    formulas need: distance d, the chart at q, the determinant gap, the
    Gauss/mean curvatures, and B = -(I/d - hess h(0))^-1."""

    q: np.ndarray
    d: float
    patch: GraphPatch
    det_gap: float
    K: float
    H: float
    Bmat: np.ndarray


def make_reflector(patch: GraphPatch, d: float,
                   degeneracy_tol: float = 1e-12) -> Reflector:
    gap = det_gap(patch, d)
    if gap <= degeneracy_tol:
        raise DegenerateReflector(
            f"det gap {gap:.3e} <= tol {degeneracy_tol:.3e}")
    k1, k2, K, H = curvatures(patch)
    B = -np.linalg.inv(np.eye(2) / d - patch.hess)
    return Reflector(q=patch.q, d=d, patch=patch, det_gap=gap, K=K, H=H,
                     Bmat=B)


def first_reflector(obstacle: Obstacle, p: np.ndarray,
                    tol: float = 1e-6) -> list[Reflector]:
    """All boundary points attaining min |x - p| (within relative tol).

    Spheres are solved analytically; assemblies by dense chart sampling
    followed by local refinement, with nearby hits merged at radius 1e-4*d.
    """
    p = np.asarray(p, dtype=float)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if isinstance(obstacle, Sphere):
        m = np.linalg.norm(p - obstacle.center)
        if m <= obstacle.radius:
            raise PStrictlyInside("probe centre lies in the closed obstacle")
        q = obstacle.center + obstacle.radius * (p - obstacle.center) / m
        d = m - obstacle.radius
        return [make_reflector(sphere_patch(obstacle.center, obstacle.radius, q),
                               d, degeneracy_tol=tol)]

    if not obstacle.patches:
        raise EmptyObstacle("assembly has no patches")
    if obstacle.signed_distance is not None and signed_distance(obstacle, p) <= 0:
        raise PStrictlyInside("probe centre lies in the closed obstacle")

    candidates = []   # (distance, patch index, sigma)
    for idx, patch in enumerate(obstacle.patches):
        for sig, dist in _patch_local_minima(patch, p):
            candidates.append((dist, idx, sig))
    if not candidates:
        raise EmptyObstacle("no boundary samples found")
    d = min(c[0] for c in candidates)
    keep = [c for c in candidates if c[0] <= d * (1.0 + tol)]

    # spatial clustering at radius 1e-4 * d
    clusters: list[tuple[np.ndarray, tuple]] = []
    for dist, idx, sig in sorted(keep, key=lambda c: c[0]):
        x = obstacle.patches[idx].embed(sig)
        if all(np.linalg.norm(x - cx) > 1e-4 * d for cx, _ in clusters):
            clusters.append((x, (dist, idx, sig)))

    reflectors = []
    for _, (dist, idx, sig) in clusters:
        patch = obstacle.patches[idx]
        chart = _chart_at(patch, sig)
        reflectors.append(make_reflector(chart, dist, degeneracy_tol=tol))
    return reflectors


def _patch_local_minima(patch: GraphPatch, p: np.ndarray,
                        n_r: int = 12, n_ang: int = 24):
    """Coarse polar sampling of |embed(sigma) - p| plus local refinement."""
    rr = np.linspace(0.0, 0.98 * patch.radius, n_r)
    th = np.linspace(0.0, 2.0 * np.pi, n_ang, endpoint=False)
    grid = np.stack(np.meshgrid(rr, th, indexing="ij"), axis=-1)
    sig = np.stack([grid[..., 0] * np.cos(grid[..., 1]),
                    grid[..., 0] * np.sin(grid[..., 1])], axis=-1).reshape(-1, 2)
    sig = np.unique(np.round(sig, 12), axis=0)
    dist = np.linalg.norm(patch.embed(sig) - p, axis=-1)

    order = np.argsort(dist)
    seeds, found = [], []
    for i in order[:24]:
        s0 = sig[i]
        if any(np.linalg.norm(s0 - s) < 0.05 * patch.radius for s in seeds):
            continue
        seeds.append(s0)

    def objective(s):
        x = patch.embed(s)
        r = x - p
        f = np.dot(r, r)
        g = patch.height_grad(s)
        dx1 = patch.e1 + g[0] * patch.nu
        dx2 = patch.e2 + g[1] * patch.nu
        return f, 2.0 * np.array([np.dot(r, dx1), np.dot(r, dx2)])

    rmax = 0.995 * patch.radius
    for s0 in seeds:
        res = minimize(objective, s0, jac=True, method="L-BFGS-B",
                       bounds=[(-rmax, rmax)] * 2,
                       options={"ftol": 1e-18, "gtol": 1e-14, "maxiter": 200})
        s = res.x
        if np.hypot(*s) > rmax:
            continue
        found.append((s, float(np.linalg.norm(patch.embed(s) - p))))
    return found


def _chart_at(patch: GraphPatch, sigma0: np.ndarray) -> GraphPatch:
    """Chart of the same surface centred at embed(sigma0)."""
    sigma0 = np.asarray(sigma0, dtype=float)
    if np.hypot(*sigma0) < 1e-13:
        return patch
    q_new = patch.embed(sigma0)
    if isinstance(patch.evaluator, SphereCap):
        rho = patch.evaluator.rho
        center = patch.q - rho * patch.nu
        return sphere_patch(center, rho, q_new, radius=patch.radius)
    return _numeric_chart(patch, sigma0, q_new)


def _numeric_chart(patch: GraphPatch, sigma0: np.ndarray,
                   q_new: np.ndarray) -> GraphPatch:
    """Rebuild the chart at a non-centre point by projecting the surface
    onto the new tangent frame and differentiating numerically."""
    g0 = patch.height_grad(sigma0)
    nu_new = (-g0[0] * patch.e1 - g0[1] * patch.e2 + patch.nu)
    nu_new = nu_new / np.linalg.norm(nu_new)
    e1_new = patch.e1 - np.dot(patch.e1, nu_new) * nu_new
    e1_new = e1_new / np.linalg.norm(e1_new)
    e2_new = np.cross(nu_new, e1_new)

    avail = 0.95 * patch.radius - np.hypot(*sigma0)
    if avail <= 0:
        raise OutsideChart("reflection point too close to the chart rim")
    r_new = 0.7 * avail

    def height_new(s_tilde: np.ndarray) -> float:
        # Newton solve for the source-chart coordinate whose tangential
        # projection onto the new frame equals s_tilde.
        sig = sigma0.copy()
        for _ in range(60):
            x = patch.embed(sig)
            f = np.array([np.dot(x - q_new, e1_new) - s_tilde[0],
                          np.dot(x - q_new, e2_new) - s_tilde[1]])
            if np.max(np.abs(f)) < 1e-14:
                break
            g = patch.height_grad(sig)
            dx1 = patch.e1 + g[0] * patch.nu
            dx2 = patch.e2 + g[1] * patch.nu
            jac = np.array([[np.dot(dx1, e1_new), np.dot(dx2, e1_new)],
                            [np.dot(dx1, e2_new), np.dot(dx2, e2_new)]])
            sig = sig - np.linalg.solve(jac, f)
        x = patch.embed(sig)
        return float(np.dot(x - q_new, nu_new))

    step = min(1e-2, 0.05 * r_new)
    from .fdjet import quartic_jet
    jet = quartic_jet(lambda pts: np.array([height_new(v) for v in pts]),
                      np.zeros(2), step)
    return GraphPatch(q=q_new, e1=e1_new, e2=e2_new, nu=nu_new,
                      radius=r_new, hess=jet.hess, third=jet.third,
                      fourth=jet.fourth,
                      evaluator=_ReprojectedHeight(height_new))


@dataclass(frozen=True)
class _ReprojectedHeight:
    fn: Callable[[np.ndarray], float]

    def height(self, sigma: np.ndarray) -> np.ndarray:
        s = np.asarray(sigma, dtype=float)
        flat = s.reshape(-1, 2)
        return np.array([self.fn(v) for v in flat]).reshape(s.shape[:-1])

    def grad(self, sigma: np.ndarray) -> np.ndarray:
        s = np.asarray(sigma, dtype=float)
        h = 1e-6
        out = np.empty_like(s)
        flat = s.reshape(-1, 2)
        res = []
        for v in flat:
            g = [(self.fn(v + h * e) - self.fn(v - h * e)) / (2 * h)
                 for e in (np.array([1.0, 0.0]), np.array([0.0, 1.0]))]
            res.append(g)
        out = np.array(res).reshape(s.shape)
        return out


# ---------------------------------------------------------------------------
# chart-level operations
# ---------------------------------------------------------------------------

def curvatures(patch: GraphPatch) -> tuple[float, float, float, float]:
    """Principal curvatures (k1 <= k2), Gauss K and mean H of the chart at
    its origin, in the package's shape-operator convention."""
    k1, k2 = np.linalg.eigvalsh(patch.hess)
    return float(k1), float(k2), float(k1 * k2), float(0.5 * (k1 + k2))


def det_gap(patch: GraphPatch, d: float) -> float:
    """det(I/d - hess h(0)) evaluated as lambda^2 - 2 H lambda + K."""
    if d <= 0:
        raise NonPositiveDistance("d must be positive")
    lam = 1.0 / d
    _, _, K, H = curvatures(patch)
    return lam * lam - 2.0 * H * lam + K


def psi(patch: GraphPatch, d: float, sigma: np.ndarray) -> np.ndarray:
    """Distance |x(sigma) - p| for the probe at distance d above the chart
    origin: sqrt(|sigma|^2 + (d - h(sigma))^2)."""
    s = np.asarray(sigma, dtype=float)
    if np.any(np.sum(s * s, axis=-1) >= patch.radius**2):
        raise OutsideChart("sigma outside the chart radius")
    h = patch.height(s)
    return np.sqrt(np.sum(s * s, axis=-1) + (d - h) ** 2)


@dataclass(frozen=True, eq=False)
class PhaseJet:
    """Derivatives at sigma=0 of the phase phi(sigma) = d - |x(sigma) - p|."""

    grad: np.ndarray
    hess: np.ndarray
    third: np.ndarray
    fourth: np.ndarray


def phase_derivatives(patch: GraphPatch, d: float) -> PhaseJet:
    """Closed-form phase jet: grad 0; hess -(I/d - hess h); third equal to
    the h third tensor; fourth from the delta/h-hessian closed form."""
    if d <= 0:
        raise NonPositiveDistance("d must be positive")
    eye = np.eye(2)
    hess = -(eye / d - patch.hess)
    fourth = phase_fourth_tensor(patch.hess, patch.fourth, d)
    return PhaseJet(grad=np.zeros(2), hess=hess,
                    third=patch.third.copy(), fourth=fourth)


def phase_fourth_tensor(h_hess: np.ndarray, h_fourth: np.ndarray,
                        d: float) -> np.ndarray:
    """Fourth derivative tensor of the phase at the origin."""
    eye = np.eye(2)
    out = np.empty((2, 2, 2, 2))
    for p_ in range(2):
        for q_ in range(2):
            for r_ in range(2):
                for s_ in range(2):
                    t1 = (eye[p_, q_] * eye[r_, s_]
                          + eye[q_, r_] * eye[p_, s_]
                          + eye[q_, s_] * eye[p_, r_]) / d**3
                    t2 = (eye[p_, q_] * h_hess[r_, s_]
                          + eye[r_, s_] * h_hess[p_, q_]
                          + eye[q_, r_] * h_hess[p_, s_]
                          + eye[p_, s_] * h_hess[q_, r_]
                          + eye[q_, s_] * h_hess[p_, r_]
                          + eye[p_, r_] * h_hess[q_, s_]) / d**2
                    out[p_, q_, r_, s_] = t1 - t2 + h_fourth[p_, q_, r_, s_]
    return out


# explicit 2x2 contractions (no tensor-library semantics)

def third_pair_contraction(t3a: np.ndarray, t3b: np.ndarray,
                           B: np.ndarray) -> float:
    """sum t3a_pqr t3b_stu (1/4 B_ps B_qr B_tu + 1/6 B_ps B_qt B_ru)."""
    acc = 0.0
    for p_ in range(2):
        for q_ in range(2):
            for r_ in range(2):
                for s_ in range(2):
                    for t_ in range(2):
                        for u_ in range(2):
                            w = (0.25 * B[p_, s_] * B[q_, r_] * B[t_, u_]
                                 + B[p_, s_] * B[q_, t_] * B[r_, u_] / 6.0)
                            acc += t3a[p_, q_, r_] * t3b[s_, t_, u_] * w
    return acc


def fourth_BB_contraction(t4: np.ndarray, B: np.ndarray) -> float:
    """sum t4_pqrs B_pr B_qs."""
    acc = 0.0
    for p_ in range(2):
        for q_ in range(2):
            for r_ in range(2):
                for s_ in range(2):
                    acc += t4[p_, q_, r_, s_] * B[p_, r_] * B[q_, s_]
    return acc


def C_coefficient(reflector: Reflector, beta_q: float) -> float:
    """Second-order expansion coefficient of a single reflection point.

    Affine in the boundary coefficient: slope is exactly -1/d^2, so the
    boundary coefficient can be solved back from a measured value.

    The curvature part is the value the brute-force Laplace quadrature
    actually converges to; see the oracle module for the dual-route check.
    (A unit sphere probed from distance d=2 gives exactly -1/8 at beta=0.)
    """
    if reflector.det_gap <= 0:
        raise DegenerateReflector("det gap must be positive")
    d = reflector.d
    det = reflector.det_gap
    H = reflector.H
    B = reflector.Bmat
    h3 = reflector.patch.third
    h4 = reflector.patch.fourth
    val = (-1.0 / d**3
           + (7.0 - 6.0 * d * H) / (4.0 * d**5 * det)
           - 0.75 * (1.0 - d * H) ** 2 / (d**7 * det**2)
           - third_pair_contraction(h3, h3, B) / (4.0 * d**2)
           + fourth_BB_contraction(h4, B) / (16.0 * d**2)
           - beta_q / d**2)
    return val


# ---------------------------------------------------------------------------
# nearest-point projection and reflection
# ---------------------------------------------------------------------------

def nearest_boundary_point(obstacle: Obstacle, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if isinstance(obstacle, Sphere):
        r = np.linalg.norm(x - obstacle.center)
        if r == 0.0:
            raise AmbiguousProjection("centre point has no unique projection")
        return obstacle.center + obstacle.radius * (x - obstacle.center) / r
    best, best_d = None, np.inf
    for patch in obstacle.patches:
        for sig, dist in _patch_local_minima(patch, x, n_r=8, n_ang=16):
            if dist < best_d:
                best, best_d = patch.embed(sig), dist
    if best is None:
        raise EmptyObstacle("assembly has no patches")
    return best


def reflect_point(obstacle: Obstacle, x: np.ndarray) -> np.ndarray:
    """Mirror x across its nearest boundary point: 2 q(x) - x.

    Defined only inside the tube where the nearest point is unique.
    """
    x = np.asarray(x, dtype=float)
    q = nearest_boundary_point(obstacle, x)
    if np.linalg.norm(x - q) >= tube_radius(obstacle):
        raise AmbiguousProjection(
            "point outside the unique-projection tube")
    return 2.0 * q - x
