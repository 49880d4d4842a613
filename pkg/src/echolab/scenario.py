"""Scenario files: one experiment per flat key=value text file.

The format is deliberately dumb: typed keys, numbers, bracketed vectors,
row-major tensor lists, '#' comments, no includes.  Loading validates every
hypothesis the formulas need and raises the named error before any compute.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ObstacleTouchesSource, SchemaError
from .fields import BallSource
from .geometry import (
    GraphPatch,
    Obstacle,
    PatchAssembly,
    Sphere,
    SphereCap,
    first_reflector,
)


@dataclass(eq=False)
class Scenario:
    """Full experiment description."""

    source: BallSource
    T: float
    obstacle: Obstacle | None = None
    R: float | None = None
    gamma: float = 0.0
    beta: object = 0.0            # scalar or per-patch list
    mode: str = "j-mode"          # j-mode | solver
    tau_min: float | None = None
    tau_max: float | None = None
    tau_points: int = 16
    dx: float | None = None
    cfl: float = 0.45
    name: str = "scenario"
    raw: dict = field(default_factory=dict)

    # -- derived quantities ---------------------------------------------

    def reflectors(self):
        if self.obstacle is None:
            return []
        return first_reflector(self.obstacle, self.source.p)

    def dist(self) -> float | None:
        refl = self.reflectors()
        if not refl:
            return None
        return min(r.d for r in refl) - self.source.eta

    def tau_grid(self) -> np.ndarray:
        dist = self.dist()
        lo = self.tau_min
        if lo is None:
            lo = 8.0 / dist if dist else 4.0
        hi = self.tau_max
        if hi is None:
            hi = (640.0 if self.mode == "j-mode" else 40.0) * 1.5 / (dist or 1.5)
        return np.geomspace(lo, hi, self.tau_points)

    def grid_dx(self) -> float:
        return self.dx if self.dx is not None else self.source.eta / 12.0

    def robin_beta(self):
        """Scalar beta, or a callable over boundary points for per-patch
        coefficients."""
        if not isinstance(self.beta, (list, tuple)):
            return float(self.beta)
        patches = self.obstacle.patches
        betas = [float(b) for b in self.beta]

        def beta_field(pts: np.ndarray) -> np.ndarray:
            pts = np.atleast_2d(pts)
            dists = np.stack([np.linalg.norm(pts - p.q, axis=-1)
                              for p in patches])
            return np.array(betas)[np.argmin(dists, axis=0)]

        return beta_field

    # -- validation -------------------------------------------------------

    def validate(self) -> None:
        if self.mode not in ("j-mode", "solver"):
            raise SchemaError(f"unknown mode {self.mode!r}")
        if self.gamma < 0:
            raise SchemaError("gamma must be nonnegative")
        if self.mode == "j-mode" and self.gamma != 0.0:
            raise SchemaError("j-mode requires gamma == 0")
        if self.obstacle is None:
            return
        dist = self.dist()
        if dist is None or dist <= 0.0:
            raise ObstacleTouchesSource(
                "closed source ball must be disjoint from the closed obstacle")
        d = dist + self.source.eta
        if self.R is not None:
            if not (self.source.eta < self.R):
                raise SchemaError("need eta < R (source ball inside the "
                                  "observation sphere)")
            if not (self.R < d):
                raise SchemaError("observation sphere must be exterior to "
                                  "the obstacle (R < d)")
            bound = 2.0 * dist - (self.R - self.source.eta)
        else:
            bound = 2.0 * dist
        if self.mode == "solver" and self.T <= bound:
            raise SchemaError(
                f"final time T={self.T:g} violates the observation-time "
                f"bound {bound:g} for this geometry")

    # -- serialization ----------------------------------------------------

    def to_text(self) -> str:
        kv: list[tuple[str, str]] = [("name", self.name), ("mode", self.mode)]
        if self.obstacle is None:
            kv.append(("obstacle.kind", "none"))
        elif isinstance(self.obstacle, Sphere):
            kv.append(("obstacle.kind", "sphere"))
            kv.append(("obstacle.center", _vec(self.obstacle.center)))
            kv.append(("obstacle.radius", _num(self.obstacle.radius)))
        else:
            kv.append(("obstacle.kind", "assembly"))
            for i, p in enumerate(self.obstacle.patches):
                pre = f"patch.{i}."
                kv.append((pre + "q", _vec(p.q)))
                kv.append((pre + "e1", _vec(p.e1)))
                kv.append((pre + "e2", _vec(p.e2)))
                kv.append((pre + "nu", _vec(p.nu)))
                kv.append((pre + "radius", _num(p.radius)))
                kv.append((pre + "hess", _vec(p.hess.ravel())))
                kv.append((pre + "third", _vec(p.third.ravel())))
                kv.append((pre + "fourth", _vec(p.fourth.ravel())))
                if isinstance(p.evaluator, SphereCap):
                    kv.append((pre + "cap_rho", _num(p.evaluator.rho)))
        kv.append(("source.center", _vec(self.source.p)))
        kv.append(("source.radius", _num(self.source.eta)))
        kv.append(("time.final", _num(self.T)))
        if self.R is not None:
            kv.append(("observation.radius", _num(self.R)))
        kv.append(("robin.gamma", _num(self.gamma)))
        if isinstance(self.beta, (list, tuple)):
            for i, b in enumerate(self.beta):
                kv.append((f"patch.{i}.beta", _num(b)))
        else:
            kv.append(("robin.beta", _num(self.beta)))
        if self.tau_min is not None:
            kv.append(("tau.min", _num(self.tau_min)))
        if self.tau_max is not None:
            kv.append(("tau.max", _num(self.tau_max)))
        kv.append(("tau.points", str(self.tau_points)))
        if self.dx is not None:
            kv.append(("grid.dx", _num(self.dx)))
        kv.append(("grid.cfl", _num(self.cfl)))
        return "\n".join(f"{k} = {v}" for k, v in kv) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:12]

    @classmethod
    def from_file(cls, path) -> "Scenario":
        return cls.from_text(Path(path).read_text())

    @classmethod
    def from_text(cls, text: str) -> "Scenario":
        kv: dict[str, object] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SchemaError(f"line {lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            kv[key] = _parse_value(val, lineno)

        def need(key):
            if key not in kv:
                raise SchemaError(f"missing required key {key!r}")
            return kv[key]

        source = BallSource(p=np.asarray(need("source.center"), float),
                            eta=float(need("source.radius")))
        kind = str(kv.get("obstacle.kind", "none"))
        if kind == "none":
            obstacle = None
        elif kind == "sphere":
            obstacle = Sphere(center=np.asarray(need("obstacle.center"), float),
                              radius=float(need("obstacle.radius")))
        elif kind == "assembly":
            obstacle = _parse_patches(kv)
        else:
            raise SchemaError(f"unknown obstacle.kind {kind!r}")

        beta = kv.get("robin.beta", 0.0)
        patch_betas = sorted(k for k in kv if k.startswith("patch.")
                             and k.endswith(".beta"))
        if patch_betas:
            beta = [float(kv[k]) for k in patch_betas]

        scen = cls(
            source=source,
            T=float(need("time.final")),
            obstacle=obstacle,
            R=(float(kv["observation.radius"])
               if "observation.radius" in kv else None),
            gamma=float(kv.get("robin.gamma", 0.0)),
            beta=beta,
            mode=str(kv.get("mode", "j-mode")),
            tau_min=(float(kv["tau.min"]) if "tau.min" in kv else None),
            tau_max=(float(kv["tau.max"]) if "tau.max" in kv else None),
            tau_points=int(float(kv.get("tau.points", 16))),
            dx=(float(kv["grid.dx"]) if "grid.dx" in kv else None),
            cfl=float(kv.get("grid.cfl", 0.45)),
            name=str(kv.get("name", "scenario")),
            raw=kv,
        )
        scen.validate()
        return scen


def _num(x: float) -> str:
    return f"{float(x):.17g}"


def _vec(v) -> str:
    return "[" + ", ".join(f"{float(x):.17g}" for x in np.asarray(v).ravel()) + "]"


def _parse_value(val: str, lineno: int):
    if val.startswith("["):
        if not val.endswith("]"):
            raise SchemaError(f"line {lineno}: unterminated vector")
        return [float(x) for x in val[1:-1].split(",") if x.strip()]
    try:
        return float(val)
    except ValueError:
        return val


def _parse_patches(kv: dict) -> PatchAssembly:
    indices = sorted({int(k.split(".")[1]) for k in kv
                      if k.startswith("patch.") and not k.endswith(".beta")})
    if not indices:
        raise SchemaError("assembly obstacle needs patch.N.* keys")
    patches = []
    for i in indices:
        pre = f"patch.{i}."

        def get(suffix, optional=False):
            key = pre + suffix
            if key not in kv:
                if optional:
                    return None
                raise SchemaError(f"missing {key!r}")
            return kv[key]

        hess = np.asarray(get("hess"), float).reshape(2, 2)
        third = np.asarray(get("third"), float).reshape(2, 2, 2)
        fourth = np.asarray(get("fourth"), float).reshape(2, 2, 2, 2)
        cap = get("cap_rho", optional=True)
        patches.append(GraphPatch(
            q=np.asarray(get("q"), float),
            e1=np.asarray(get("e1"), float),
            e2=np.asarray(get("e2"), float),
            nu=np.asarray(get("nu"), float),
            radius=float(get("radius")),
            hess=hess, third=third, fourth=fourth,
            evaluator=SphereCap(float(cap)) if cap is not None else None,
        ))
    return PatchAssembly(patches=tuple(patches))
