"""Finite-difference derivative jets of scalar functions on R^2.

Derivatives through order four are read off a least-squares quartic fit on a
symmetric 5x5 stencil; errors are O(step^2) by symmetry and one Richardson
pass brings them to O(step^4).  Fourth derivatives of C^5 functions lose
roughly half the mantissa to round-off, which the package's 1e-5 oracle
tolerances absorb (steps are chosen accordingly).
"""
from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

_POWERS = [(i, j) for i in range(5) for j in range(5) if i + j <= 4]


@dataclass(frozen=True, eq=False)
class Jet2:
    value: float
    grad: np.ndarray      # (2,)
    hess: np.ndarray      # (2,2)
    third: np.ndarray     # (2,2,2)
    fourth: np.ndarray    # (2,2,2,2)


def _quartic_fit(fn, center: np.ndarray, h: float) -> Jet2:
    offs = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    pts = np.array([[a, b] for a in offs for b in offs])
    vals = np.asarray(fn(center[None, :] + h * pts), dtype=float)
    # monomials in scaled coordinates keep the normal equations well posed
    A = np.column_stack([pts[:, 0]**i * pts[:, 1]**j for i, j in _POWERS])
    coef, *_ = np.linalg.lstsq(A, vals, rcond=None)
    c = {pw: coef[k] for k, pw in enumerate(_POWERS)}

    def deriv(i, j):
        return c[(i, j)] * factorial(i) * factorial(j) / h**(i + j)

    grad = np.array([deriv(1, 0), deriv(0, 1)])
    hess = np.array([[deriv(2, 0), deriv(1, 1)],
                     [deriv(1, 1), deriv(0, 2)]])
    third = np.zeros((2, 2, 2))
    for idx in np.ndindex(2, 2, 2):
        i = idx.count(0)
        third[idx] = deriv(i, 3 - i)
    fourth = np.zeros((2, 2, 2, 2))
    for idx in np.ndindex(2, 2, 2, 2):
        i = idx.count(0)
        fourth[idx] = deriv(i, 4 - i)
    return Jet2(value=float(deriv(0, 0)), grad=grad, hess=hess,
                third=third, fourth=fourth)


def quartic_jet(fn, center, step: float, refine: bool | int = True) -> Jet2:
    """Derivative jet of fn at center.

    fn must accept an (m, 2) array and return (m,) values.  refine gives the
    number of Richardson halvings (True == 1); by stencil symmetry the raw
    errors are even in step, so k halvings leave O(step^(2k+2)).
    """
    center = np.asarray(center, dtype=float)
    levels = int(refine)
    fits = [_quartic_fit(fn, center, step / 2**k) for k in range(levels + 1)]
    fields = ("value", "grad", "hess", "third", "fourth")
    tabl = [[getattr(f, name) for f in fits] for name in fields]
    for m in range(1, levels + 1):
        fac = 4.0**m
        for row in tabl:
            for i in range(levels + 1 - m):
                row[i] = (fac * row[i + 1] - row[i]) / (fac - 1.0)
    return Jet2(**{name: row[0] for name, row in zip(fields, tabl)})
