"""Smooth radial cutoff profiles with closed-form derivatives.

All dyadic machinery in the package is built from one C-infinity step
function of exp(-1/t) type.  Every profile exposes value, first and second
radial derivatives so that downstream symbol calculus never has to
finite-difference a cutoff.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Step",
    "Plateau",
    "AnnulusBump",
    "CutoffProfile",
    "DEFAULT_PROFILE",
]


def _f(t: np.ndarray) -> np.ndarray:
    """exp(-1/t) for t > 0, zero otherwise (all derivatives vanish at 0)."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 1e-12
    with np.errstate(divide="ignore", over="ignore"):
        out[pos] = np.exp(-1.0 / t[pos])
    return out


def _transition(t: np.ndarray):
    """Monotone C-inf step g with g=0 for t<=0, g=1 for t>=1; returns (g, g', g'')."""
    t = np.asarray(t, dtype=float)
    tc = np.clip(t, 0.0, 1.0)
    a = _f(tc)
    b = _f(1.0 - tc)
    s = a + b
    g = a / s

    inner = (tc > 1e-9) & (tc < 1.0 - 1e-9)
    g1 = np.zeros_like(tc)
    g2 = np.zeros_like(tc)
    ti = tc[inner]
    ai = a[inner]
    bi = b[inner]
    si = s[inner]
    a1 = ai / ti**2
    b1 = -bi / (1.0 - ti) ** 2
    a2 = ai * (1.0 / ti**4 - 2.0 / ti**3)
    b2 = bi * (1.0 / (1.0 - ti) ** 4 - 2.0 / (1.0 - ti) ** 3)
    num1 = a1 * bi - ai * b1
    g1[inner] = num1 / si**2
    g2[inner] = (a2 * bi - ai * b2) / si**2 - 2.0 * num1 * (a1 + b1) / si**3
    return g, g1, g2


class Step:
    """Smooth step: 0 for x <= lo, 1 for x >= hi."""

    def __init__(self, lo: float, hi: float):
        if not hi > lo:
            raise ValueError(f"step needs hi > lo, got [{lo}, {hi}]")
        self.lo = float(lo)
        self.hi = float(hi)
        self._s = 1.0 / (hi - lo)

    def val(self, x):
        return _transition((np.asarray(x, dtype=float) - self.lo) * self._s)[0]

    def d1(self, x):
        return _transition((np.asarray(x, dtype=float) - self.lo) * self._s)[1] * self._s

    def d2(self, x):
        return _transition((np.asarray(x, dtype=float) - self.lo) * self._s)[2] * self._s**2


class Plateau:
    """Smooth plateau: 1 for x <= r1, 0 for x >= r2."""

    def __init__(self, r1: float, r2: float):
        self._step = Step(r1, r2)

    @property
    def r1(self):
        return self._step.lo

    @property
    def r2(self):
        return self._step.hi

    def val(self, x):
        return 1.0 - self._step.val(x)

    def d1(self, x):
        return -self._step.d1(x)

    def d2(self, x):
        return -self._step.d2(x)


class AnnulusBump:
    """Smooth bump: 0 outside (r0, r3), 1 on [r1, r2]."""

    def __init__(self, r0: float, r1: float, r2: float, r3: float):
        if not (r0 < r1 <= r2 < r3):
            raise ValueError(f"annulus radii must satisfy r0<r1<=r2<r3, got {(r0, r1, r2, r3)}")
        self.radii = (float(r0), float(r1), float(r2), float(r3))
        self._up = Step(r0, r1)
        self._down = Plateau(r2, r3)

    def val(self, x):
        return self._up.val(x) * self._down.val(x)

    def d1(self, x):
        return self._up.d1(x) * self._down.val(x) + self._up.val(x) * self._down.d1(x)

    def d2(self, x):
        return (
            self._up.d2(x) * self._down.val(x)
            + 2.0 * self._up.d1(x) * self._down.d1(x)
            + self._up.val(x) * self._down.d2(x)
        )


def _radius(theta) -> np.ndarray:
    """Euclidean length of a frequency argument given as scalar, vector, or stacked grid.

    Accepts either an array of scalars (1d lattice) or an array whose last
    axis indexes the d components.
    """
    theta = np.asarray(theta, dtype=float)
    return np.abs(theta)


class CutoffProfile:
    """The dyadic cutoff family used throughout.

    psi      : 1 on |th| <= 1, 0 on |th| >= 2
    psi_k    : psi(2^-k th)
    phi_k    : psi_k - psi_{k-1} (k >= 1), phi_0 = psi
    rho      : 0 on |xi| <= 1/2, 1 on |xi| >= 1
    phi1     : supported in 1/4 <= |xi| <= 4, equal 1 on 1/3 <= |xi| <= 3
    chi_data : supported in 1/2 <= |eta| <= 2, equal 1 on 3/4 <= |eta| <= 3/2
    """

    def __init__(self):
        self.psi_plateau = Plateau(1.0, 2.0)
        self.rho_step = Step(0.5, 1.0)
        self.phi1_bump = AnnulusBump(0.25, 1.0 / 3.0, 3.0, 4.0)
        self.chi_data_bump = AnnulusBump(0.5, 0.75, 1.5, 2.0)

    def psi(self, theta):
        return self.psi_plateau.val(_radius(theta))

    def psi_k(self, theta, k: int):
        return self.psi(np.asarray(theta, dtype=float) * 2.0 ** (-k))

    def phi_k(self, theta, k: int):
        if k < 0:
            raise ValueError("phi_k defined for k >= 0")
        if k == 0:
            return self.psi(theta)
        return self.psi_k(theta, k) - self.psi_k(theta, k - 1)

    def rho(self, xi):
        return self.rho_step.val(_radius(xi))

    def phi1(self, xi):
        return self.phi1_bump.val(_radius(xi))

    def chi_data(self, eta):
        return self.chi_data_bump.val(_radius(eta))


DEFAULT_PROFILE = CutoffProfile()
