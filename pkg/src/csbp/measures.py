"""Distributional summaries of nu_t recovered from its Laplace exponent.

The mass distribution M(x) = int_0^x y nu_t(dy) has Laplace-Stieltjes
transform dq phi(t, q), so M itself is the inverse Laplace transform of
dq phi(t, q) / q. The inversion uses the Gaver-Stehfest formula, either in
double precision (order 14) or, when the flow has a closed form that can be
evaluated in multiprecision, at order 30 with enough digits to absorb the
alternating weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import mpmath
import numpy as np

from .errors import DomainError
from .exponent import ExponentFlow, mass_at_zero

DOUBLE_ORDER = 14
MP_ORDER = 30
INSTABILITY_REL = 1e-4


@lru_cache(maxsize=None)
def _stehfest_exact(order: int):
    if order < 2 or order % 2:
        raise DomainError("Gaver-Stehfest order must be an even integer >= 2")
    half = order // 2
    out = []
    for k in range(1, order + 1):
        acc = Fraction(0)
        for j in range((k + 1) // 2, min(k, half) + 1):
            acc += Fraction(
                j ** half * math.factorial(2 * j),
                math.factorial(half - j) * math.factorial(j) * math.factorial(j - 1)
                * math.factorial(k - j) * math.factorial(2 * j - k),
            )
        out.append(acc * (-1) ** (k + half))
    return tuple(out)


def stehfest_weights(order: int) -> np.ndarray:
    return np.array([float(v) for v in _stehfest_exact(order)])


def gaver_stehfest(F, x, order: int = DOUBLE_ORDER):
    """f(x) ~ (ln 2 / x) sum_k V_k F(k ln 2 / x) in double precision.

    ``F`` must accept an ndarray of transform arguments.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(~(x > 0)):
        raise DomainError("inversion points must be positive")
    V = stehfest_weights(order)
    k = np.arange(1, order + 1)
    a = math.log(2.0) / x
    s = a[:, None] * k[None, :]
    vals = np.asarray(F(s.ravel()), dtype=float).reshape(s.shape)
    return a * (vals @ V)


def gaver_stehfest_mp(F, x: float, order: int = MP_ORDER, dps: int | None = None):
    """Multiprecision Gaver-Stehfest; ``F`` takes and returns mpmath numbers."""
    if not x > 0:
        raise DomainError("inversion points must be positive")
    dps = dps or int(1.6 * order) + 5
    V = _stehfest_exact(order)
    with mpmath.workdps(dps):
        a = mpmath.log(2) / mpmath.mpf(x)
        total = mpmath.fsum(mpmath.mpf(v.numerator) / v.denominator * F(k * a)
                            for k, v in enumerate(V, start=1))
        return float(a * total)


@dataclass
class MeasureView:
    """nu_t seen through its exponent, with cached number and mass."""

    flow: ExponentFlow
    t: float
    inversion_order: int | None = None
    total: float = field(init=False)
    first_moment: float = field(init=False)

    def __post_init__(self):
        if not self.t > 0:
            raise DomainError("t must be positive")
        if self.inversion_order is None:
            self.inversion_order = MP_ORDER if self.multiprecision else DOUBLE_ORDER
        if self.inversion_order % 2:
            raise DomainError("inversion order must be even")
        self.total = float(self.flow.total_number(self.t))
        if math.isinf(self.flow.initial.first_moment()):
            self.first_moment = math.inf
        else:
            self.first_moment = float(mass_at_zero(self.flow, self.t))

    @property
    def multiprecision(self) -> bool:
        return bool(getattr(self.flow.backend, "has_mp", False))

    def mass_transform(self, q):
        """dq phi(t, q) / q, the Laplace transform of M."""
        q = np.asarray(q, dtype=float)
        return self.flow.dq_phi(self.t, q) / q

    def _invert(self, x, order):
        if self.multiprecision and order > DOUBLE_ORDER:
            def F(s):
                return self.flow.mp_dq_phi(self.t, s) / s
            return np.array([gaver_stehfest_mp(F, xi, order) for xi in np.atleast_1d(x)])
        return gaver_stehfest(self.mass_transform, x, order)


def number_and_mass(view: MeasureView):
    """(total number, first moment) of nu_t."""
    return view.total, view.first_moment


@dataclass(frozen=True)
class MassPoint:
    x: float
    mass_cdf: float
    flag: str


def invert_mass_cdf(view: MeasureView, x_grid):
    """M(x) at each grid point with a flag ``ok`` or ``unstable``.

    A point is unstable when the inversions at orders N and N-2 differ by more
    than 1e-4 relative to the first moment (or to |M| if that is infinite).
    """
    x = np.atleast_1d(np.asarray(x_grid, dtype=float))
    if np.any(~(x > 0)):
        raise DomainError("x_grid must be positive")
    order = view.inversion_order
    main = view._invert(x, order)
    check = view._invert(x, order - 2)
    scale = view.first_moment if math.isfinite(view.first_moment) else np.maximum(np.abs(main), 1e-300)
    unstable = np.abs(main - check) > INSTABILITY_REL * scale
    return [MassPoint(float(a), float(m), "unstable" if u else "ok")
            for a, m, u in zip(x, main, unstable)]


@dataclass(frozen=True)
class TailEstimate:
    rho: float
    rho_transform: float
    rho_mass: float
    spread: float
    verdict: str


def tail_index(view: MeasureView, x_decades=None, q_window=(1e-8, 1e-6)) -> TailEstimate:
    """Index rho of the mass distribution, M(x) ~ x^(1-rho) L(x).

    Primary estimator: 1 + slope of log dq phi against log q as q -> 0.
    Cross-check: 1 - slope of log M against log x over the last decade of
    ``x_decades`` (which must span at least 4 decades).
    """
    q = np.logspace(math.log10(q_window[0]), math.log10(q_window[1]), 9)
    d = np.asarray(view.flow.dq_phi(view.t, q), dtype=float)
    slope_q = np.polyfit(np.log(q), np.log(d), 1)[0]
    rho_t = 1.0 + slope_q
    if x_decades is None:
        x_decades = view.t * np.logspace(0.0, 5.0, 11)
    x = np.asarray(x_decades, dtype=float)
    if math.log10(x.max() / x.min()) < 4.0 - 1e-9:
        raise DomainError("x_decades must span at least 4 decades")
    top = x[x >= x.max() / 10.0]
    if len(top) < 2:
        top = np.array([x.max() / 10.0, x.max()])
    m = np.array([p.mass_cdf for p in invert_mass_cdf(view, top)])
    slope_x = np.polyfit(np.log(top), np.log(np.maximum(m, 1e-300)), 1)[0]
    rho_x = 1.0 - slope_x
    spread = abs(rho_t - rho_x)
    rho = min(max(rho_t, 1e-12), 1.0)
    verdict = "ok" if spread <= 0.05 else "inconclusive"
    return TailEstimate(float(rho), float(rho_t), float(rho_x), float(spread), verdict)
