"""Small numerical helpers shared by several modules."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

EPS = np.finfo(float).eps


@lru_cache(maxsize=None)
def gauss_legendre(n: int = 16):
    nodes, weights = np.polynomial.legendre.leggauss(n)
    return nodes, weights


def integrate_log(f, lo, hi, panels: int = 1, order: int = 16):
    """Integrate ``f(u) du`` over ``[lo, hi]`` through the substitution u = exp(v).

    ``lo`` and ``hi`` are broadcast arrays of positive endpoints; each interval
    is split into ``panels`` equal pieces in log-space with a Gauss-Legendre
    rule on each. ``f`` must accept an ndarray.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    lo, hi = np.broadcast_arrays(lo, hi)
    x, w = gauss_legendre(order)
    a = np.log(lo)[..., None]
    b = np.log(hi)[..., None]
    width = (b - a) / panels
    edges = a + width * np.arange(panels)
    mid = edges + 0.5 * width
    v = mid[..., None] + 0.5 * width[..., None] * x
    u = np.exp(v)
    vals = f(u) * u
    return np.sum(vals * w, axis=(-1, -2)) * 0.5 * width[..., 0]


def divided_differences(x, y, order: int):
    """Divided differences of ``order`` on consecutive windows of the nodes ``x``."""
    x = np.asarray(x, dtype=float)
    d = np.asarray(y, dtype=float).copy()
    for k in range(1, order + 1):
        d = (d[1:] - d[:-1]) / (x[k:] - x[:-k])
    return d


def divided_difference_floor(x, y, order: int, noise: float):
    """Rounding floor of each windowed divided difference given relative noise in ``y``."""
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    out = []
    for i in range(len(x) - order):
        xs = x[i:i + order + 1]
        tot = 0.0
        for j in range(order + 1):
            denom = np.prod(np.abs(xs[j] - np.delete(xs, j)))
            tot += y[i + j] / denom
        out.append(noise * tot)
    return np.array(out)


@dataclass
class SignCheck:
    """Outcome of an alternating-sign test on divided differences."""

    checked: int = 0
    skipped: int = 0
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def alternating_signs(x, y, max_order: int, sign_of_order, noise: float = 1e-15,
                      guard: float = 10.0) -> SignCheck:
    """Check that divided differences of order k carry ``sign_of_order(k)``.

    Differences whose magnitude does not exceed ``guard`` times the estimated
    rounding floor are counted as skipped, never as violations.
    """
    res = SignCheck()
    for k in range(1, max_order + 1):
        dd = divided_differences(x, y, k)
        floor = divided_difference_floor(x, y, k, max(noise, EPS))
        want = sign_of_order(k)
        for i, (val, fl) in enumerate(zip(dd, floor)):
            if abs(val) <= guard * fl:
                res.skipped += 1
                continue
            res.checked += 1
            if np.sign(val) != want:
                res.violations.append((k, i, float(val), float(fl)))
    return res


def bernstein_signs(x, y, max_order: int = 6, noise: float = 1e-15) -> SignCheck:
    """Divided-difference test of the Bernstein property: order k has sign (-1)^(k+1)."""
    return alternating_signs(x, y, max_order, lambda k: (-1.0) ** (k + 1), noise)


def aitken_limit(values) -> float:
    """Limit of a sequence by repeated Aitken delta-squared extrapolation.

    Works for errors behaving like c*h^p with unknown p along a geometric
    sequence of h. Falls back to the last value when the differences vanish.
    """
    v = [float(a) for a in values]
    while len(v) >= 3:
        nxt = []
        for a, b, c in zip(v, v[1:], v[2:]):
            den = (c - b) - (b - a)
            if den == 0.0 or abs(c - b) <= 4 * EPS * max(abs(c), 1e-300):
                nxt.append(c)
            else:
                nxt.append(c - (c - b) ** 2 / den)
        if len(nxt) < 3:
            return nxt[-1]
        v = nxt
    return v[-1]
