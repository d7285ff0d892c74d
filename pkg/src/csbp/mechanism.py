"""Branching mechanisms and their Levy-Khintchine data.

A mechanism is

    Psi(u) = alpha*u + beta*u**2 + int_0^inf (exp(-u*x) - 1 + u*x) pi(dx)

with ``pi`` a finite sum of jump components. Every component has closed-form
derivatives of all orders so that rates and index estimates never rely on
finite differencing.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import Sequence, Union

import jsonschema
import mpmath
import numpy as np
from scipy.special import gamma as gamma_fn

from . import _numerics
from .errors import ConvergenceError, DomainError, TermBudgetError

_SMALL_Z = 0.5
_SERIES_TERMS = 60


def _falling(g: float, k: int) -> float:
    out = 1.0
    for j in range(k):
        out *= g - j
    return out


def _compensator(z):
    """exp(-z) - 1 + z without cancellation for small z."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = z < _SMALL_Z
    zs = z[small]
    # Horner on sum_{n>=2} (-z)^n / n!
    acc = np.zeros_like(zs)
    coef = [(-1.0) ** n / math.factorial(n) for n in range(23)]
    for n in range(22, 1, -1):
        acc = acc * zs + coef[n]
    out[small] = acc * zs * zs
    zb = z[~small]
    out[~small] = np.expm1(-zb) + zb
    return out


@dataclass(frozen=True)
class Atomic:
    """Finitely many atoms ``(location, weight)``."""

    atoms: tuple

    def __post_init__(self):
        atoms = tuple((float(x), float(w)) for x, w in self.atoms)
        if not atoms:
            raise DomainError("atomic measure needs at least one atom")
        for x, w in atoms:
            if not (x > 0 and w > 0 and math.isfinite(x) and math.isfinite(w)):
                raise DomainError(f"atoms must have positive finite location and weight, got {(x, w)}")
        object.__setattr__(self, "atoms", atoms)

    @property
    def locations(self) -> np.ndarray:
        return np.array([a[0] for a in self.atoms])

    @property
    def weights(self) -> np.ndarray:
        return np.array([a[1] for a in self.atoms])

    def psi(self, u):
        u = np.asarray(u, dtype=float)
        out = np.zeros_like(u)
        for x, w in self.atoms:
            out = out + w * _compensator(u * x)
        return out

    def dpsi(self, u, k: int):
        u = np.asarray(u, dtype=float)
        out = np.zeros_like(u)
        for x, w in self.atoms:
            if k == 1:
                out = out - w * x * np.expm1(-u * x)
            else:
                out = out + w * (-x) ** k * np.exp(-u * x)
        return out

    def moment_x_min_x2(self) -> float:
        return sum(w * min(x, x * x) for x, w in self.atoms)

    def to_json(self) -> dict:
        return {"type": "atomic", "atoms": [[x, w] for x, w in self.atoms]}


@dataclass(frozen=True)
class StableDensity:
    """Density ``c * x**(-1-gamma)`` with 1 < gamma < 2, giving Psi = kappa*u**gamma."""

    gamma: float
    c: float

    def __post_init__(self):
        if not 1.0 < self.gamma < 2.0:
            raise DomainError(f"stable index must satisfy 1 < gamma < 2, got {self.gamma}")
        if not self.c > 0:
            raise DomainError(f"stable density constant must be positive, got {self.c}")

    @staticmethod
    def unit_constant(gamma: float) -> float:
        """The c for which the component alone gives Psi(u) = u**gamma."""
        return gamma * (gamma - 1.0) / gamma_fn(2.0 - gamma)

    @classmethod
    def normalized(cls, gamma: float, scale: float = 1.0) -> "StableDensity":
        return cls(gamma, scale * cls.unit_constant(gamma))

    @property
    def kappa(self) -> float:
        # int_0^inf (e^{-x} - 1 + x) x^{-1-g} dx = Gamma(2-g) / (g (g-1))
        return self.c * gamma_fn(2.0 - self.gamma) / (self.gamma * (self.gamma - 1.0))

    def psi(self, u):
        return self.kappa * np.asarray(u, dtype=float) ** self.gamma

    def dpsi(self, u, k: int):
        u = np.asarray(u, dtype=float)
        return self.kappa * _falling(self.gamma, k) * u ** (self.gamma - k)

    def moment_x_min_x2(self) -> float:
        g = self.gamma
        return self.c * (1.0 / (2.0 - g) + 1.0 / (g - 1.0))

    def to_json(self) -> dict:
        return {"type": "stable", "gamma": self.gamma, "c": self.c}


@dataclass(frozen=True)
class TemperedStable:
    """Density ``c * x**(-1-gamma) * exp(-lam*x)`` with 0 <= gamma < 2.

    Psi^(k)(u) = (-1)^k c Gamma(k-gamma) (u+lam)^(gamma-k) for k >= 2, and
    gamma in {0, 1} are handled by their logarithmic closed forms. The sum of
    the gamma=1 and gamma=0 components with c = lam = 1 is u*log(1+u).
    """

    gamma: float
    c: float
    lam: float

    def __post_init__(self):
        if not 0.0 <= self.gamma < 2.0:
            raise DomainError(f"tempered index must satisfy 0 <= gamma < 2, got {self.gamma}")
        if not (self.c > 0 and self.lam > 0):
            raise DomainError("tempered density needs c > 0 and lam > 0")

    def _series_coeffs(self):
        g = self.gamma
        a = [0.0, 0.0, math.gamma(2.0 - g) / 2.0]
        for k in range(2, _SERIES_TERMS):
            a.append(-a[k] * (k - g) / (k + 1))
        return a

    def psi(self, u):
        u = np.asarray(u, dtype=float)
        g, c, lam = self.gamma, self.c, self.lam
        v = u / lam
        out = np.empty_like(v)
        small = v < _SMALL_Z
        vs = v[small]
        a = self._series_coeffs()
        acc = np.zeros_like(vs)
        for k in range(len(a) - 1, 1, -1):
            acc = acc * vs + a[k]
        out[small] = c * lam ** g * acc * vs * vs
        vb = v[~small]
        if g == 1.0:
            big = c * lam * ((1.0 + vb) * np.log1p(vb) - vb)
        elif g == 0.0:
            big = c * (vb - np.log1p(vb))
        else:
            big = c * gamma_fn(-g) * lam ** g * ((1.0 + vb) ** g - 1.0 - g * vb)
        out[~small] = big
        return out

    def dpsi(self, u, k: int):
        u = np.asarray(u, dtype=float)
        g, c, lam = self.gamma, self.c, self.lam
        if k >= 2:
            return (-1.0) ** k * c * math.gamma(k - g) * (u + lam) ** (g - k)
        v = u / lam
        out = np.empty_like(v)
        small = v < _SMALL_Z
        vs = v[small]
        a = self._series_coeffs()
        # d/dv sum a_k v^k = sum k a_k v^(k-1)
        acc = np.zeros_like(vs)
        for j in range(len(a) - 1, 1, -1):
            acc = acc * vs + j * a[j]
        out[small] = c * lam ** (g - 1.0) * acc * vs
        vb = v[~small]
        if g == 1.0:
            big = c * np.log1p(vb)
        elif g == 0.0:
            big = c * vb / (lam * (1.0 + vb))
        else:
            big = c * gamma_fn(-g) * g * lam ** (g - 1.0) * ((1.0 + vb) ** (g - 1.0) - 1.0)
        out[~small] = big
        return out

    def moment_x_min_x2(self) -> float:
        g, c, lam = self.gamma, self.c, self.lam
        near = lam ** (g - 2.0) * mpmath.gammainc(2.0 - g, 0, lam)
        far = lam ** (g - 1.0) * mpmath.gammainc(1.0 - g, lam)
        return float(c * (near + far))

    def to_json(self) -> dict:
        return {"type": "tempered", "gamma": self.gamma, "c": self.c, "lambda": self.lam}


JumpMeasure = Union[Atomic, StableDensity, TemperedStable]


class Criticality(str, enum.Enum):
    CRITICAL = "critical"
    SUBCRITICAL = "subcritical"
    SUPERCRITICAL = "supercritical"


@dataclass(frozen=True)
class BranchingMechanism:
    """Drift ``alpha``, diffusion ``beta`` and jump components ``pi``.

    ``pi`` is a tuple of components whose sum is the branching measure; the
    empty tuple means no jumps.
    """

    alpha: float = 0.0
    beta: float = 0.0
    pi: tuple = field(default_factory=tuple)

    def __post_init__(self):
        pi = self.pi
        if pi is None:
            pi = ()
        elif isinstance(pi, (Atomic, StableDensity, TemperedStable)):
            pi = (pi,)
        pi = tuple(pi)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", float(self.beta))
        if not (math.isfinite(self.alpha) and math.isfinite(self.beta)):
            raise DomainError("alpha and beta must be finite")
        if self.beta < 0:
            raise DomainError(f"beta must be nonnegative, got {self.beta}")
        if self.alpha == 0.0 and self.beta == 0.0 and not pi:
            raise DomainError("(alpha, beta, pi) = (0, 0, None) is not a branching mechanism")

    # -- constructors -----------------------------------------------------
    @classmethod
    def power(cls, gamma: float, beta: float = 1.0) -> "BranchingMechanism":
        """Psi(u) = beta * u**gamma for 1 < gamma <= 2."""
        if gamma == 2.0:
            return cls(0.0, beta)
        return cls(0.0, 0.0, (StableDensity.normalized(gamma, beta),))

    @classmethod
    def feller(cls, beta: float = 1.0) -> "BranchingMechanism":
        return cls(0.0, beta)

    # -- metadata ---------------------------------------------------------
    @property
    def criticality(self) -> Criticality:
        if self.alpha == 0.0:
            return Criticality.CRITICAL
        return Criticality.SUBCRITICAL if self.alpha > 0 else Criticality.SUPERCRITICAL

    @property
    def is_critical(self) -> bool:
        return self.alpha == 0.0

    def power_law(self):
        """``(kappa, gamma)`` when Psi(u) = kappa*u**gamma exactly, else None."""
        if self.alpha != 0.0:
            return None
        if not self.pi:
            return (self.beta, 2.0)
        if self.beta == 0.0 and all(isinstance(p, StableDensity) for p in self.pi):
            gammas = {p.gamma for p in self.pi}
            if len(gammas) == 1:
                return (sum(p.kappa for p in self.pi), gammas.pop())
        return None

    def moment_x_min_x2(self) -> float:
        return sum(p.moment_x_min_x2() for p in self.pi)

    # -- evaluation without domain checks (u >= 0 allowed) ----------------
    def psi(self, u):
        u = np.asarray(u, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            out = self.alpha * u + self.beta * u * u
            for p in self.pi:
                out = out + p.psi(u)
        return out

    def dpsi(self, u, k: int = 1):
        u = np.asarray(u, dtype=float)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            if k == 1:
                out = self.alpha + 2.0 * self.beta * u
            elif k == 2:
                out = np.full_like(u, 2.0 * self.beta)
            else:
                out = np.zeros_like(u)
            for p in self.pi:
                out = out + p.dpsi(u, k)
        return out

    def psi_dpsi(self, u):
        """(Psi(u), Psi'(u)) sharing the expensive transcendental evaluations."""
        u = np.asarray(u, dtype=float)
        val = self.alpha * u + self.beta * u * u
        der = self.alpha + 2.0 * self.beta * u
        for p in self.pi:
            if isinstance(p, StableDensity):
                pw = p.kappa * u ** p.gamma
                val = val + pw
                der = der + p.gamma * pw / u
            elif isinstance(p, Atomic):
                z = u[..., None] * p.locations
                em = np.expm1(-z)
                # e^{-z} - 1 + z: short Taylor series where the difference cancels
                g = np.where(z < 1e-2, z * z * (0.5 - z * (1.0 / 6.0 - z * (1.0 / 24.0 - z * (1.0 / 120.0 - z * (1.0 / 720.0 - z / 5040.0))))), em + z)
                val = val + g @ p.weights
                der = der - em @ (p.weights * p.locations)
            else:
                val = val + p.psi(u)
                der = der + p.dpsi(u, 1)
        return val, der

    def to_json(self) -> dict:
        if not self.pi:
            pi = None
        elif len(self.pi) == 1:
            pi = self.pi[0].to_json()
        else:
            pi = [p.to_json() for p in self.pi]
        return {"alpha": self.alpha, "beta": self.beta, "pi": pi}


def _check_positive(u, name="u"):
    arr = np.asarray(u, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError(f"{name} must be positive")
    return arr


def _scalar_or_array(val, like):
    return float(val) if np.ndim(like) == 0 else val


def psi_eval(mech: BranchingMechanism, u):
    """Psi(u) for u > 0."""
    arr = _check_positive(u)
    return _scalar_or_array(mech.psi(arr), u)


def psi_derivative(mech: BranchingMechanism, u, order: int):
    """Exact Psi^(order)(u) for u > 0 and order >= 1."""
    if int(order) != order or order < 1:
        raise DomainError(f"order must be an integer >= 1, got {order}")
    arr = _check_positive(u)
    return _scalar_or_array(mech.dpsi(arr, int(order)), u)


def rate_Rk(mech: BranchingMechanism, rho, k: int):
    """Coagulation rate (-rho)^k Psi^(k)(rho) / k! for k >= 2."""
    if int(k) != k or k < 2:
        raise DomainError(f"k must be an integer >= 2, got {k}")
    arr = _check_positive(rho, "rho")
    k = int(k)
    val = (-arr) ** k * mech.dpsi(arr, k) / math.factorial(k)
    return _scalar_or_array(val, rho)


def moment_functional_Ik(nu, f, k: int, budget: int = 10**7) -> float:
    """Expected change of <nu, f> when k clusters drawn from nu/<nu,1> merge.

    ``nu`` is an :class:`Atomic` measure or a sequence of ``(x, w)`` pairs.
    The k-fold sum is enumerated exactly, so ``len(atoms)**k`` must stay
    within ``budget``.
    """
    if int(k) != k or k < 2:
        raise DomainError(f"k must be an integer >= 2, got {k}")
    k = int(k)
    atoms = nu if isinstance(nu, Atomic) else Atomic(tuple(nu))
    xs, ws = atoms.locations, atoms.weights
    mass = ws.sum()
    if len(xs) ** k > budget:
        raise TermBudgetError(f"{len(xs)}**{k} terms exceed the budget of {budget}")
    probs = ws / mass
    fv = np.vectorize(f, otypes=[float])
    sums = np.zeros(1)
    wts = np.ones(1)
    for _ in range(k):
        sums = (sums[:, None] + xs[None, :]).ravel()
        wts = (wts[:, None] * probs[None, :]).ravel()
    merged = float(np.dot(wts, fv(sums)))
    single = float(np.dot(probs, fv(xs)))
    return merged - k * single


def moment_functional_Ik_bruteforce(nu, f, k: int) -> float:
    """Literal k-fold sum of the definition; used as a test oracle."""
    atoms = nu if isinstance(nu, Atomic) else Atomic(tuple(nu))
    mass = sum(w for _, w in atoms.atoms)
    total = 0.0
    for combo in product(atoms.atoms, repeat=k):
        w = 1.0
        for _, wi in combo:
            w *= wi / mass
        xs = [x for x, _ in combo]
        total += w * (f(sum(xs)) - sum(f(x) for x in xs))
    return total


def bound_K(mech: BranchingMechanism, m):
    """3*beta*m^2 + 2*m*Psi'(m) - Psi(m), the operator-norm bound of the coagulation term."""
    if not mech.is_critical:
        raise DomainError("bound_K is defined for critical mechanisms")
    arr = _check_positive(m, "m")
    val = 3.0 * mech.beta * arr ** 2 + 2.0 * arr * mech.dpsi(arr, 1) - mech.psi(arr)
    return _scalar_or_array(val, m)


class GreyVerdict(str, enum.Enum):
    HOLDS = "holds"
    FAILS = "fails"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class GreyResult:
    verdict: GreyVerdict
    integral: float | None
    decades: int

    def __str__(self):
        return self.verdict.value


def greys_check(mech: BranchingMechanism, a: float = 1.0, quad_tol: float = 1e-10,
                max_decades: int = 300, min_decades: int = 12) -> GreyResult:
    """Three-valued numerical test of Grey's condition.

    The integral of 1/Psi over [a, inf) is accumulated decade by decade.
    HOLDS when the decade sums decay geometrically and the extrapolated
    remainder is below ``quad_tol`` relative to the partial sum. FAILS when
    j*D_j does not decay between j = J/2 and j = J, i.e. the sums fall off no
    faster than the harmonic series. Anything else is INCONCLUSIVE.
    """
    if mech.criticality is Criticality.SUPERCRITICAL:
        raise DomainError("greys_check requires a critical or subcritical mechanism")
    if not a > 0:
        raise DomainError("a must be positive")
    return _greys_cached(mech, float(a), float(quad_tol), int(max_decades), int(min_decades))


@lru_cache(maxsize=256)
def _greys_cached(mech, a, quad_tol, max_decades, min_decades):
    def inv_psi(u):
        with np.errstate(divide="ignore", over="ignore"):
            return 1.0 / mech.psi(u)

    sums = []
    partial = 0.0
    chunk = 16
    for start in range(0, max_decades, chunk):
        j = np.arange(start, min(start + chunk, max_decades))
        lo = a * 10.0 ** j
        hi = a * 10.0 ** (j + 1)
        d = _numerics.integrate_log(inv_psi, lo, hi, panels=4)
        for dj in d:
            sums.append(float(dj))
            partial += float(dj)
            J = len(sums)
            if J < min_decades:
                continue
            if sums[-1] == 0.0:
                return GreyResult(GreyVerdict.HOLDS, partial, J)
            window = sums[-min_decades:]
            ratios = [b / c for c, b in zip(window[:-1], window[1:]) if c > 0]
            r = max(ratios) if ratios else 1.0
            if r < 1.0:
                tail = sums[-1] * r / (1.0 - r)
                if tail <= quad_tol * partial:
                    return GreyResult(GreyVerdict.HOLDS, partial + tail, J)
            if J >= 2 * min_decades and J % min_decades == 0:
                half = J // 2
                if J * sums[J - 1] >= 0.9 * half * sums[half - 1]:
                    return GreyResult(GreyVerdict.FAILS, None, J)
    return GreyResult(GreyVerdict.INCONCLUSIVE, None, len(sums))


def index_statistic(mech: BranchingMechanism, u):
    """u * Psi'(u) / Psi(u)."""
    u = np.asarray(u, dtype=float)
    return u * mech.dpsi(u, 1) / mech.psi(u)


def rv_index_estimate(mech: BranchingMechanism, u_grid=None, tol: float = 1e-3) -> float:
    """Index of regular variation of Psi at 0 from the log-derivative statistic.

    The statistic is evaluated at the smallest grid point and one and two
    decades above it; its remaining drift is removed by geometric
    (Richardson-type) extrapolation with the decay rate estimated from the
    two decade differences. The same extrapolation one decade higher must
    agree within ``tol``, otherwise :class:`ConvergenceError` is raised.
    """
    if u_grid is None:
        u_grid = np.logspace(0.0, -8.0, 33)
    u_grid = np.asarray(u_grid, dtype=float)
    if np.any(u_grid <= 0) or np.any(np.diff(u_grid) >= 0):
        raise DomainError("u_grid must be strictly decreasing positive values")
    if math.log10(u_grid[0] / u_grid[-1]) < 6.0 - 1e-12:
        raise DomainError("u_grid must span at least 6 decades")
    base = u_grid[-1]

    def extrapolate(u0):
        g0, g1, g2 = index_statistic(mech, np.array([u0, 10 * u0, 100 * u0]))
        d1, d2 = g1 - g0, g2 - g1
        if abs(d1) <= 1e-13 * max(abs(g0), 1.0):
            return float(g0)
        r = d1 / d2 if d2 != 0 else 0.0
        if 0.0 < r < 1.0:
            return float(g0 - d1 * r / (1.0 - r))
        return float(g0)

    est = extrapolate(base)
    prev = extrapolate(10 * base)
    if abs(est - prev) > tol:
        raise ConvergenceError(
            f"index estimate not settled: {est:.6g} vs {prev:.6g} one decade higher")
    return est


def derivative_bernstein_check(mech: BranchingMechanism, u0: float = 1e-3, n: int = 24,
                               max_order: int = 6):
    """Finite-order check that Psi' is Bernstein, i.e. Psi'' completely monotone.

    Divided differences of Psi' of order k on a ratio-2 geometric grid must
    carry the sign (-1)^(k+1).
    """
    u = u0 * 2.0 ** np.arange(n)
    return _numerics.bernstein_signs(u, mech.dpsi(u, 1), max_order)


# -- JSON I/O -------------------------------------------------------------

_COMPONENT_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "properties": {
                "type": {"const": "atomic"},
                "atoms": {
                    "type": "array", "minItems": 1,
                    "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                },
            },
            "required": ["type", "atoms"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "type": {"const": "stable"},
                "gamma": {"type": "number"},
                "c": {"oneOf": [{"type": "number"}, {"const": "auto"}]},
            },
            "required": ["type", "gamma", "c"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "type": {"const": "tempered"},
                "gamma": {"type": "number"},
                "c": {"type": "number"},
                "lambda": {"type": "number"},
            },
            "required": ["type", "gamma", "c", "lambda"],
            "additionalProperties": False,
        },
    ]
}

MECHANISM_SCHEMA = {
    "type": "object",
    "properties": {
        "alpha": {"type": "number"},
        "beta": {"type": "number"},
        "pi": {"oneOf": [{"type": "null"}, _COMPONENT_SCHEMA,
                         {"type": "array", "items": _COMPONENT_SCHEMA}]},
    },
    "required": ["alpha", "beta", "pi"],
    "additionalProperties": False,
}


def _component_from_json(obj) -> JumpMeasure:
    kind = obj["type"]
    if kind == "atomic":
        return Atomic(tuple(tuple(a) for a in obj["atoms"]))
    if kind == "stable":
        c = obj["c"]
        if c == "auto":
            return StableDensity.normalized(obj["gamma"])
        return StableDensity(obj["gamma"], c)
    return TemperedStable(obj["gamma"], obj["c"], obj["lambda"])


def mechanism_from_json(obj) -> BranchingMechanism:
    """Build a mechanism from its JSON object; raises ValueError on malformed input."""
    try:
        jsonschema.validate(obj, MECHANISM_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ValueError(f"invalid mechanism specification: {exc.message}") from None
    pi = obj["pi"]
    if pi is None:
        comps = ()
    elif isinstance(pi, list):
        comps = tuple(_component_from_json(p) for p in pi)
    else:
        comps = (_component_from_json(pi),)
    return BranchingMechanism(obj["alpha"], obj["beta"], comps)


def load_mechanism(path) -> BranchingMechanism:
    with open(path) as fh:
        return mechanism_from_json(json.load(fh))


def rates_table(mech: BranchingMechanism, rhos: Sequence[float] = (0.1, 1.0, 10.0),
                ks: Sequence[int] = (2, 3, 4, 5)):
    return [{"rho": float(r), "k": int(k), "R_k": float(rate_Rk(mech, r, k))}
            for r in rhos for k in ks]
