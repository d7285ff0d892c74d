"""Laplace-exponent flows of critical CSBPs.

The flow Phi(t, q) solves  d/dt Phi = -Psi(Phi),  Phi(0, q) = q.  Two
independent solvers are provided:

* the exact representation Phi(t, q) = eta(t + zeta(q)) where
  zeta(tau) = int_tau^inf du / Psi(u) and eta is its inverse, and
* the implicit Euler scheme  u_{n+1} + h Psi(u_{n+1}) = u_n, whose every step
  is itself a Bernstein function of the previous iterate.

Weak solutions are obtained by composing a flow with an initial exponent,
phi(t, q) = Phi(t, phi0(q)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import mpmath
import numpy as np

from . import _numerics
from .errors import ConvergenceError, DomainError, NotGreyError, OutOfTableRange
from .gml import SelfSimilarFamily
from .mechanism import Atomic, BranchingMechanism, GreyVerdict, greys_check

TAU_MIN = 1e-8
TAU_MAX = 1e8
NODES_PER_DECADE = 8


def _as_array(x):
    return np.asarray(x, dtype=float)


def _ret(val, *likes):
    return float(val) if all(np.ndim(v) == 0 for v in likes) else val


# -- zeta / eta ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ZetaEta:
    """Tabulated zeta(tau) = int_tau^inf du/Psi(u) on [TAU_MIN, TAU_MAX].

    Between nodes zeta is evaluated by a local Gauss-Legendre rule, not by
    interpolation, so the table only fixes the additive constants.
    """

    mech: BranchingMechanism
    quad_tol: float
    tau: np.ndarray = field(repr=False)
    zeta_nodes: np.ndarray = field(repr=False)
    tail: float = 0.0

    # ζ ------------------------------------------------------------------
    def _segment(self, lo, hi):
        def inv(u):
            return 1.0 / self.mech.psi(u)
        return _numerics.integrate_log(inv, lo, hi, panels=1, order=16)

    def zeta(self, tau):
        tau_a = _as_array(tau)
        if np.any(~(tau_a > 0)):
            raise DomainError("tau must be positive")
        pl = self.mech.power_law()
        out = np.empty_like(tau_a)
        inside = (tau_a >= TAU_MIN) & (tau_a <= TAU_MAX)
        if np.any(~inside):
            if pl is None:
                raise OutOfTableRange(f"tau outside [{TAU_MIN:g}, {TAU_MAX:g}]")
            kappa, g = pl
            out[~inside] = tau_a[~inside] ** (1.0 - g) / (kappa * (g - 1.0))
        if np.any(inside):
            ti = tau_a[inside]
            idx = np.clip(np.searchsorted(self.tau, ti, side="right"), 1, len(self.tau) - 1)
            right = self.tau[idx]
            out[inside] = self.zeta_nodes[idx] + self._segment(ti, right)
        return _ret(out, tau)

    # η ------------------------------------------------------------------
    @property
    def t_range(self):
        return float(self.zeta_nodes[-1]), float(self.zeta_nodes[0])

    def eta(self, t):
        t_a = _as_array(t)
        if np.any(~(t_a > 0)):
            raise DomainError("t must be positive")
        lo_t, hi_t = self.t_range
        out = np.empty_like(t_a)
        inside = (t_a >= lo_t) & (t_a <= hi_t)
        if np.any(~inside):
            pl = self.mech.power_law()
            if pl is None:
                raise OutOfTableRange(
                    f"t outside [{lo_t:.6g}, {hi_t:.6g}] covered by the zeta table")
            kappa, g = pl
            out[~inside] = ((g - 1.0) * kappa * t_a[~inside]) ** (1.0 / (1.0 - g))
        if np.any(inside):
            out[inside] = self._eta_inside(t_a[inside])
        return _ret(out, t)

    def _eta_inside(self, t):
        lz = np.log(self.zeta_nodes)
        lt = np.log(self.tau)
        # zeta decreases: search on the reversed arrays
        target = np.log(t)
        j = np.searchsorted(-lz, -target, side="left")
        j = np.clip(j, 1, len(lz) - 1)
        a_lo, a_hi = lt[j - 1], lt[j]
        z_lo, z_hi = lz[j - 1], lz[j]
        frac = np.where(z_hi != z_lo, (target - z_lo) / (z_hi - z_lo), 0.5)
        v = a_lo + frac * (a_hi - a_lo)
        lo, hi = a_lo.copy(), a_hi.copy()
        for _ in range(100):
            tau = np.exp(v)
            z = self.zeta(tau)
            f = np.log(z) - target
            # f is decreasing in v; maintain the bracket
            lo = np.where(f > 0, v, lo)
            hi = np.where(f <= 0, v, hi)
            dfdv = -tau / (self.mech.psi(tau) * z)
            step = f / dfdv
            v_new = v - step
            bad = (v_new <= lo) | (v_new >= hi) | ~np.isfinite(v_new)
            v_new = np.where(bad, 0.5 * (lo + hi), v_new)
            done = np.abs(v_new - v) <= 1e-15 * np.maximum(1.0, np.abs(v))
            v = v_new
            if np.all(done):
                break
        return np.exp(v)

    def psi(self, u):
        return self.mech.psi(u)


def build_zeta(mech: BranchingMechanism, quad_tol: float = 1e-10) -> ZetaEta:
    """Tabulate zeta for a critical mechanism satisfying Grey's condition."""
    if not mech.is_critical:
        raise DomainError("build_zeta requires a critical mechanism")
    grey = greys_check(mech, a=TAU_MAX, quad_tol=quad_tol)
    if grey.verdict is not GreyVerdict.HOLDS:
        raise NotGreyError(f"Grey's condition is {grey.verdict.value}; zeta is not finite")
    pl = mech.power_law()
    if pl is not None:
        kappa, g = pl
        tail = TAU_MAX ** (1.0 - g) / (kappa * (g - 1.0))
    else:
        tail = grey.integral
    n = int(round(math.log10(TAU_MAX / TAU_MIN) * NODES_PER_DECADE)) + 1
    tau = np.logspace(math.log10(TAU_MIN), math.log10(TAU_MAX), n)
    inv = lambda u: 1.0 / mech.psi(u)  # noqa: E731
    seg = _numerics.integrate_log(inv, tau[:-1], tau[1:], panels=1, order=16)
    zeta = np.empty(n)
    zeta[-1] = tail
    zeta[:-1] = tail + np.cumsum(seg[::-1])[::-1]
    return ZetaEta(mech, float(quad_tol), tau, zeta, float(tail))


def eta_eval(ze: ZetaEta, t):
    return ze.eta(t)


def phi_closed(ze: ZetaEta, t, q):
    """Phi(t, q) = eta(t + zeta(q)); q may be +inf, giving eta(t)."""
    t_a, q_a = np.broadcast_arrays(_as_array(t), _as_array(q))
    if np.any(t_a < 0) or np.any(~(q_a > 0)):
        raise DomainError("need t >= 0 and q > 0")
    out = np.array(q_a, dtype=float, copy=True)
    finite_q = np.isfinite(q_a)
    move = t_a > 0
    m1 = move & finite_q
    if np.any(m1):
        out[m1] = ze.eta(t_a[m1] + ze.zeta(q_a[m1]))
    m2 = move & ~finite_q
    if np.any(m2):
        out[m2] = ze.eta(t_a[m2])
    return _ret(out, t, q)


def dq_ratio(mech: BranchingMechanism, phi, q):
    """Psi(Phi)/Psi(q): the closed value of dq Phi along the flow."""
    return mech.psi(_as_array(phi)) / mech.psi(_as_array(q))


def dq_quadrature(mech: BranchingMechanism, phi, q, panels_per_decade: int = 2):
    """exp(-int_Phi^q Psi'(u)/Psi(u) du), i.e. exp(-int_0^t Psi'(Phi(s,q)) ds) after u = Phi(s,q)."""
    phi = np.atleast_1d(_as_array(phi))
    q = np.atleast_1d(_as_array(q))
    phi, q = np.broadcast_arrays(phi, q)
    out = np.ones(phi.shape)
    for i, (a, b) in enumerate(zip(phi.ravel(), q.ravel())):
        if b <= a:
            continue
        panels = max(1, int(math.ceil(math.log10(b / a) * panels_per_decade)))
        f = lambda u: mech.dpsi(u, 1) / mech.psi(u)  # noqa: E731
        out.flat[i] = math.exp(-float(_numerics.integrate_log(f, a, b, panels=panels)))
    return out


# -- implicit Euler --------------------------------------------------------

def _euler_step(mech: BranchingMechanism, b, h, max_iter: int = 200):
    """Solve u + h Psi(u) = b for each component (vectorized)."""
    if not mech.pi:
        # quadratic: h beta u^2 + (1 + h alpha) u - b = 0, stable root form
        a1 = 1.0 + h * mech.alpha
        return 2.0 * b / (a1 + np.sqrt(a1 * a1 + 4.0 * h * mech.beta * b))
    val, der = mech.psi_dpsi(b)
    u = b - h * val / (1.0 + h * der)          # one Newton step from the warm start b
    u = np.where((u > 0) & (u <= b), u, 0.5 * b)
    lo = np.zeros_like(b)
    hi = b.copy()
    for _ in range(max_iter):
        val, der = mech.psi_dpsi(u)
        g = u + h * val - b
        lo = np.where(g < 0, u, lo)
        hi = np.where(g >= 0, u, hi)
        step = g / (1.0 + h * der)
        u_new = u - step
        bad = ~((u_new >= lo) & (u_new <= hi)) | ~np.isfinite(u_new)
        u_new = np.where(bad, 0.5 * (lo + hi), u_new)
        if np.all(np.abs(u_new - u) <= 1e-14 * np.abs(u_new)):
            return u_new
        u = u_new
    raise ConvergenceError("implicit Euler inner solve exceeded 200 iterations")


def phi_euler(mech: BranchingMechanism, t, q, N: int, with_derivative: bool = False):
    """N implicit Euler steps of size h = t/N starting from q.

    ``t`` and ``q`` broadcast, so a whole (t, q) grid is advanced in one pass.
    With ``with_derivative`` the exact q-derivative of the discrete scheme,
    prod 1/(1 + h Psi'(u_n)), is returned as well.
    """
    if int(N) != N or N < 1:
        raise DomainError("N must be a positive integer")
    if mech.alpha < 0:
        raise DomainError("the implicit step needs 1 + h Psi' > 0; supercritical mechanisms are excluded")
    t_a, q_a = np.broadcast_arrays(_as_array(t), _as_array(q))
    if np.any(t_a < 0) or np.any(~(q_a > 0)) or np.any(~np.isfinite(q_a)):
        raise DomainError("need t >= 0 and finite q > 0")
    h = t_a / N
    u = q_a.astype(float).copy()
    deriv = np.ones_like(u)
    for _ in range(int(N)):
        u = _euler_step(mech, u, h)
        if with_derivative:
            deriv = deriv / (1.0 + h * mech.dpsi(u, 1))
    if with_derivative:
        return _ret(u, t, q), _ret(deriv, t, q)
    return _ret(u, t, q)


# -- initial exponents -----------------------------------------------------

class IdentityExponent:
    """phi0(q) = q: the fundamental solution."""

    at_infinity = math.inf

    def value(self, q):
        return _as_array(q)

    def derivative(self, q):
        return np.ones_like(_as_array(q))

    def mp_value(self, q):
        return q

    def mp_derivative(self, q):
        return mpmath.mpf(1)

    def first_moment(self):
        return 1.0

    def __repr__(self):
        return "IdentityExponent()"


@dataclass(frozen=True)
class AtomicExponent:
    """phi0(q) = sum w (1 - e^{-qx}) for a finite atomic nu0."""

    nu0: Atomic

    @property
    def at_infinity(self) -> float:
        return float(self.nu0.weights.sum())

    def value(self, q):
        q = _as_array(q)
        out = np.zeros_like(q)
        for x, w in self.nu0.atoms:
            with np.errstate(over="ignore"):
                out = out - w * np.expm1(-q * x)
        return np.where(np.isinf(q), self.at_infinity, out)

    def derivative(self, q):
        q = _as_array(q)
        out = np.zeros_like(q)
        for x, w in self.nu0.atoms:
            out = out + w * x * np.exp(-q * x)
        return out

    def mp_value(self, q):
        return mpmath.fsum(w * -mpmath.expm1(-q * x) for x, w in self.nu0.atoms)

    def mp_derivative(self, q):
        return mpmath.fsum(w * x * mpmath.exp(-q * x) for x, w in self.nu0.atoms)

    def first_moment(self) -> float:
        return float(sum(x * w for x, w in self.nu0.atoms))


@dataclass(frozen=True)
class PowerExponent:
    """phi0(q) = c q^rho with 0 < rho <= 1 (an infinite initial measure when rho < 1)."""

    rho: float
    c: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.rho <= 1.0:
            raise DomainError("rho must lie in (0, 1]")

    at_infinity = math.inf

    def value(self, q):
        return self.c * _as_array(q) ** self.rho

    def derivative(self, q):
        q = _as_array(q)
        return self.c * self.rho * q ** (self.rho - 1.0)

    def mp_value(self, q):
        return self.c * q ** self.rho

    def mp_derivative(self, q):
        return self.c * self.rho * q ** (self.rho - 1)

    def first_moment(self) -> float:
        return self.c if self.rho == 1.0 else math.inf


# -- backends --------------------------------------------------------------

@dataclass(frozen=True)
class ClosedFormBackend:
    """Phi(t, q) = [(gamma-1) beta t + q^(1-gamma)]^(1/(1-gamma)) for Psi = beta u^gamma."""

    family: SelfSimilarFamily
    method: str = "closed"

    def __post_init__(self):
        if self.family.rho != 1.0:
            raise DomainError("a flow needs the rho = 1 member; compose with PowerExponent for rho < 1")

    @classmethod
    def for_mechanism(cls, mech: BranchingMechanism) -> "ClosedFormBackend":
        pl = mech.power_law()
        if pl is None:
            raise DomainError("closed-form flow requires Psi = kappa u^gamma")
        kappa, g = pl
        return cls(SelfSimilarFamily(kappa, g, 1.0))

    @property
    def mech(self) -> BranchingMechanism:
        return BranchingMechanism.power(self.family.gamma, self.family.beta)

    def Phi(self, t, q):
        t_a, q_a = np.broadcast_arrays(_as_array(t), _as_array(q))
        out = np.where(np.isinf(q_a), self.family.alpha(np.where(t_a > 0, t_a, 1.0)), 0.0)
        fin = np.isfinite(q_a)
        out = np.where(fin, self.family.phi(t_a, np.where(fin, q_a, 1.0)), out)
        out = np.where(fin & (t_a == 0), q_a, out)
        return _ret(out, t, q)

    def dPhi(self, t, q):
        phi = _as_array(self.Phi(t, q))
        return _ret((phi / _as_array(q)) ** self.family.gamma, t, q)

    def mp_Phi(self, t, q):
        g = mpmath.mpf(self.family.gamma)
        base = (g - 1) * self.family.beta * t + q ** (1 - g)
        return base ** (1 / (1 - g))

    def mp_dPhi(self, t, q):
        return (self.mp_Phi(t, q) / q) ** mpmath.mpf(self.family.gamma)

    has_mp = True


@dataclass(frozen=True)
class ZetaEtaBackend:
    ze: ZetaEta
    method: str = "closed"
    has_mp = False

    @property
    def mech(self) -> BranchingMechanism:
        return self.ze.mech

    def Phi(self, t, q):
        return phi_closed(self.ze, t, q)

    def dPhi(self, t, q):
        phi = _as_array(self.Phi(t, q))
        t_a, q_a = np.broadcast_arrays(_as_array(t), _as_array(q))
        out = dq_quadrature(self.ze.mech, phi, q_a).reshape(phi.shape)
        return _ret(out, t, q)


@dataclass(frozen=True)
class EulerBackend:
    mech: BranchingMechanism
    N: int
    method: str = "euler"
    has_mp = False

    def Phi(self, t, q):
        if np.any(np.isinf(_as_array(q))):
            raise DomainError("the Euler backend cannot evaluate q = inf")
        return phi_euler(self.mech, t, q, self.N)

    def dPhi(self, t, q):
        return phi_euler(self.mech, t, q, self.N, with_derivative=True)[1]


def backend_for(mech: BranchingMechanism, kind: str = "auto", N: int = 10000, quad_tol: float = 1e-10):
    """Pick a flow backend: closed form for pure powers, the zeta/eta table otherwise."""
    if kind == "euler":
        return EulerBackend(mech, int(N))
    if kind in ("auto", "closed_form") and mech.power_law() is not None:
        return ClosedFormBackend.for_mechanism(mech)
    if kind == "closed_form":
        raise DomainError("closed-form flow requires Psi = kappa u^gamma")
    return ZetaEtaBackend(build_zeta(mech, quad_tol))


@dataclass(frozen=True)
class ExponentFlow:
    """A backend composed with an initial exponent: phi(t, q) = Phi(t, phi0(q))."""

    backend: object
    initial: object = field(default_factory=IdentityExponent)

    @property
    def mech(self) -> BranchingMechanism:
        return self.backend.mech

    @property
    def is_fundamental(self) -> bool:
        return isinstance(self.initial, IdentityExponent)

    def phi(self, t, q):
        q_a = _as_array(q)
        inner = np.where(np.isinf(q_a), self.initial.at_infinity, self.initial.value(np.where(np.isinf(q_a), 1.0, q_a)))
        return _ret(_as_array(self.backend.Phi(t, inner)), t, q)

    def dq_phi(self, t, q):
        q_a = _as_array(q)
        inner = self.initial.value(q_a)
        return _ret(_as_array(self.backend.dPhi(t, inner)) * self.initial.derivative(q_a), t, q)

    def total_number(self, t):
        return self.phi(t, math.inf)

    def mp_dq_phi(self, t, q):
        """Multiprecision dq phi when the backend has a closed form."""
        inner = self.initial.mp_value(q)
        return self.backend.mp_dPhi(t, inner) * self.initial.mp_derivative(q)


def compose_initial(flow_backend, phi0, t, q):
    """phi(t, q) = Phi(t, phi0(q)); q = inf uses phi0(inf)."""
    return ExponentFlow(flow_backend, phi0).phi(t, q)


def total_number(flow: ExponentFlow, t):
    t_a = _as_array(t)
    if np.any(~(t_a > 0)):
        raise DomainError("t must be positive")
    return flow.total_number(t)


def dq_phi(flow: ExponentFlow, t, q):
    t_a, q_a = _as_array(t), _as_array(q)
    if np.any(t_a < 0) or np.any(~(q_a > 0)):
        raise DomainError("need t >= 0 and q > 0")
    return flow.dq_phi(t, q)


def mass_at_zero(flow: ExponentFlow, t: float, q0: float = 1e-3, ratio: float = 4.0, n: int = 9) -> float:
    """dq phi(t, 0+) by repeated Aitken extrapolation along q = q0 / ratio^j."""
    qs = q0 / ratio ** np.arange(n)
    vals = [float(flow.dq_phi(t, qq)) for qq in qs]
    return _numerics.aitken_limit(vals)


def forward_residual(ze, t: float, q: float, rel_step: float = 1e-3) -> float:
    """dt Phi + Psi(q) dq Phi by fourth-order central differences.

    ``ze`` is a :class:`ZetaEta` or any flow backend. The returned residual is
    relative to 1 + |dt Phi|.
    """
    if not (t > 0 and q > 0):
        raise DomainError("need t > 0 and q > 0")
    backend = ZetaEtaBackend(ze) if isinstance(ze, ZetaEta) else ze
    mech = backend.mech
    ht, hq = rel_step * t, rel_step * q

    def d4(f, x, h):
        return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h)

    dt = d4(lambda s: float(backend.Phi(s, q)), t, ht)
    dq = d4(lambda p: float(backend.Phi(t, p)), q, hq)
    res = dt + float(mech.psi(q)) * dq
    return res / (1.0 + abs(dt))
