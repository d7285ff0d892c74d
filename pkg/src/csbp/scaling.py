"""Numerical harness for the large-time scaling limits.

Each check evaluates a rescaled quantity on a growing time grid, measures its
sup-distance to the Mittag-Leffler limit, fits the scaling constants and
turns the error sequence into a three-valued verdict.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import BracketError, DomainError
from .exponent import AtomicExponent, ExponentFlow, IdentityExponent, backend_for
from .gml import MittagLefflerLaw, SelfSimilarFamily, gml_cdf_fast, limit_exponent
from .mechanism import Atomic, BranchingMechanism, rv_index_estimate
from .measures import MeasureView, tail_index
from .simulate import sample_conditional

DEFAULT_S_GRID = (1e2, 1e3, 1e4)
DEFAULT_Q_GRID = tuple(np.logspace(-2.0, 2.0, 9))
KS_THRESHOLD = 0.02


@dataclass
class ScalingReport:
    theorem: str
    grid: list
    q_or_z_grid: list
    sup_error: list
    fitted: dict
    verdict: str
    tol: float
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = asdict(self)
        out["grid"] = [float(v) for v in self.grid]
        out["q_or_z_grid"] = [float(v) for v in self.q_or_z_grid]
        out["sup_error"] = [float(v) for v in self.sup_error]
        return out


def _decreasing(errors, floor: float = 1e-10) -> bool:
    """Non-increasing along the grid, allowing one upward step; errors below ``floor`` count as 0."""
    e = [0.0 if v < floor else v for v in errors]
    ups = sum(1 for a, b in zip(e, e[1:]) if b > a)
    return ups <= 1 and e[-1] <= e[0]


def verdict_for(errors, tol: float, require_decrease: bool = True) -> str:
    final_ok = errors[-1] < tol
    dec = _decreasing(errors) if require_decrease else True
    if final_ok and dec:
        return "pass"
    if not final_ok and not dec:
        return "fail"
    return "inconclusive"


def ml_laplace(gamma: float, q):
    """[1/(1 + q^(-(gamma-1)))]^(1/(gamma-1)): the exponent of F_{gamma,1}."""
    q = np.asarray(q, dtype=float)
    with np.errstate(divide="ignore"):
        val = (1.0 / (1.0 + q ** (-(gamma - 1.0)))) ** (1.0 / (gamma - 1.0))
    return val


def _source_mech(source):
    if isinstance(source, SelfSimilarFamily):
        if source.rho != 1.0:
            raise DomainError("a flow needs the rho = 1 member of the family")
        return BranchingMechanism.power(source.gamma, source.beta)
    return source


def _initial(nu0):
    if nu0 is None:
        return IdentityExponent()
    if isinstance(nu0, Atomic):
        return AtomicExponent(nu0)
    if isinstance(nu0, (list, tuple)):
        return AtomicExponent(Atomic(tuple(nu0)))
    return nu0


def check_main1_converse(mech, nu0=None, t0: float = 1.0, s_grid=DEFAULT_S_GRID,
                         q_grid=DEFAULT_Q_GRID, t_values=(0.5, 1.0, 2.0), tol: float = 0.01) -> ScalingReport:
    """Rescaled weak solution against [t + q^(-rho(gamma-1))]^(1/(1-gamma)).

    lambda(s) is chosen so that phi(t0, lambda(s)) = eta(s), i.e. zeta(phi(t0, lambda)) = s.
    """
    mech = _source_mech(mech)
    flow = ExponentFlow(backend_for(mech), _initial(nu0))
    fund = ExponentFlow(flow.backend)
    gamma_hat = rv_index_estimate(mech)
    rho_hat = tail_index(MeasureView(flow, t0)).rho
    q = np.asarray(q_grid, dtype=float)
    ts = np.asarray(t_values, dtype=float)
    errors, lambdas, etas, totals = [], [], [], []
    for s in s_grid:
        eta_s = float(fund.total_number(s))
        top = float(flow.phi(t0, math.inf))
        if not eta_s < top:
            raise BracketError(f"eta({s:g}) = {eta_s:.6g} exceeds phi(t0, inf) = {top:.6g}")

        def g(v):
            return math.log(float(flow.phi(t0, math.exp(v)))) - math.log(eta_s)

        lo, hi = -40.0, 40.0
        if g(lo) > 0 or g(hi) < 0:
            raise BracketError(f"lambda({s:g}) is not bracketed in [e^-40, e^40]")
        lam = math.exp(brentq(g, lo, hi, xtol=1e-14, rtol=1e-14))
        worst = 0.0
        for t in ts:
            got = flow.phi(s * t, lam * q) / eta_s
            want = limit_exponent(gamma_hat, q, t, rho_hat)
            tot = float(flow.phi(s * t, math.inf)) / eta_s
            worst = max(worst, float(np.max(np.abs(got - want))), abs(tot - t ** (1.0 / (1.0 - gamma_hat))))
            if t == 1.0:
                totals.append(tot)
        errors.append(worst)
        lambdas.append(lam)
        etas.append(eta_s)
    # beta from the t-dependence of the q = inf column at the largest s
    s = s_grid[-1]
    col = np.array([float(flow.phi(s * t, math.inf)) / etas[-1] for t in ts])
    slope, icpt = np.polyfit(np.log(ts), np.log(col), 1)
    g1 = gamma_hat - 1.0
    beta_hat = math.exp(-icpt * g1) / g1
    nu_hat = float(np.exp(icpt))
    fitted = {
        "gamma": gamma_hat,
        "rho": rho_hat,
        "c_lambda": lambdas[-1] * etas[-1] ** (-1.0 / rho_hat),
        "beta": beta_hat,
        "consistency": beta_hat * g1 * nu_hat ** g1,
    }
    return ScalingReport("main1_converse", list(s_grid), list(q) + [math.inf], errors, fitted,
                         verdict_for(errors, tol), tol, {"lambda": lambdas})


def check_funthm(mech, t_grid=DEFAULT_S_GRID, q_grid=DEFAULT_Q_GRID, tol: float = 0.01) -> ScalingReport:
    """Phi(t, q eta(t)) / eta(t) against the exponent of F_{gamma,1}."""
    mech = _source_mech(mech)
    flow = ExponentFlow(backend_for(mech))
    gamma_hat = rv_index_estimate(mech)
    q = np.asarray(q_grid, dtype=float)
    target = ml_laplace(gamma_hat, q)
    errors = []
    for t in t_grid:
        eta = float(flow.total_number(t))
        got = np.asarray(flow.phi(t, q * eta)) / eta
        errors.append(float(np.max(np.abs(got - target))))
    fitted = {"gamma": gamma_hat, "rho": 1.0, "c_lambda": 1.0}
    return ScalingReport("funthm", list(t_grid), list(q), errors, fitted, verdict_for(errors, tol), tol)


def ks_distance(samples, cdf) -> float:
    """Kolmogorov-Smirnov sup distance between the empirical law of ``samples`` and ``cdf``."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))


def check_limCSBP(source, t_grid=(1.0, 10.0, 100.0), z_grid=None, n: int = 100000, seed: int = 1,
                  x: float = 1.0, threads: int = 1, threshold: float = KS_THRESHOLD) -> ScalingReport:
    """KS distance of lambda(t) Z(t, x) | Z > 0 to F_{gamma,1}, lambda(t) = P(Z(t, x) > 0)."""
    mech = _source_mech(source)
    gamma_hat = rv_index_estimate(mech)
    gamma_ref = round(gamma_hat, 6)
    law = MittagLefflerLaw(min(gamma_ref, 2.0), 1.0)
    flow = ExponentFlow(backend_for(mech))
    errors, ratios, curves = [], [], []
    z = np.asarray(z_grid if z_grid is not None else np.logspace(-2.0, 1.0, 7), dtype=float)
    for t in t_grid:
        eta = float(flow.total_number(t))
        lam = -math.expm1(-x * eta)
        ens = sample_conditional(source, t, x, n, seed, threads)
        scaled = lam * ens.samples
        errors.append(ks_distance(scaled, lambda v: gml_cdf_fast(law, v)))
        ratios.append(lam / (x * eta))
        emp = np.searchsorted(np.sort(scaled), z, side="right") / n
        curves.append([float(v) for v in emp])
    fitted = {"gamma": gamma_hat, "rho": 1.0, "c_lambda": ratios[-1]}
    verdict = "pass" if errors[-1] < threshold else "fail"
    return ScalingReport("limCSBP", list(t_grid), list(z), errors, fitted, verdict, threshold,
                         {"lambda_over_eta": ratios, "empirical_cdf": curves, "seed": seed, "n": n})


def check_ssCSBP(source, t: float = 1.0, s_grid=DEFAULT_S_GRID, q_grid=DEFAULT_Q_GRID,
                 tol: float = 0.01) -> ScalingReport:
    """alpha(s) Phi(s t, lambda(s) q) against t^(-g*) L(t^(g*) q) with alpha = 1/lambda = 1/P(Z(s,1) > 0)."""
    mech = _source_mech(source)
    flow = ExponentFlow(backend_for(mech))
    gamma_hat = rv_index_estimate(mech)
    gstar = 1.0 / (gamma_hat - 1.0)
    q = np.asarray(q_grid, dtype=float)
    want = t ** (-gstar) * ml_laplace(gamma_hat, t ** gstar * q)
    errors = []
    for s in s_grid:
        lam = -math.expm1(-float(flow.total_number(s)))
        got = np.asarray(flow.phi(s * t, lam * q)) / lam
        tot = float(flow.total_number(s * t)) / lam
        errors.append(max(float(np.max(np.abs(got - want))), abs(tot - t ** (-gstar))))
    # g* from the q = inf column over t/2, t, 2t at the largest s
    s = s_grid[-1]
    lam = -math.expm1(-float(flow.total_number(s)))
    tt = np.array([0.5 * t, t, 2.0 * t])
    col = np.array([float(flow.total_number(s * v)) / lam for v in tt])
    gstar_hat = -np.polyfit(np.log(tt), np.log(col), 1)[0]
    fitted = {"gamma": gamma_hat, "rho": 1.0, "c_lambda": 1.0, "gamma_star": float(gstar_hat),
              "gamma_star_expected": gstar}
    return ScalingReport("ssCSBP", list(s_grid), list(q), errors, fitted, verdict_for(errors, tol), tol)
