import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
import mpmath

from csbp.errors import DomainError, TermBudgetError
from csbp.mechanism import (Atomic, BranchingMechanism, Criticality, GreyVerdict, StableDensity,
                            TemperedStable, bound_K, derivative_bernstein_check, greys_check,
                            index_statistic, load_mechanism, mechanism_from_json,
                            moment_functional_Ik, moment_functional_Ik_bruteforce, psi_derivative,
                            psi_eval, rate_Rk, rates_table, rv_index_estimate)

from conftest import mechanism_zoo

E = math.e


def levy_khintchine(comp, u):
    """Psi of a density component by multiprecision quadrature of the integrand.

    On (0, eps) the compensated exponential is replaced by its two leading
    Taylor terms, integrated exactly.
    """
    with mpmath.workdps(40):
        g, c = mpmath.mpf(comp.gamma), mpmath.mpf(comp.c)
        lam = mpmath.mpf(getattr(comp, "lam", 0.0))
        u = mpmath.mpf(u)
        eps = mpmath.mpf("1e-12")
        head = c * (u ** 2 * eps ** (2 - g) / (2 * (2 - g)) - u ** 3 * eps ** (3 - g) / (6 * (3 - g)))
        f = lambda x: (mpmath.exp(-u * x) - 1 + u * x) * c * x ** (-1 - g) * mpmath.exp(-lam * x)
        return float(head + mpmath.quad(f, [eps, 1e-6, 1e-3, 1, 10, 100, 1000, mpmath.inf]))


# -- psi_eval -----------------------------------------------------------

def test_psi_feller():
    assert psi_eval(BranchingMechanism(0, 1, None), 2.0) == 4.0


def test_psi_normalized_stable_is_unit_power():
    g = 1.5
    c = g * (g - 1) / math.gamma(2 - g)
    mech = BranchingMechanism(0, 0, StableDensity(g, c))
    assert psi_eval(mech, 1.0) == pytest.approx(1.0, rel=1e-14)
    assert levy_khintchine(StableDensity(g, c), 1.0) == pytest.approx(1.0, rel=1e-7)


def test_psi_single_atom():
    mech = BranchingMechanism(0, 0, Atomic(((1.0, 1.0),)))
    assert psi_eval(mech, 1.0) == pytest.approx(math.exp(-1.0), rel=1e-14)


@pytest.mark.parametrize("comp", [TemperedStable(1.0, 1.0, 1.0), TemperedStable(0.0, 1.0, 1.0),
                                  TemperedStable(1.5, 0.3, 2.0), TemperedStable(0.5, 2.0, 0.5)])
@pytest.mark.parametrize("u", [1e-3, 0.3, 1.0, 7.0])
def test_tempered_matches_quadrature(comp, u):
    assert comp.psi(u) == pytest.approx(levy_khintchine(comp, u), rel=1e-7)


def test_u_log_one_plus_u():
    mech = BranchingMechanism(0, 0, (TemperedStable(1.0, 1.0, 1.0), TemperedStable(0.0, 1.0, 1.0)))
    u = np.array([1e-4, 0.5, 3.0, 100.0])
    assert np.allclose(mech.psi(u), u * np.log1p(u), rtol=1e-12)


def test_psi_domain_errors():
    with pytest.raises(DomainError):
        psi_eval(BranchingMechanism.feller(), 0.0)
    with pytest.raises(DomainError):
        BranchingMechanism(0, 0, None)
    with pytest.raises(DomainError):
        BranchingMechanism(0, -1.0, None)
    with pytest.raises(DomainError):
        StableDensity(2.5, 1.0)


def test_compensator_small_argument_has_no_cancellation():
    mech = BranchingMechanism(0, 0, Atomic(((1.0, 1.0),)))
    u = 1e-9
    assert psi_eval(mech, u) == pytest.approx(u * u / 2 - u ** 3 / 6, rel=1e-12)


# -- derivatives ----------------------------------------------------------

def test_psi_derivative_examples():
    assert psi_derivative(BranchingMechanism.feller(), 3.0, 2) == 2.0
    assert psi_derivative(BranchingMechanism.power(1.5), 1.0, 1) == pytest.approx(1.5, rel=1e-14)
    # d^3/du^3 of e^{-2u} is -8 e^{-2u}
    atom = BranchingMechanism(0, 0, Atomic(((2.0, 1.0),)))
    assert psi_derivative(atom, 1.0, 3) == pytest.approx(-8.0 * math.exp(-2.0), rel=1e-14)


@pytest.mark.parametrize("name", list(mechanism_zoo()))
@pytest.mark.parametrize("k", [1, 2, 3])
def test_derivatives_match_finite_differences(name, k):
    mech = mechanism_zoo()[name]
    u, h = 0.7, 1e-3
    lower = (lambda v: mech.psi(v)) if k == 1 else (lambda v: mech.dpsi(v, k - 1))
    fd = (lower(u + h) - lower(u - h)) / (2 * h)
    assert mech.dpsi(u, k) == pytest.approx(float(fd), rel=1e-5)


def test_psi_dpsi_fused_matches_separate():
    for mech in mechanism_zoo().values():
        u = np.logspace(-6, 3, 40)
        v, d = mech.psi_dpsi(u)
        assert np.allclose(v, mech.psi(u), rtol=1e-13, atol=0)
        assert np.allclose(d, mech.dpsi(u, 1), rtol=1e-13, atol=0)


# -- rates, I_k, K ----------------------------------------------------------

def test_rate_examples():
    feller = BranchingMechanism.feller()
    assert rate_Rk(feller, 2.0, 2) == 4.0
    assert rate_Rk(feller, 2.0, 3) == 0.0
    atom = BranchingMechanism(0, 0, Atomic(((1.0, 1.0),)))
    assert rate_Rk(atom, 1.0, 2) == pytest.approx(math.exp(-1) / 2, rel=1e-14)
    assert rate_Rk(BranchingMechanism.power(1.5), 1.0, 2) == pytest.approx(0.375, rel=1e-14)
    with pytest.raises(DomainError):
        rate_Rk(feller, 1.0, 1)


@given(st.floats(1e-3, 1e3), st.integers(2, 7), st.sampled_from(sorted(mechanism_zoo())))
def test_rates_are_nonnegative(rho, k, name):
    assert rate_Rk(mechanism_zoo()[name], rho, k) >= 0.0


def test_rates_table_shape():
    rows = rates_table(BranchingMechanism.feller())
    assert len(rows) == 12 and {"rho", "k", "R_k"} <= set(rows[0])


def test_moment_functional_examples():
    d1 = [(1.0, 1.0)]
    assert moment_functional_Ik(d1, lambda x: x, 3) == pytest.approx(0.0, abs=1e-15)
    assert moment_functional_Ik(d1, lambda x: 1.0, 2) == -1.0
    half = [(1.0, 0.5), (2.0, 0.5)]
    assert moment_functional_Ik(half, lambda x: x * x, 2) == pytest.approx(4.5, rel=1e-14)
    assert moment_functional_Ik_bruteforce(half, lambda x: x * x, 2) == pytest.approx(4.5, rel=1e-14)


@given(st.lists(st.tuples(st.floats(0.1, 5.0), st.floats(0.1, 3.0)), min_size=1, max_size=4),
       st.integers(2, 4))
def test_moment_functional_agrees_with_bruteforce(atoms, k):
    f = lambda x: math.sqrt(x) + x * x
    a = moment_functional_Ik(atoms, f, k)
    b = moment_functional_Ik_bruteforce(atoms, f, k)
    assert a == pytest.approx(b, rel=1e-10, abs=1e-10)


def test_moment_functional_budget():
    with pytest.raises(TermBudgetError):
        moment_functional_Ik([(float(i + 1), 1.0) for i in range(100)], lambda x: x, 5, budget=10 ** 6)


def test_bound_K_examples():
    assert bound_K(BranchingMechanism.feller(), 1.0) == pytest.approx(6.0)
    assert bound_K(BranchingMechanism.power(1.5), 1.0) == pytest.approx(2.0, rel=1e-14)


@given(st.sampled_from(sorted(mechanism_zoo())), st.floats(1e-4, 1e3), st.floats(1.01, 10.0))
def test_bound_K_increasing_and_vanishing(name, m, ratio):
    mech = mechanism_zoo()[name]
    assert bound_K(mech, m * ratio) >= bound_K(mech, m) >= 0.0
    assert bound_K(mech, 1e-12) < 1e-10


@given(st.sampled_from(sorted(mechanism_zoo())), st.floats(1e-5, 1e4))
def test_psi_sandwich(name, u):
    """Psi/u <= Psi' <= 2 Psi/u for critical mechanisms."""
    mech = mechanism_zoo()[name]
    p, d = float(mech.psi(u)), float(mech.dpsi(u, 1))
    assert p / u <= d * (1 + 1e-12)
    assert d <= 2 * p / u * (1 + 1e-12)


# -- Grey and the index ---------------------------------------------------

def test_greys_check_examples():
    assert greys_check(BranchingMechanism.feller()).verdict is GreyVerdict.HOLDS
    r = greys_check(BranchingMechanism.power(1.1))
    assert r.verdict is GreyVerdict.HOLDS and r.integral == pytest.approx(10.0, rel=1e-8)
    ulog = BranchingMechanism(0, 0, (TemperedStable(1.0, 1.0, 1.0), TemperedStable(0.0, 1.0, 1.0)))
    assert greys_check(ulog).verdict is GreyVerdict.FAILS
    atom = BranchingMechanism(0, 0, Atomic(((1.0, 1.0),)))
    assert greys_check(atom).verdict is GreyVerdict.FAILS


def test_rv_index_examples():
    assert rv_index_estimate(BranchingMechanism.feller()) == pytest.approx(2.0, abs=1e-12)
    assert rv_index_estimate(BranchingMechanism.power(1.5)) == pytest.approx(1.5, abs=1e-8)
    atom = BranchingMechanism(0, 0, Atomic(((1.0, 1.0),)))
    assert rv_index_estimate(atom) == pytest.approx(2.0, abs=1e-4)
    mixed = BranchingMechanism(0, 1.0, StableDensity.normalized(1.5))
    assert rv_index_estimate(mixed) == pytest.approx(1.5, abs=1e-3)


def test_index_statistic_is_between_one_and_two():
    for mech in mechanism_zoo().values():
        g = index_statistic(mech, np.logspace(-6, 4, 30))
        assert np.all((g >= 1 - 1e-12) & (g <= 2 + 1e-12))


def test_criticality():
    assert BranchingMechanism.feller().criticality is Criticality.CRITICAL
    assert BranchingMechanism(0.5, 1.0).criticality is Criticality.SUBCRITICAL
    assert BranchingMechanism(-0.5, 1.0).criticality is Criticality.SUPERCRITICAL


@pytest.mark.parametrize("name", list(mechanism_zoo()))
def test_derivative_is_bernstein(name):
    res = derivative_bernstein_check(mechanism_zoo()[name])
    assert res.ok and res.checked > 0


# -- JSON --------------------------------------------------------------------

def test_json_round_trip(tmp_path):
    for mech in mechanism_zoo().values():
        again = mechanism_from_json(json.loads(json.dumps(mech.to_json())))
        u = np.logspace(-3, 3, 7)
        assert np.allclose(again.psi(u), mech.psi(u), rtol=1e-15)
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"alpha": 0, "beta": 0, "pi": {"type": "stable", "gamma": 1.5, "c": "auto"}}))
    assert load_mechanism(p).power_law() == pytest.approx((1.0, 1.5))


@pytest.mark.parametrize("bad", [
    {"alpha": 0, "beta": 1},
    {"alpha": 0, "beta": "1", "pi": None},
    {"alpha": 0, "beta": 0, "pi": {"type": "atomic", "atoms": [[1.0]]}},
    {"alpha": 0, "beta": 0, "pi": {"type": "stable", "gamma": 3.0, "c": 1.0}},
])
def test_json_rejects_malformed(bad):
    with pytest.raises(ValueError):
        mechanism_from_json(bad)
