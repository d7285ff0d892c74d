import math

import numpy as np
import pytest

from csbp.errors import DomainError
from csbp.exponent import (AtomicExponent, ClosedFormBackend, ExponentFlow, PowerExponent,
                           ZetaEtaBackend, build_zeta)
from csbp.measures import (MeasureView, gaver_stehfest, gaver_stehfest_mp, invert_mass_cdf,
                           number_and_mass, stehfest_weights, tail_index)
from csbp.mechanism import Atomic, BranchingMechanism

FELLER = ClosedFormBackend.for_mechanism(BranchingMechanism.feller())
STABLE = ClosedFormBackend.for_mechanism(BranchingMechanism.power(1.5))
DELTA1 = AtomicExponent(Atomic(((1.0, 1.0),)))


def test_stehfest_weights_sum_to_zero():
    for n in (8, 14, 30):
        assert abs(stehfest_weights(n).sum()) < 1e-6 * np.abs(stehfest_weights(n)).max()
    with pytest.raises(DomainError):
        stehfest_weights(7)


def test_gaver_stehfest_inverts_known_transforms():
    x = np.array([0.5, 1.0, 3.0])
    got = gaver_stehfest(lambda s: 1.0 / (s + 1.0), x)
    assert np.allclose(got, np.exp(-x), rtol=0, atol=5e-5)
    assert gaver_stehfest_mp(lambda s: 1 / (s + 1) ** 2, 2.0) == pytest.approx(2 * math.exp(-2), rel=1e-9)


def test_number_and_mass_examples():
    assert number_and_mass(MeasureView(ExponentFlow(FELLER), 2.0)) == pytest.approx((0.5, 1.0), rel=1e-6)
    assert number_and_mass(MeasureView(ExponentFlow(FELLER, DELTA1), 1.0)) == pytest.approx((0.5, 1.0), rel=1e-6)
    assert number_and_mass(MeasureView(ExponentFlow(STABLE), 2.0)) == pytest.approx((1.0, 1.0), rel=1e-6)


def test_mass_cdf_feller_exact():
    view = MeasureView(ExponentFlow(FELLER), 1.0)
    x = np.array([0.25, 1.0, 4.0])
    pts = invert_mass_cdf(view, x)
    exact = 1 - np.exp(-x) * (1 + x)
    assert all(p.flag == "ok" for p in pts)
    assert np.allclose([p.mass_cdf for p in pts], exact, atol=1e-7)
    assert pts[1].mass_cdf == pytest.approx(0.26424, abs=1e-5)


def test_mass_cdf_approaches_first_moment():
    view = MeasureView(ExponentFlow(FELLER, DELTA1), 1.0)
    pts = invert_mass_cdf(view, [40.0])
    assert pts[0].mass_cdf == pytest.approx(view.first_moment, abs=1e-4)


def test_mass_cdf_monotone_on_table_backend():
    mech = BranchingMechanism(0.0, 1.0, (Atomic(((1.0, 1.0),)),))
    view = MeasureView(ExponentFlow(ZetaEtaBackend(build_zeta(mech))), 1.0)
    pts = invert_mass_cdf(view, np.logspace(-1, 1, 9))
    m = np.array([p.mass_cdf for p in pts])
    assert np.all(np.diff(m) > -1e-4)
    assert not view.multiprecision and view.inversion_order == 14


def test_invert_domain():
    view = MeasureView(ExponentFlow(FELLER), 1.0)
    with pytest.raises(DomainError):
        invert_mass_cdf(view, [0.0, 1.0])
    with pytest.raises(DomainError):
        MeasureView(ExponentFlow(FELLER), 0.0)


def test_tail_index_examples():
    assert tail_index(MeasureView(ExponentFlow(FELLER, DELTA1), 1.0)).rho == pytest.approx(1.0, abs=1e-3)
    half = tail_index(MeasureView(ExponentFlow(FELLER, PowerExponent(0.5)), 1.0))
    assert half.rho == pytest.approx(0.5, abs=1e-3)
    # on a stable base the correction to regular variation decays like q^0.25
    slow = tail_index(MeasureView(ExponentFlow(STABLE, PowerExponent(0.5)), 1.0))
    assert slow.rho == pytest.approx(0.5, abs=0.01)
    fund = tail_index(MeasureView(ExponentFlow(STABLE), 1.0))
    assert fund.rho == pytest.approx(1.0, abs=1e-3)


def test_tail_index_reports_both_estimators():
    est = tail_index(MeasureView(ExponentFlow(STABLE, PowerExponent(0.5)), 1.0))
    assert est.spread == pytest.approx(abs(est.rho_transform - est.rho_mass))
    assert est.verdict == "ok"
    with pytest.raises(DomainError):
        tail_index(MeasureView(ExponentFlow(FELLER), 1.0), x_decades=[1.0, 10.0])
