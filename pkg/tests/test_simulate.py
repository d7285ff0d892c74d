import math

import numpy as np
import pytest

from csbp.errors import DomainError, NotGreyError
from csbp.exponent import AtomicExponent, ClosedFormBackend, compose_initial
from csbp.gml import SelfSimilarFamily
from csbp.mechanism import Atomic, BranchingMechanism
from csbp.simulate import (BLOCK, jump_law, sample_conditional, sample_csbp,
                           sample_weak_solution)

FELLER = BranchingMechanism.feller()
MIXED = BranchingMechanism(0.0, 1.0, (Atomic(((1.0, 1.0),)),))


def test_feller_extinction_and_mean():
    n = 100000
    ens = sample_csbp(FELLER, 1.0, 1.0, n, seed=3)
    p = math.exp(-1)
    assert abs(ens.extinct_frac - p) < 3 * math.sqrt(p * (1 - p) / n)
    # Var Z(1, 1) = 2 beta t x = 2 for the Feller diffusion
    assert abs(ens.samples.mean() - 1.0) < 3 * math.sqrt(2.0 / n)
    assert ens.flag == "exact"


def test_zero_initial_mass():
    ens = sample_csbp(FELLER, 1.0, 0.0, 100, seed=1)
    assert np.all(ens.samples == 0) and ens.extinct_count == 100


def test_family_source_matches_mechanism():
    a = sample_csbp(BranchingMechanism.power(1.5), 2.0, 1.0, 5000, seed=9).samples
    b = sample_csbp(SelfSimilarFamily(1.0, 1.5, 1.0), 2.0, 1.0, 5000, seed=9).samples
    assert np.array_equal(a, b)


def test_thread_count_does_not_change_output():
    n = 3 * BLOCK + 17
    ref = sample_csbp(FELLER, 1.0, 2.0, n, seed=11, threads=1).samples
    for th in (2, 4, 8):
        assert sample_csbp(FELLER, 1.0, 2.0, n, seed=11, threads=th).samples.tobytes() == ref.tobytes()


def test_seed_changes_output():
    a = sample_csbp(FELLER, 1.0, 1.0, 1000, seed=1).samples
    b = sample_csbp(FELLER, 1.0, 1.0, 1000, seed=2).samples
    assert not np.array_equal(a, b)


def test_summary_is_formatted():
    s = sample_csbp(FELLER, 1.0, 1.0, 2000, seed=5).summary()
    assert set(s) >= {"n", "t", "x", "seed", "extinct_frac", "mean", "var", "quantiles", "flag"}
    assert float(format(s["mean"], ".17g")) == s["mean"]


def test_conditional_feller_large_t():
    ens = sample_conditional(FELLER, 100.0, 1.0, 100000, seed=1)
    assert np.all(ens.samples > 0)
    assert (ens.samples / 100.0).mean() == pytest.approx(1.0, abs=0.02)


def test_inversion_backed_sampling():
    ens = sample_csbp(MIXED, 1.0, 1.0, 50000, seed=4)
    from csbp.exponent import build_zeta
    p = math.exp(-build_zeta(MIXED).eta(1.0))
    assert ens.flag == "inversion"
    assert abs(ens.extinct_frac - p) < 4 * math.sqrt(p * (1 - p) / 50000)
    assert abs(ens.samples.mean() - 1.0) < 0.03


def test_jump_law_errors():
    with pytest.raises(NotGreyError):
        jump_law(BranchingMechanism(0.0, 0.0, Atomic(((1.0, 1.0),))), 1.0)
    with pytest.raises(DomainError):
        jump_law(SelfSimilarFamily(1.0, 1.5, 0.5), 1.0)
    with pytest.raises(DomainError):
        sample_csbp(FELLER, -1.0, 1.0, 10, seed=1)
    with pytest.raises(DomainError):
        sample_conditional(FELLER, 1.0, 0.0, 10, seed=1)


def test_weak_solution_laplace_functional():
    n = 100000
    nu0 = Atomic(((1.0, 1.0),))
    ws = sample_weak_solution(nu0, FELLER, 1.0, n, seed=2)
    back = ClosedFormBackend.for_mechanism(FELLER)
    phi0 = AtomicExponent(nu0)
    total = compose_initial(back, phi0, 1.0, math.inf)
    for q in (0.5, 1.0, 2.0):
        e = np.exp(-q * ws.samples)
        want = 1.0 - compose_initial(back, phi0, 1.0, q) / total
        assert abs(e.mean() - want) < 3 * e.std() / math.sqrt(n)
    p = ws.acceptance
    sd = ws.eta * math.sqrt(p * (1 - p) / ws.proposals)
    assert abs(ws.total_number_estimate - total) < 3 * sd


def test_weak_solution_small_time_concentrates():
    with pytest.warns(RuntimeWarning, match="acceptance"):
        ws = sample_weak_solution([(1.0, 1.0)], FELLER, 1e-3, 5000, seed=3)
    assert np.median(ws.samples) == pytest.approx(1.0, abs=0.01)
