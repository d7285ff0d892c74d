"""Monte Carlo sampling of Z(t, x) through its Poissonian representation.

Z(t, x) is the sum of the atoms of a Poisson point process with intensity
x * mu_t(dx), mu_t being the fundamental solution. Its jump law
mu_t / <mu_t, 1> is an exact scaled Mittag-Leffler law for homogeneous
mechanisms; otherwise it is read off a numerically inverted distribution
function and the ensemble is flagged.

Randomness is drawn in fixed-size blocks. Block b always uses the Philox
stream keyed by the seed and advanced by b jumps, so the output does not
depend on how many worker threads process the blocks.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.stats import poisson

from .errors import DomainError, NotGreyError
from .exponent import ZetaEtaBackend, build_zeta
from .gml import SelfSimilarFamily, gml_quantile_fast
from .mechanism import Atomic, BranchingMechanism
from .measures import gaver_stehfest

BLOCK = 8192
QUANTILE_LEVELS = (0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99)


def _fmt(x: float):
    return float(format(float(x), ".17g"))


@dataclass
class Ensemble:
    seed: int
    n: int
    t: float
    x: float
    samples: np.ndarray = field(repr=False)
    extinct_count: int = 0
    flag: str = "exact"

    def __post_init__(self):
        self.extinct_count = int(np.count_nonzero(self.samples == 0.0))

    @property
    def extinct_frac(self) -> float:
        return self.extinct_count / self.n

    def summary(self) -> dict:
        s = self.samples
        return {
            "n": self.n,
            "t": _fmt(self.t),
            "x": _fmt(self.x),
            "seed": self.seed,
            "extinct_frac": _fmt(self.extinct_frac),
            "mean": _fmt(s.mean()),
            "var": _fmt(s.var(ddof=1)) if self.n > 1 else 0.0,
            "quantiles": {str(p): _fmt(np.quantile(s, p)) for p in QUANTILE_LEVELS},
            "flag": self.flag,
        }


@dataclass(frozen=True)
class JumpLaw:
    """Total number eta(t) of mu_t and a sampler of the normalized jump law."""

    eta: float
    quantile: object
    flag: str

    def sample(self, rng: np.random.Generator, k: int) -> np.ndarray:
        u = rng.random(k)
        u = np.where(u == 0.0, np.nextafter(0.0, 1.0), u)
        return self.quantile(u)


def _inverted_jump_law(mech: BranchingMechanism, t: float) -> JumpLaw:
    ze = build_zeta(mech)
    back = ZetaEtaBackend(ze)
    eta = float(ze.eta(t))
    mean = 1.0 / eta  # jump mean: first moment 1 over the total number
    x = mean * np.logspace(-6.0, 3.0, 271)

    def transform(q):
        # int_0^x mu_t(dy) has transform (eta - Phi(t, q)) / q
        q = np.minimum(q, 1e8)
        return (eta - back.Phi(t, q)) / q

    cdf = gaver_stehfest(transform, x) / eta
    cdf = np.clip(np.maximum.accumulate(cdf), 0.0, 1.0)
    keep = np.concatenate([[True], np.diff(cdf) > 1e-13])
    xs, cs = x[keep], cdf[keep]
    inner = (cs > 0) & (cs < 1)
    xs, cs = xs[inner], cs[inner]
    if len(xs) < 4:
        raise DomainError("inverted jump distribution is too coarse to sample from")
    inv = PchipInterpolator(cs, np.log(xs))

    def quantile(u):
        return np.exp(inv(np.clip(u, cs[0], cs[-1])))

    return JumpLaw(eta, quantile, "inversion")


def jump_law(source, t: float) -> JumpLaw:
    """Jump law of Z(t, .) for a mechanism or a self-similar family."""
    if not t > 0:
        raise DomainError("t must be positive")
    if isinstance(source, SelfSimilarFamily):
        fam = source
    else:
        if not isinstance(source, BranchingMechanism):
            raise DomainError("source must be a BranchingMechanism or SelfSimilarFamily")
        pl = source.power_law()
        if pl is None:
            try:
                return _inverted_jump_law(source, t)
            except NotGreyError as exc:
                raise NotGreyError(f"cannot sample: {exc}") from None
        fam = SelfSimilarFamily(pl[0], pl[1], 1.0)
    if fam.rho != 1.0:
        raise DomainError("the fundamental solution needs rho = 1")
    law = fam.jump_law(t)
    return JumpLaw(float(fam.alpha(t)), lambda u, law=law: gml_quantile_fast(law, u), "exact")


def _block_rng(seed: int, b: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed).jumped(b))


def _run_blocks(fn, n: int, threads: int):
    nblocks = max(1, math.ceil(n / BLOCK))
    sizes = [min(BLOCK, n - b * BLOCK) for b in range(nblocks)]
    if threads <= 1:
        parts = [fn(b, sizes[b]) for b in range(nblocks)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(fn, range(nblocks), sizes))
    return parts


def _sum_by_owner(counts: np.ndarray, values: np.ndarray) -> np.ndarray:
    owner = np.repeat(np.arange(len(counts)), counts)
    return np.bincount(owner, weights=values, minlength=len(counts))


def _truncated_poisson(rng, lam, size):
    """Poisson(lam) conditioned to be >= 1, by inverting the survival function."""
    v = rng.random(size) * -np.expm1(-np.asarray(lam, dtype=float))
    v = np.where(v == 0.0, np.nextafter(0.0, 1.0), v)
    k = poisson.isf(v, lam).astype(np.int64)
    return np.maximum(k, 1)


def _check(t, x, n, seed):
    if not t > 0:
        raise DomainError("t must be positive")
    if not x >= 0:
        raise DomainError("x must be nonnegative")
    if int(n) != n or n < 1:
        raise DomainError("n must be a positive integer")
    if int(seed) != seed or seed < 0:
        raise DomainError("seed must be a nonnegative integer")


def sample_csbp(source, t: float, x: float, n: int, seed: int, threads: int = 1) -> Ensemble:
    """n independent copies of Z(t, x)."""
    _check(t, x, n, seed)
    n, seed = int(n), int(seed)
    if x == 0:
        return Ensemble(seed, n, t, x, np.zeros(n))
    law = jump_law(source, t)
    lam = x * law.eta

    def block(b, size):
        rng = _block_rng(seed, b)
        counts = rng.poisson(lam, size)
        jumps = law.sample(rng, int(counts.sum()))
        return _sum_by_owner(counts, jumps)

    samples = np.concatenate(_run_blocks(block, n, threads))
    return Ensemble(seed, n, t, x, samples, flag=law.flag)


def sample_conditional(source, t: float, x: float, n: int, seed: int, threads: int = 1) -> Ensemble:
    """n copies of Z(t, x) conditioned on Z(t, x) > 0."""
    _check(t, x, n, seed)
    if not x > 0:
        raise DomainError("conditioning on survival needs x > 0")
    n, seed = int(n), int(seed)
    law = jump_law(source, t)
    lam = x * law.eta

    def block(b, size):
        rng = _block_rng(seed, b)
        counts = _truncated_poisson(rng, lam, size)
        jumps = law.sample(rng, int(counts.sum()))
        return _sum_by_owner(counts, jumps)

    samples = np.concatenate(_run_blocks(block, n, threads))
    return Ensemble(seed, n, t, x, samples, flag=law.flag)


@dataclass
class WeakSample:
    """Draws from nu_t / <nu_t, 1> together with the rejection statistics."""

    samples: np.ndarray = field(repr=False)
    proposals: int
    accepted: int
    eta: float
    flag: str

    @property
    def acceptance(self) -> float:
        return self.accepted / self.proposals

    @property
    def total_number_estimate(self) -> float:
        """acceptance * <mu_t, 1>, an estimate of <nu_t, 1>."""
        return self.acceptance * self.eta


def sample_weak_solution(nu0, source, t: float, n: int, seed: int, threads: int = 1) -> WeakSample:
    """Sample nu_t / <nu_t, 1> for a finite atomic nu0 by subordination.

    A size s is proposed from mu_t / <mu_t, 1> and kept with probability
    1 - exp(-s <nu0, 1>); the output is then a sum of M ~ Poisson(s <nu0,1>)
    conditioned on M >= 1 atoms drawn from nu0 / <nu0, 1>.
    """
    _check(t, 1.0, n, seed)
    n, seed = int(n), int(seed)
    nu0 = nu0 if isinstance(nu0, Atomic) else Atomic(tuple(nu0))
    m0 = float(nu0.weights.sum())
    locs = nu0.locations
    probs = nu0.weights / m0
    law = jump_law(source, t)

    def block(b, size):
        rng = _block_rng(seed, b)
        got = []
        have = 0
        proposed = 0
        rate = 0.5
        while have < size:
            k = max(64, int(1.2 * (size - have) / max(rate, 1e-4)))
            k = min(k, 50 * BLOCK)
            s = law.sample(rng, k)
            u = rng.random(k)
            acc = u < -np.expm1(-s * m0)
            # stop proposing once the block is full so the count stays exact
            idx = np.flatnonzero(acc)
            need = size - have
            if len(idx) > need:
                last = idx[need - 1]
                proposed += last + 1
                idx = idx[:need]
            else:
                proposed += k
            got.append(s[idx])
            have += len(idx)
            rate = max(len(idx) / k, 1e-4)
        sizes_s = np.concatenate(got)
        counts = _truncated_poisson(rng, sizes_s * m0, size)
        atoms = rng.choice(locs, size=int(counts.sum()), p=probs)
        return _sum_by_owner(counts, atoms), proposed

    parts = _run_blocks(block, n, threads)
    samples = np.concatenate([p[0] for p in parts])
    proposals = int(sum(p[1] for p in parts))
    out = WeakSample(samples, proposals, n, law.eta, law.flag)
    if out.acceptance < 0.01:
        warnings.warn(f"rejection sampler acceptance is {out.acceptance:.3%}", RuntimeWarning,
                      stacklevel=2)
    return out
