"""Trial simulation, spot-checking settings streams and break-even analysis."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .bellmodel import (
    DEFAULT_SETTING,
    ConditionalDistribution,
    SettingsDistribution,
    spotcheck_distribution,
    spotcheck_model,
)
from .certify import Trials
from .pefopt import log_prob_rate, optimize_pef

RNG_ALGORITHM = "numpy.Philox"


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator used for every simulation in the package."""
    return np.random.Generator(np.random.Philox(seed))


def _table(cond) -> np.ndarray:
    return cond.table if isinstance(cond, ConditionalDistribution) else np.asarray(cond, float).reshape(4, 4)


def sample_outcomes(cond, z: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``(a, b)`` for each setting index in ``z`` from ``p(ab|z)``."""
    cdf = np.cumsum(_table(cond), axis=1)
    u = rng.random(len(z))
    c = np.minimum((u[:, None] >= cdf[z]).sum(axis=1), 3)
    return c & 1, c >> 1


def sample_trials(cond, settings, n: int, seed) -> Trials:
    """``n`` i.i.d. trials from ``cond ⋊ settings``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    nu = settings.probs if isinstance(settings, SettingsDistribution) else np.asarray(settings, float)
    rng = make_rng(seed)
    z = rng.choice(4, size=n, p=nu)
    a, b = sample_outcomes(cond, z, rng)
    return Trials(z & 1, z >> 1, a, b)


def sample_drifting(conds, lengths, settings, seed) -> Trials:
    """Concatenated i.i.d. segments, one per conditional distribution."""
    rng_seeds = np.random.SeedSequence(seed).spawn(len(conds))
    parts = [sample_trials(c, settings, n, s) for c, n, s in zip(conds, lengths, rng_seeds)]
    return Trials.concat(parts)


@dataclass(frozen=True)
class SpotCheckConfig:
    """Test probability ``r``, default setting ``z0`` and block exponent ``k``."""

    r: float = 1.0
    z0: int = DEFAULT_SETTING
    k: int | None = None

    def __post_init__(self):
        if not 0.0 < self.r <= 1.0:
            raise ValueError("r must lie in (0, 1]")
        if self.z0 not in range(4):
            raise ValueError("z0 must be a setting index 0..3")
        if self.k is not None and self.k < 1:
            raise ValueError("block exponent k must be at least 1")

    def settings_distribution(self) -> SettingsDistribution:
        nu = np.full(4, self.r / 4.0)
        nu[self.z0] += 1.0 - self.r
        return SettingsDistribution(nu)


@dataclass(frozen=True)
class SettingsStream:
    """Settings indices with test flags.

    ``r`` is the conditional probability that each trial is a test trial given
    the history (constant in i.i.d. mode, ``1/(2^k - l + 1)`` in block mode);
    ``block`` and ``position`` are set in block mode only (position is 1-based).
    """

    z: np.ndarray
    t: np.ndarray
    r: np.ndarray
    block: np.ndarray | None = None
    position: np.ndarray | None = None

    def __len__(self) -> int:
        return self.z.size


def spotcheck_settings(cfg: SpotCheckConfig, n: int, seed, mode: str = "iid") -> SettingsStream:
    """Spot-checking settings: ``n`` trials in i.i.d. mode or ``n`` blocks in block mode.

    In block mode each block of ``2^k`` nominal trials has one uniformly placed
    test trial; the block ends at the test trial since later trials would carry
    trivial PEFs.
    """
    rng = make_rng(seed)
    if mode == "iid":
        t = (rng.random(n) < cfg.r).astype(np.int8)
        z = np.where(t == 1, rng.integers(0, 4, size=n), cfg.z0)
        return SettingsStream(z.astype(np.int8), t, np.full(n, cfg.r))
    if mode != "blockwise":
        raise ValueError("mode must be 'iid' or 'blockwise'")
    if cfg.k is None:
        raise ValueError("block mode needs the block exponent k")
    size = 2**cfg.k
    test_pos = rng.integers(1, size + 1, size=n)  # 1-based position of the test trial
    lengths = test_pos
    total = int(lengths.sum())
    block = np.repeat(np.arange(n), lengths)
    starts = np.cumsum(lengths) - lengths
    position = np.arange(total) - np.repeat(starts, lengths) + 1
    t = (position == np.repeat(test_pos, lengths)).astype(np.int8)
    z = np.where(t == 1, rng.integers(0, 4, size=total), cfg.z0).astype(np.int8)
    r = 1.0 / (size - position + 1)
    return SettingsStream(z, t, r, block, position)


def sample_spotcheck_trials(cond, cfg: SpotCheckConfig, n: int, seed, mode: str = "iid") -> Trials:
    ss_seed, out_seed = np.random.SeedSequence(seed).spawn(2)
    stream = spotcheck_settings(cfg, n, ss_seed, mode)
    a, b = sample_outcomes(cond, stream.z, make_rng(out_seed))
    return Trials(stream.z & 1, stream.z >> 1, a, b, stream.t)


def settings_entropy(source) -> float:
    """Entropy in bits of the settings distribution of a spot-check config or of a distribution."""
    if isinstance(source, SpotCheckConfig):
        r = source.r
        p_fixed = 1.0 - 3.0 * r / 4.0
        terms = [-(3.0 * r / 4.0) * math.log2(r / 4.0)]
        if p_fixed > 0:
            terms.append(-p_fixed * math.log2(p_fixed))
        return sum(terms)
    p = source.probs if isinstance(source, SettingsDistribution) else np.asarray(source, float)
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)))


# -- break-even analysis -----------------------------------------------------------


@dataclass(frozen=True)
class BreakEvenResult:
    """Smallest number of trials for which the certified entropy exceeds the settings entropy.

    ``n_c = kappa / objective`` with ``objective = beta (sigma - S(r))``.
    ``n_c_extractor`` also charges ``2 log2(1/eps_x)`` for Toeplitz extraction.
    """

    n_c: float
    beta: float
    r: float
    sigma: float
    objective: float
    settings_entropy: float
    kappa: float
    n_c_extractor: float


def spotcheck_rate(kind, cond, r: float, beta: float, z0: int = DEFAULT_SETTING) -> float:
    """Optimized log2-prob rate at the spot-check lifted model and distribution."""
    model = spotcheck_model(kind, r, z0)
    rho = spotcheck_distribution(cond, r, z0)
    return log_prob_rate(optimize_pef(model, rho, beta), beta, rho)


def break_even(kind, cond, kappa: float, eps_x: float | None = None, z0: int = DEFAULT_SETTING,
               r_bracket=(1e-5, 0.5), beta_bracket=(1e-7, 1e-1), xatol: float = 1e-4) -> BreakEvenResult:
    """Maximize ``beta (sigma(beta, r) - S(r))`` by nested bounded scalar searches in log space."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    cond = _table(cond)

    def inner(log_r: float):
        r = math.exp(log_r)
        s = settings_entropy(SpotCheckConfig(r, z0))

        def neg(log_b):
            beta = math.exp(log_b)
            return -beta * (spotcheck_rate(kind, cond, r, beta, z0) - s)

        res = minimize_scalar(neg, bounds=tuple(map(math.log, beta_bracket)), method="bounded",
                              options={"xatol": xatol})
        return -res.fun, math.exp(res.x)

    cache = {}

    def outer(log_r):
        cache[log_r] = inner(log_r)
        return -cache[log_r][0]

    res = minimize_scalar(outer, bounds=tuple(map(math.log, r_bracket)), method="bounded",
                          options={"xatol": xatol})
    objective, beta = cache[res.x] if res.x in cache else inner(res.x)
    if objective <= 0:
        raise ValueError("no positive objective: expansion is not possible for this distribution")
    r = math.exp(res.x)
    sigma = spotcheck_rate(kind, cond, r, beta, z0)
    s = settings_entropy(SpotCheckConfig(r, z0))
    objective = beta * (sigma - s)
    eps_bits = kappa if eps_x is None else math.log2(1.0 / eps_x)
    n_c_ext = (kappa + 2.0 * beta * eps_bits) / objective
    return BreakEvenResult(kappa / objective, beta, r, sigma, objective, s, kappa, n_c_ext)
