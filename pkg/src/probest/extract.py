"""Toeplitz hashing, extractor sizing and the randomness-generation protocol drivers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .certify import Report, Trials, accumulate_many, new_session, report
from .pefopt import PEF
from .simulate import RNG_ALGORITHM, make_rng


class ExtractorError(ValueError):
    """Extractor parameters are infeasible or inputs have the wrong length."""


class SeedExhausted(RuntimeError):
    """A seed or banked-bit source ran out of bits."""


@dataclass(frozen=True)
class BitString:
    """Immutable bit sequence; bit 0 is the first character of the text form."""

    bits: np.ndarray = field(default_factory=lambda: np.zeros(0, np.uint8))

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 1:
            raise ValueError("bits must be one-dimensional")
        if b.size and not np.all((b == 0) | (b == 1)):
            raise ValueError("bits must be 0 or 1")
        b = b.astype(np.uint8)
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    def __len__(self) -> int:
        return self.bits.size

    @property
    def length(self) -> int:
        return self.bits.size

    def __str__(self) -> str:
        return "".join("01"[v] for v in self.bits)

    def __xor__(self, other: "BitString") -> "BitString":
        if len(other) != len(self):
            raise ValueError("length mismatch")
        return BitString(self.bits ^ other.bits)

    def __add__(self, other: "BitString") -> "BitString":
        return BitString(np.concatenate([self.bits, other.bits]))

    def __eq__(self, other) -> bool:
        return isinstance(other, BitString) and np.array_equal(self.bits, other.bits)

    def __hash__(self) -> int:
        return hash(self.bits.tobytes())

    def to_bytes(self) -> bytes:
        """Big-endian packing; the last byte is zero-padded."""
        return np.packbits(self.bits).tobytes()

    @classmethod
    def from_str(cls, text: str) -> "BitString":
        text = text.strip()
        if any(ch not in "01" for ch in text):
            raise ValueError("bit strings contain only '0' and '1'")
        return cls(np.frombuffer(text.encode("ascii"), np.uint8) - ord("0"))

    @classmethod
    def zeros(cls, n: int) -> "BitString":
        return cls(np.zeros(n, np.uint8))


def _bits(x) -> np.ndarray:
    if isinstance(x, BitString):
        return x.bits
    if isinstance(x, str):
        return BitString.from_str(x).bits
    return BitString(np.asarray(x)).bits


def _check_lengths(n: int, seed_len: int, m: int):
    if not 1 <= m <= n:
        raise ExtractorError(f"need 1 <= m <= n, got m={m}, n={n}")
    if seed_len != n + m - 1:
        raise ExtractorError(f"seed must have n+m-1 = {n + m - 1} bits, got {seed_len}")


def toeplitz_reference(d, seed, m: int) -> BitString:
    """Direct ``O(nm)`` evaluation of the Toeplitz hash, used to cross-check the fast path."""
    d, s = _bits(d), _bits(seed)
    _check_lengths(d.size, s.size, m)
    out = np.array([np.bitwise_xor.reduce(s[j:j + d.size] & d) if d.size else 0 for j in range(m)], np.uint8)
    return BitString(out)


def toeplitz_extract(d, seed, m: int) -> BitString:
    """``out[j] = XOR_i seed[j+i] & d[i]`` for ``j < m``, ``i < n``.

    The parities come from an FFT correlation of the seed with ``d``; every
    correlation value is checked to be within rounding distance of an
    integer before reduction mod 2.
    """
    d, s = _bits(d), _bits(seed)
    n = d.size
    _check_lengths(n, s.size, m)
    corr = fftconvolve(s.astype(float), d[::-1].astype(float), mode="full")[n - 1:n - 1 + m]
    rounded = np.rint(corr)
    if corr.size and np.max(np.abs(corr - rounded)) > 0.25:
        raise ArithmeticError("FFT correlation lost integer precision")
    return BitString((rounded.astype(np.int64) & 1).astype(np.uint8))


# -- parameter calculators ----------------------------------------------------------


@dataclass(frozen=True)
class ExtractorParams:
    """Input length ``n``, seed length ``l``, input min-entropy ``sigma_h``, output ``sigma``, error ``eps_x``."""

    n: int
    l: int
    sigma_h: float
    sigma: int
    eps_x: float

    def __post_init__(self):
        if not 1 <= self.sigma <= self.sigma_h <= self.n:
            raise ExtractorError(f"need 1 <= sigma <= sigma_h <= n, got {self.sigma}, {self.sigma_h}, {self.n}")
        if not 0.0 < self.eps_x <= 1.0:
            raise ExtractorError("eps_x must lie in (0, 1]")


def toeplitz_params(n: int, sigma_h: float, eps_x: float) -> ExtractorParams:
    """Leftover-hash sizing: ``sigma = floor(sigma_h - 2 log2(1/eps_x))`` and ``l = n + sigma - 1``."""
    if not 0.0 < eps_x <= 1.0:
        raise ExtractorError("eps_x must lie in (0, 1]")
    if sigma_h > n:
        raise ExtractorError(f"sigma_h={sigma_h} exceeds the input length n={n}")
    sigma = math.floor(sigma_h - 2.0 * math.log2(1.0 / eps_x) + 1e-9)
    if sigma < 1:
        raise ExtractorError("insufficient min-entropy for even one output bit")
    return ExtractorParams(int(n), int(n) + sigma - 1, float(sigma_h), sigma, float(eps_x))


@dataclass(frozen=True)
class TMPSParams:
    sigma_h: float
    l: int


def tmps_params(sigma: int, eps_x: float, n: float) -> TMPSParams:
    """Simplified input-entropy and seed-length requirements of the TMPS extractor."""
    if sigma < 2:
        raise ExtractorError("sigma must be at least 2")
    if not 0.0 < eps_x <= 1.0:
        raise ExtractorError("eps_x must lie in (0, 1]")
    ls = math.log2(sigma)
    le = math.log2(1.0 / eps_x)
    sigma_h = sigma + 4.0 * ls + 4.0 * le + 6.0
    l = math.ceil(36.0 * ls * math.log2(4.0 * n * sigma**2 / eps_x**2) ** 2)
    return TMPSParams(sigma_h, l)


@dataclass(frozen=True)
class ChainSoundness:
    """``eps`` is the unconditional bound; ``improved`` conditions on passing (set when ``kappa`` is given)."""

    eps: float
    improved: float | None


def chain_soundness(eps_x: float, eps_h: float, delta: float, kappa: float | None = None) -> ChainSoundness:
    for v in (eps_x, eps_h, delta):
        if not 0.0 <= v < 1.0:
            raise ValueError("error parameters must lie in [0, 1)")
    improved = None
    if kappa is not None:
        if not 0.0 < kappa <= 1.0:
            raise ValueError("kappa must lie in (0, 1]")
        improved = eps_x + (eps_h + delta) / kappa
    return ChainSoundness(eps_x + 2.0 * eps_h + delta, improved)


# -- seed sources -------------------------------------------------------------------


class SeedSource:
    """Sequential supplier of uniform bits with a provenance label."""

    provenance: str = "unknown"

    def take(self, k: int) -> BitString:
        raise NotImplementedError


class GeneratorSeedSource(SeedSource):
    """Deterministic pseudo-random bits for tests and simulations."""

    def __init__(self, seed: int):
        self.seed = seed
        self._rng = make_rng(seed)
        self.used = 0
        self.provenance = f"generator:{RNG_ALGORITHM}:seed={seed}"

    def take(self, k: int) -> BitString:
        self.used += k
        return BitString(self._rng.integers(0, 2, size=k, dtype=np.uint8))


class BitFileSource(SeedSource):
    """Bits read from a file of ASCII ``0``/``1`` lines, consumed front to back."""

    def __init__(self, path):
        self.path = Path(path)
        text = "".join(line.strip() for line in self.path.read_text().splitlines())
        self._bits = BitString.from_str(text)
        self.used = 0
        self.provenance = f"file:{self.path}"

    @property
    def remaining(self) -> int:
        return len(self._bits) - self.used

    def take(self, k: int) -> BitString:
        if k > self.remaining:
            raise SeedExhausted(f"{self.path} has {self.remaining} bits left, {k} requested")
        out = BitString(self._bits.bits[self.used:self.used + k])
        self.used += k
        return out


# -- protocol drivers ---------------------------------------------------------------


def outcome_bits(trials: Trials) -> BitString:
    """Outcome string ``a_1 b_1 a_2 b_2 ...``."""
    return BitString(np.column_stack([trials.a, trials.b]).reshape(-1))


def setting_bits(trials: Trials) -> BitString:
    """Settings string ``x_1 y_1 x_2 y_2 ...``."""
    return BitString(np.column_stack([trials.x, trials.y]).reshape(-1))


def _segments(trials: Trials, schedule):
    """Split ``trials`` according to a PEF or a list of ``(count, PEF)`` pairs."""
    if isinstance(schedule, PEF):
        return [(trials, schedule)]
    out, start = [], 0
    for count, F in schedule:
        out.append((trials[start:start + count], F))
        start += count
    if start != len(trials):
        raise ValueError(f"schedule covers {start} trials, stream has {len(trials)}")
    return out


def _certify(trials: Trials, schedule, eps_h: float, threshold_q: float | None) -> Report:
    segs = _segments(trials, schedule)
    state = new_session(segs[0][1].power, eps_h, len(trials), threshold_q)
    for part, F in segs:
        if state.frozen or state.failed:
            break
        accumulate_many(state, part, F)
    return report(state)


def _log2_estimate(rep: Report, estimator: str) -> float:
    if estimator == "final":
        return rep.log2_u_final
    if estimator == "runningmax":
        return rep.log2_u_runningmax
    raise ValueError("estimator must be 'final' or 'runningmax'")


@dataclass(frozen=True)
class ProtocolResult:
    """Outputs and bookkeeping of one protocol run.

    ``passed`` is false only for protocol Q failures; then ``output`` and
    ``seed`` are empty.  ``banked_used`` is the number ``k`` of banked bits
    consumed by protocol P.
    """

    protocol: str
    passed: bool
    output: BitString
    seed: BitString
    params: ExtractorParams
    eps_h: float
    log2_u: float
    banked_used: int = 0
    settings: BitString | None = None
    seed_provenance: str = ""
    certification: Report | None = None

    def as_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "pass": int(self.passed),
            "sigma": self.params.sigma,
            "sigma_h": self.params.sigma_h,
            "n_bits": self.params.n,
            "eps_h": self.eps_h,
            "eps_x": self.params.eps_x,
            "eps": self.eps_h + self.params.eps_x,
            "log2_U": self.log2_u,
            "k": self.banked_used,
            "seed_length": len(self.seed),
            "seed_provenance": self.seed_provenance,
            "output": str(self.output),
        }

    def report_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.as_dict().items())


def run_protocol_q(trials: Trials, schedule, sigma_h: float, eps_h: float, eps_x: float, seed_source: SeedSource,
                   n_trials: int | None = None, estimator: str = "final", stop_early: bool = False) -> ProtocolResult:
    """Estimate-then-extract protocol that fails when the certified entropy falls short of ``sigma_h``.

    The outcome string has ``2 n_trials`` bits (``n_trials`` defaults to the
    stream length); with ``stop_early`` trials stop once the estimate reaches
    ``2^-sigma_h`` and the string is zero-filled.
    """
    n_trials = len(trials) if n_trials is None else n_trials
    if len(trials) > n_trials:
        raise ValueError("more trials than the fixed protocol length")
    n = 2 * n_trials
    if not sigma_h > 0:
        raise ExtractorError("sigma_h must be positive")
    if sigma_h > n:
        raise ExtractorError(f"sigma_h={sigma_h} exceeds the outcome length n={n}")
    h_in = sigma_h - math.log2(1.0 + 2.0 ** (sigma_h - n))  # -log2(2^-sigma_h + 2^-n)
    params = toeplitz_params(n, h_in, eps_x)

    rep = _certify(trials, schedule, eps_h, 2.0**-sigma_h if stop_early else None)
    log2_u = _log2_estimate(rep, estimator)
    if not log2_u <= -sigma_h:
        return ProtocolResult("Q", False, BitString(), BitString(), params, eps_h, log2_u,
                              seed_provenance=seed_source.provenance, certification=rep)
    d = outcome_bits(trials[:rep.n])
    d = d + BitString.zeros(n - len(d))
    seed = seed_source.take(params.l)
    out = toeplitz_extract(d, seed, params.sigma)
    return ProtocolResult("Q", True, out, seed, params, eps_h, log2_u,
                          seed_provenance=seed_source.provenance, certification=rep)


def banked_bits_needed(sigma_h: int, log2_p: float) -> int:
    """``k = max(0, ceil(sigma_h - log2(1/p)))`` with ``p`` capped at 1."""
    log2_p = min(log2_p, 0.0)
    if log2_p == -math.inf:
        return 0
    return max(0, math.ceil(sigma_h + log2_p - 1e-12))


def run_protocol_p(trials: Trials, schedule, sigma_h: int, eps_h: float, eps_x: float, seed_source: SeedSource,
                   banked_source: SeedSource, n_trials: int | None = None, estimator: str = "final",
                   publish_settings: bool = False) -> ProtocolResult:
    """Estimate-then-extract protocol that never fails, topping up entropy from banked bits.

    ``publish_settings`` releases the settings string with the seed; set it
    only when the settings distribution is known and independent of any
    adversary, which this driver cannot check.
    """
    n_trials = len(trials) if n_trials is None else n_trials
    if len(trials) > n_trials:
        raise ValueError("more trials than the fixed protocol length")
    if int(sigma_h) != sigma_h or sigma_h < 1:
        raise ExtractorError("protocol P needs a positive integer sigma_h")
    sigma_h = int(sigma_h)
    n = 2 * n_trials
    params = toeplitz_params(n + sigma_h, sigma_h, eps_x)

    rep = _certify(trials, schedule, eps_h, None)
    log2_u = _log2_estimate(rep, estimator)
    k = banked_bits_needed(sigma_h, log2_u)
    seed = seed_source.take(params.l)
    banked = banked_source.take(k)
    d = outcome_bits(trials) + BitString.zeros(n - 2 * len(trials))
    d = d + banked + BitString.zeros(sigma_h - k)
    out = toeplitz_extract(d, seed, params.sigma)
    z = setting_bits(trials) if publish_settings else None
    return ProtocolResult("P", True, out, seed, params, eps_h, log2_u, k, z,
                          seed_provenance=seed_source.provenance, certification=rep)
