"""Trial-by-trial probability estimation with test supermartingales.

The running product ``T_n`` of PEF values is kept as ``log2 T_n``.  With power
``beta`` and error bound ``eps_h``, ``U = (T_n eps_h)^(-1/beta)`` upper-bounds the
settings-conditional probability of the observed outcomes except with
probability ``eps_h``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .bellmodel import JointDistribution, Model, assemble_model, conditional_extreme_points
from .mlfit import FrequencyTable, ml_project
from .pefopt import PEF, LN2, optimize_pef, validate_pef

DEFAULT_CADENCE = 50_000
DEFAULT_WARMUP = 10_000


@dataclass(frozen=True)
class TrialRecord:
    x: int
    y: int
    a: int
    b: int
    t: int | None = None

    def __post_init__(self):
        for name in ("x", "y", "a", "b"):
            if getattr(self, name) not in (0, 1):
                raise ValueError(f"{name} must be 0 or 1")
        if self.t not in (None, 0, 1):
            raise ValueError("test flag must be 0, 1 or absent")

    @property
    def z(self) -> int:
        return self.x + 2 * self.y

    @property
    def c(self) -> int:
        return self.a + 2 * self.b


@dataclass(frozen=True)
class Trials:
    """A stream of trials held as integer arrays; ``t`` is ``None`` when no test flags exist."""

    x: np.ndarray
    y: np.ndarray
    a: np.ndarray
    b: np.ndarray
    t: np.ndarray | None = None

    def __post_init__(self):
        arrs = [np.asarray(getattr(self, k), dtype=np.int8).reshape(-1) for k in ("x", "y", "a", "b")]
        n = arrs[0].size
        if any(a.size != n for a in arrs):
            raise ValueError("trial arrays must have equal length")
        for name, a in zip(("x", "y", "a", "b"), arrs):
            if a.size and (a.min() < 0 or a.max() > 1):
                raise ValueError(f"{name} values must be 0 or 1")
            object.__setattr__(self, name, a)
        if self.t is not None:
            t = np.asarray(self.t, dtype=np.int8).reshape(-1)
            if t.size != n or (t.size and (t.min() < 0 or t.max() > 1)):
                raise ValueError("test flags must be 0 or 1 with one per trial")
            object.__setattr__(self, "t", t)

    def __len__(self) -> int:
        return self.x.size

    def __iter__(self) -> Iterator[TrialRecord]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Trials(self.x[i], self.y[i], self.a[i], self.b[i], None if self.t is None else self.t[i])
        return TrialRecord(int(self.x[i]), int(self.y[i]), int(self.a[i]), int(self.b[i]),
                           None if self.t is None else int(self.t[i]))

    @property
    def z(self) -> np.ndarray:
        return self.x + 2 * self.y

    @property
    def c(self) -> np.ndarray:
        return self.a + 2 * self.b

    def settings_index(self, n_settings: int = 4) -> np.ndarray:
        """``z`` for plain PEFs, ``z + 4t`` for spot-check PEFs."""
        if n_settings == 4:
            return self.z
        if n_settings == 8:
            if self.t is None:
                raise ValueError("spot-check PEFs need test flags")
            return self.z + 4 * self.t
        raise ValueError(f"unsupported number of settings {n_settings}")

    def counts(self) -> np.ndarray:
        n = np.zeros((4, 4))
        np.add.at(n, (self.z, self.c), 1)
        return n

    def frequency_table(self) -> FrequencyTable:
        return FrequencyTable(self.counts())

    @classmethod
    def from_records(cls, records: Iterable[TrialRecord]) -> "Trials":
        recs = list(records)
        flags = [r.t for r in recs]
        t = None if all(f is None for f in flags) else [0 if f is None else f for f in flags]
        return cls([r.x for r in recs], [r.y for r in recs], [r.a for r in recs], [r.b for r in recs], t)

    @classmethod
    def concat(cls, parts) -> "Trials":
        parts = list(parts)
        t = None if any(p.t is None for p in parts) else np.concatenate([p.t for p in parts])
        return cls(*(np.concatenate([getattr(p, k) for p in parts]) for k in ("x", "y", "a", "b")), t)


class SessionError(RuntimeError):
    """Accumulation on a frozen, failed or exhausted session."""


@dataclass
class CertState:
    """Running log-supermartingale for one certification session."""

    beta: float
    eps_h: float
    n_max: int
    threshold_q: float | None = None
    log2_T: float = 0.0
    log2_T_max: float = 0.0
    n: int = 0
    frozen: bool = False
    failed: bool = False

    @property
    def log2_u_final(self) -> float:
        return -(self.log2_T + math.log2(self.eps_h)) / self.beta

    @property
    def log2_u_runningmax(self) -> float:
        return -(self.log2_T_max + math.log2(self.eps_h)) / self.beta


def new_session(beta: float, eps_h: float, n_max: int, threshold_q: float | None = None) -> CertState:
    if not beta > 0:
        raise ValueError("beta must be positive")
    if not 0.0 < eps_h < 1.0:
        raise ValueError("eps_h must lie in (0, 1)")
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    if threshold_q is not None and not 0.0 < threshold_q <= 1.0:
        raise ValueError("threshold q must lie in (0, 1]")
    return CertState(float(beta), float(eps_h), int(n_max), threshold_q)


def _check_open(state: CertState):
    if state.frozen:
        raise SessionError("session is frozen")
    if state.failed:
        raise SessionError("session failed (a PEF value was zero)")
    if state.n >= state.n_max:
        raise SessionError("session reached n_max")


def _check_power(state: CertState, F: PEF):
    if abs(F.power - state.beta) > 1e-12 * state.beta:
        raise ValueError(f"PEF power {F.power:g} differs from the session power {state.beta:g}")


def _reached_threshold(state: CertState) -> bool:
    q = state.threshold_q
    return q is not None and state.log2_u_final <= math.log2(q)


def accumulate(state: CertState, trial: TrialRecord, F: PEF) -> CertState:
    """Multiply ``T`` by ``F(trial)``; freezes once ``U_final`` reaches the threshold."""
    _check_open(state)
    _check_power(state, F)
    s = trial.z if F.n_settings == 4 else trial.z + 4 * (trial.t or 0)
    if F.n_settings == 8 and trial.t is None:
        raise ValueError("spot-check PEFs need the trial's test flag")
    lv = float(F.log_values[s, trial.c])
    state.n += 1
    if lv == -math.inf:
        state.log2_T = -math.inf
        state.failed = True
        return state
    state.log2_T += lv / LN2
    state.log2_T_max = max(state.log2_T_max, state.log2_T)
    if _reached_threshold(state):
        state.frozen = True
    return state


def accumulate_many(state: CertState, trials: Trials, F: PEF) -> CertState:
    """Vectorized :func:`accumulate` over a block of trials with a fixed PEF.

    Stops at the first trial that freezes or fails the session, as the
    trial-by-trial loop would.
    """
    if len(trials) == 0:
        return state
    _check_open(state)
    _check_power(state, F)
    room = state.n_max - state.n
    if len(trials) > room:
        raise SessionError("block exceeds the remaining trial budget")
    steps = F.log_values[trials.settings_index(F.n_settings), trials.c] / LN2
    path = state.log2_T + np.cumsum(steps)
    stop = len(path)
    bad = np.flatnonzero(~np.isfinite(path))
    if bad.size:
        stop = int(bad[0]) + 1
    if state.threshold_q is not None:
        need = -math.log2(state.threshold_q) * state.beta - math.log2(state.eps_h)
        hit = np.flatnonzero(path[:stop] >= need)
        if hit.size:
            stop = int(hit[0]) + 1
    path = path[:stop]
    state.n += stop
    if not np.isfinite(path[-1]):
        state.failed = True
        state.log2_T = -math.inf
        finite = path[np.isfinite(path)]
        if finite.size:
            state.log2_T_max = max(state.log2_T_max, float(finite.max()))
        return state
    state.log2_T = float(path[-1])
    state.log2_T_max = max(state.log2_T_max, float(path.max()))
    if _reached_threshold(state):
        state.frozen = True
    return state


@dataclass(frozen=True)
class Report:
    """Final estimates; ``log2_*`` fields avoid underflow of the raw bounds."""

    n: int
    log2_u_final: float
    log2_u_runningmax: float
    net_log2_prob: float
    sigma_h: float
    frozen: bool = False
    failed: bool = False

    @property
    def u_final(self) -> float:
        return 2.0 ** self.log2_u_final

    @property
    def u_runningmax(self) -> float:
        return 2.0 ** self.log2_u_runningmax

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "log2_U_final": self.log2_u_final,
            "log2_U_runningmax": self.log2_u_runningmax,
            "U_final": self.u_final,
            "U_runningmax": self.u_runningmax,
            "net_log2_prob": self.net_log2_prob,
            "sigma_h": self.sigma_h,
            "frozen": self.frozen,
            "failed": self.failed,
        }


def report(state: CertState) -> Report:
    if state.n < 1:
        raise SessionError("no trials accumulated")
    net = (state.log2_T + math.log2(state.eps_h)) / state.beta
    return Report(state.n, state.log2_u_final, state.log2_u_runningmax, net, max(0.0, net),
                  state.frozen, state.failed)


# -- LR p-values --------------------------------------------------------------------


def lr_pvalue_bound(trials: Trials, factors, settings=None, tol: float = 1e-9) -> float:
    """``min(1, 1/max_i T_i)`` for test factors with ``E_nu(F) <= 1`` on LR distributions.

    ``factors`` is one ``(4, 4)`` array used for every trial or a sequence of
    such arrays, one per trial.  ``settings`` is the settings distribution (or
    list of settings vertices) the factors are validated against; uniform by
    default.
    """
    n = len(trials)
    if settings is None:
        settings = [np.full(4, 0.25)]
    elif np.ndim(settings) == 1:
        settings = [settings]
    lr = assemble_model(conditional_extreme_points("LR"), settings, kind="LR")
    single = isinstance(factors, np.ndarray) and factors.ndim == 2
    table = np.asarray(factors, float) if single else None
    seen: dict[int, bool] = {}

    def check(f: np.ndarray):
        key = id(f)
        if key not in seen:
            v = validate_pef(np.asarray(f, float).reshape(4, 4), 0.0, lr, tol)
            if not v.valid:
                raise ValueError(f"test factor is not valid for LR (margin {v.margin:.3g})")
            seen[key] = True

    if single:
        check(table)
        vals = table[trials.z, trials.c]
    else:
        factors = list(factors)
        if len(factors) != n:
            raise ValueError("need one factor per trial")
        for f in factors:
            check(f)
        vals = np.array([np.asarray(f, float).reshape(4, 4)[z, c] for f, z, c in zip(factors, trials.z, trials.c)])
    with np.errstate(divide="ignore"):
        log2_path = np.cumsum(np.log2(vals))
    log2_max = max(0.0, float(np.max(log2_path))) if n else 0.0
    return float(min(1.0, 2.0 ** (-log2_max)))


# -- adaptive sessions ---------------------------------------------------------------


@dataclass(frozen=True)
class AdaptiveResult:
    report: Report
    refits: int
    last_pef: PEF
    state: CertState = field(repr=False)


def _fit_kind(model: Model, fit_kind: str | None) -> str:
    if fit_kind is not None:
        return fit_kind
    kind = model.kind.split("+")[0].upper()
    if kind not in ("NS", "Q", "LR"):
        raise ValueError("cannot infer the fit polytope from the model; pass fit_kind")
    return "NS" if kind == "LR" else kind


def adaptive_run(source: Trials, model: Model, beta: float, eps_h: float, cadence: int = DEFAULT_CADENCE,
                 warmup: int = DEFAULT_WARMUP, fit_kind: str | None = None,
                 threshold_q: float | None = None) -> AdaptiveResult:
    """Estimate-then-certify loop with periodic refits on strictly earlier trials.

    The first ``warmup`` trials use ``F = 1``.  Afterwards the conditional
    distribution is refit by maximum likelihood on all past trials every
    ``cadence`` trials and the PEF re-optimized at the refit distribution
    combined with the observed settings frequencies.  ``beta`` and ``eps_h`` are
    fixed for the whole session.
    """
    if cadence < 1 or warmup < 1:
        raise ValueError("cadence and warmup must be at least 1")
    kind = _fit_kind(model, fit_kind)
    n = len(source)
    state = new_session(beta, eps_h, max(n, 1), threshold_q)
    F = PEF.unit(beta)
    refits = 0
    pos = 0
    boundary = min(warmup, n)
    while pos < n and not (state.frozen or state.failed):
        accumulate_many(state, source[pos:boundary], F)
        pos = state.n
        if pos >= n or state.frozen or state.failed:
            break
        freq = source[:pos].frequency_table()
        try:
            fit = ml_project(freq, kind)
        except ValueError:
            # an unobserved setting: keep the current PEF until it appears
            boundary = min(pos + cadence, n)
            continue
        rho = JointDistribution(fit.cond.table * fit.settings_freqs[:, None])
        F = optimize_pef(model, rho, beta)
        refits += 1
        boundary = min(pos + cadence, n)
    return AdaptiveResult(report(state), refits, F, state)


def static_run(source: Trials, F: PEF, eps_h: float, threshold_q: float | None = None) -> Report:
    """Certify a whole stream with one fixed PEF."""
    state = new_session(F.power, eps_h, max(len(source), 1), threshold_q)
    accumulate_many(state, source, F)
    return report(state)


# -- checkpoints -------------------------------------------------------------------

_CHECKPOINT_KEYS = ("n", "beta", "eps_h", "log2_T", "log2_T_max")


def save_checkpoint(state: CertState, path) -> None:
    lines = [f"{k} = {getattr(state, k)!r}" for k in _CHECKPOINT_KEYS]
    lines.append(f"n_max = {state.n_max}")
    if state.threshold_q is not None:
        lines.append(f"threshold_q = {state.threshold_q!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> CertState:
    vals = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                k, _, v = line.partition("=")
                vals[k.strip()] = v.strip()
    missing = [k for k in _CHECKPOINT_KEYS if k not in vals]
    if missing:
        raise ValueError(f"checkpoint lacks {', '.join(missing)}")
    n = int(vals["n"])
    state = new_session(float(vals["beta"]), float(vals["eps_h"]), int(vals.get("n_max", max(n, 1))),
                        float(vals["threshold_q"]) if "threshold_q" in vals else None)
    state.n = n
    state.log2_T = float(vals["log2_T"])
    state.log2_T_max = float(vals["log2_T_max"])
    state.failed = state.log2_T == -math.inf
    state.frozen = _reached_threshold(state)
    return state
