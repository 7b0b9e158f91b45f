"""Maximum-likelihood projection of empirical frequencies onto a conditional polytope."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bellmodel import ConditionalDistribution, conditional_extreme_points


class FitError(RuntimeError):
    """The projection did not meet its KKT tolerance."""


@dataclass(frozen=True)
class FrequencyTable:
    """Counts ``N[z, c]``; noninteger weights are accepted for distribution-valued input."""

    counts: np.ndarray

    def __post_init__(self):
        n = np.array(self.counts, dtype=float).reshape(4, 4)
        if not np.all(np.isfinite(n)) or n.min() < 0:
            raise ValueError("counts must be finite and nonnegative")
        if n.sum() <= 0:
            raise ValueError("frequency table is empty")
        n.setflags(write=False)
        object.__setattr__(self, "counts", n)

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    @property
    def freqs(self) -> np.ndarray:
        return self.counts / self.total

    @property
    def settings_freqs(self) -> np.ndarray:
        return self.freqs.sum(axis=1)

    def conditional(self) -> np.ndarray:
        rows = self.counts.sum(axis=1, keepdims=True)
        if np.any(rows == 0):
            raise ValueError("some setting was never observed")
        return self.counts / rows

    @classmethod
    def from_trials(cls, trials) -> "FrequencyTable":
        n = np.zeros((4, 4))
        for tr in trials:
            n[tr.x + 2 * tr.y, tr.a + 2 * tr.b] += 1
        return cls(n)

    @classmethod
    def from_distribution(cls, probs, total: float = 1.0) -> "FrequencyTable":
        return cls(np.asarray(probs, float).reshape(4, 4) * total)


@dataclass(frozen=True)
class FitResult:
    """Projected conditional distribution, its vertex weights and diagnostics."""

    cond: ConditionalDistribution
    weights: np.ndarray
    objective: float
    kkt_residual: float
    settings_freqs: np.ndarray


def log_likelihood_ratio(freq: FrequencyTable, cond) -> float:
    """``sum f(cz) log(nu(c|z)/f(c|z))`` over cells with ``f > 0``."""
    t = cond.table if isinstance(cond, ConditionalDistribution) else np.asarray(cond, float)
    f = freq.freqs
    fc = freq.conditional()
    pos = f > 0
    with np.errstate(divide="ignore"):
        return float(np.sum(f[pos] * (np.log(t[pos]) - np.log(fc[pos]))))


def ml_project(freq: FrequencyTable, kind: str = "NS", kkt_tol: float = 1e-8, max_iter: int = 500,
               vertices=None) -> FitResult:
    """Most likely conditional distribution in the ``kind`` polytope for ``freq``.

    The distribution is parameterized by convex weights on the polytope's
    conditional vertices and the concave log-likelihood is maximized with an
    equality-constrained log-barrier Newton method.  Optimality is certified by
    the KKT conditions ``g_k <= 1`` and ``w_k (1 - g_k) = 0`` with
    ``g_k = sum f V_k(c|z) / nu(c|z)``.
    """
    freq.conditional()  # raises on unobserved settings
    points = vertices if vertices is not None else conditional_extreme_points(kind)
    V = np.array([p.table if isinstance(p, ConditionalDistribution) else p for p in points], float)
    K = len(V)
    f = freq.freqs.reshape(-1)
    pos = f > 0
    J = V.reshape(K, -1)[:, pos].T  # cells x vertices
    fp = f[pos]
    if np.any(J.max(axis=1) <= 0):
        raise FitError("an observed cell has probability zero throughout the polytope")

    w = np.full(K, 1.0 / K)
    t = 1.0
    total_iter = 0
    while True:
        for _ in range(max_iter):
            total_iter += 1
            nu = J @ w
            g = J.T @ (fp / nu)
            grad = -t * g - 1.0 / w
            H = t * (J.T * (fp / nu**2)) @ J
            H[np.diag_indices(K)] += 1.0 / w**2
            # Newton step on the simplex: [H 1; 1' 0][dw; eta] = [-grad; 0]
            kkt = np.zeros((K + 1, K + 1))
            kkt[:K, :K] = H
            kkt[:K, K] = 1.0
            kkt[K, :K] = 1.0
            rhs = np.concatenate([-grad, [0.0]])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
            dw = sol[:K]
            lam2 = float(dw @ H @ dw)
            # centering need not be exact; the final KKT check certifies the result
            if lam2 / 2.0 <= 1e-10:
                break
            lam = math.sqrt(max(lam2, 0.0))
            alpha = 1.0 if lam < 0.25 else 1.0 / (1.0 + lam)
            neg = dw < 0
            if np.any(neg):
                alpha = min(alpha, 0.99 * float(np.min(-w[neg] / dw[neg])))
            w = w + alpha * dw
        if K / t < 0.1 * kkt_tol or total_iter > 20 * max_iter:
            break
        t *= 20.0

    w = np.maximum(w, 0.0)
    w /= w.sum()
    table = np.einsum("k,kzc->zc", w, V)
    table /= table.sum(axis=1, keepdims=True)
    nu = J @ w
    g = J.T @ (fp / nu)
    residual = float(max(np.max(g - 1.0), 0.0) + np.max(w * np.abs(1.0 - g)))
    if residual > kkt_tol:
        raise FitError(f"KKT residual {residual:.3g} exceeds {kkt_tol:.3g}")
    cond = ConditionalDistribution(table)
    return FitResult(cond, w, log_likelihood_ratio(freq, cond), residual, freq.settings_freqs)
