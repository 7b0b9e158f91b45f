"""Independent reference computations used by the tests.

Nothing here calls the package's solvers: PEF and ML optima come from cvxpy
(Clarabel), vertex lists are rebuilt from closed forms, and extractor
properties come from brute-force enumeration.
"""

from __future__ import annotations

import itertools
import math

import cvxpy as cp
import numpy as np

SQRT2 = math.sqrt(2.0)
TSIRELSON = (SQRT2 - 1.0) / 4.0

# z = x + 2y, c = a + 2b
SETTINGS = [(0, 0), (1, 0), (0, 1), (1, 1)]
OUTCOMES = [(0, 0), (1, 0), (0, 1), (1, 1)]


def lr_point(fa, fb) -> np.ndarray:
    t = np.zeros((4, 4))
    for z, (x, y) in enumerate(SETTINGS):
        t[z, OUTCOMES.index((fa[x], fb[y]))] = 1.0
    return t


def all_lr_points() -> list[np.ndarray]:
    return [lr_point((a0, a1), (b0, b1)) for a0, a1, b0, b1 in itertools.product((0, 1), repeat=4)]


def pr_point(g) -> np.ndarray:
    t = np.zeros((4, 4))
    for z in range(4):
        for c, (a, b) in enumerate(OUTCOMES):
            t[z, c] = 0.5 * (a == (b ^ g[z]))
    return t


def odd_functions():
    return [g for g in itertools.product((0, 1), repeat=4) if sum(g) % 2]


def chsh_value(cond) -> float:
    """CHSH variant at ``cond`` with uniform settings, by direct enumeration."""
    total = 0.0
    for z, (x, y) in enumerate(SETTINGS):
        sign = 1.0 if (x, y) == (1, 1) else -1.0
        for c, (a, b) in enumerate(OUTCOMES):
            total += 0.25 * sign * abs(a - b) * cond[z, c]
    return total


def bg_value(cond, g) -> float:
    p = 0 if sum(g) == 1 else 1
    total = 0.0
    for z in range(4):
        for c, (a, b) in enumerate(OUTCOMES):
            total += 0.25 * -((-1) ** (g[z] + p)) * (a != (b ^ p)) * cond[z, c]
    return total


def entropy_bits(joint) -> float:
    joint = np.asarray(joint, float)
    out = 0.0
    for row in joint:
        s = row.sum()
        for p in row:
            if p > 0:
                out -= p * math.log2(p / s)
    return out


def hull_member(point, points, tol: float = 1e-9) -> bool:
    """Feasibility of ``point = sum w_k points_k`` with ``w`` in the simplex."""
    P = np.array([np.ravel(p) for p in points]).T
    w = cp.Variable(P.shape[1], nonneg=True)
    prob = cp.Problem(cp.Minimize(cp.norm1(P @ w - np.ravel(point))), [cp.sum(w) == 1])
    prob.solve(solver=cp.CLARABEL)
    return prob.value <= tol


def optimal_pef(vertices, rho, beta: float):
    """Optimal PEF by conic programming: maximize ``sum rho ln F`` over valid ``F``.

    Returns ``(F, expected ln F)``.  Written in ``G`` with ``F = 1 + beta G`` to
    keep the constraints well scaled.
    """
    V = np.asarray(vertices, float).reshape(len(vertices), -1)
    S = np.asarray(vertices).shape[1]
    cond = (np.asarray(vertices, float) / np.asarray(vertices, float).sum(axis=2, keepdims=True)).reshape(len(V), -1)
    with np.errstate(divide="ignore"):
        a = np.where(V > 0, V * np.exp(beta * np.log(np.where(cond > 0, cond, 1.0))), 0.0)
        b = -np.where(V > 0, V * np.expm1(beta * np.log(np.where(cond > 0, cond, 1.0))), 0.0).sum(axis=1) / beta
    r = np.ravel(rho)
    G = cp.Variable(r.size)
    obj = cp.Maximize(r @ cp.log(1 + beta * G))
    prob = cp.Problem(obj, [a @ G <= b, 1 + beta * G >= 0])
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    F = np.maximum(1 + beta * G.value, 0.0)
    lhs = a @ ((F - 1) / beta) - b
    if lhs.max() > 0:
        F = F / (1 + beta * lhs.max())
    return F.reshape(S, 4), float(np.sum(r[r > 0] * np.log(F.ravel()[r > 0])))


def ml_fit(freq, points):
    """Maximum-likelihood conditional distribution in ``Cvx(points)`` via exponential cones."""
    f = np.asarray(freq, float)
    f = f / f.sum()
    P = np.array([np.ravel(p) for p in points]).T
    w = cp.Variable(P.shape[1], nonneg=True)
    pos = np.ravel(f) > 0
    nu = P[pos] @ w
    prob = cp.Problem(cp.Maximize(np.ravel(f)[pos] @ cp.log(nu)), [cp.sum(w) == 1])
    prob.solve(solver=cp.CLARABEL)
    table = (P @ w.value).reshape(4, 4)
    return table, log_likelihood_ratio(f, table)


def log_likelihood_ratio(freq, table) -> float:
    f = np.asarray(freq, float)
    f = f / f.sum()
    fc = f / f.sum(axis=1, keepdims=True)
    pos = f > 0
    return float(np.sum(f[pos] * np.log(table[pos] / fc[pos])))


# -- extractor enumeration -----------------------------------------------------------


def toeplitz_table(n: int, m: int) -> np.ndarray:
    """``out[s, d]`` as an integer in ``[0, 2^m)`` for every seed ``s`` and input ``d``.

    Bit ``i`` of the integer ``d`` is ``d[i]``; likewise for seeds.
    """
    l = n + m - 1
    seeds = (np.arange(2**l)[:, None] >> np.arange(l)) & 1
    data = (np.arange(2**n)[:, None] >> np.arange(n)) & 1
    out = np.zeros((2**l, 2**n), dtype=np.int64)
    for j in range(m):
        bits = (seeds[:, j:j + n] @ data.T) & 1
        out |= bits << j
    return out


def strong_tv(table: np.ndarray, dist: np.ndarray, m: int) -> float:
    """TV distance of ``(E(D, S), S)`` from uniform for input distribution ``dist`` and uniform ``S``."""
    support = np.flatnonzero(dist)
    sub = table[:, support]
    n_seeds = table.shape[0]
    idx = sub + (np.arange(n_seeds)[:, None] << m)
    p = np.bincount(idx.ravel(), weights=np.tile(dist[support], n_seeds), minlength=n_seeds << m)
    return 0.5 * np.abs(p - 2.0**-m).sum() / n_seeds


# (d, seed, output) computed with a plain-Python loop over the defining XOR sum
TOEPLITZ_GOLDEN = [
    ("0011000011101000",
     "01010110000110011000001",
     "00111100"),
    ("0101010100010011011101001001111001010110001110000000111000101111",
     "1001110000010000011100001101101100001010010000011000110001000001100101010100111",
     "0000100001010111"),
    ("01111011110100100010010010101100001001110100111001010011000110100000000100000101"
     "01011110011101011010111010100110111000100010110100111010011100000000010011100110"
     "0000010010010101111100111010111101100100",
     "11001101001001101011001111010101101100100001100001011100011100101010011101100010"
     "00111000100110001101011101011001111011111101010111000101000101110010010101010000"
     "1100000001101101111000011011100011111101010101100001001111111111000010101101001",
     "0001010101000011011010101010111000010010"),
]


def flat_distribution(support, size):
    dist = np.zeros(size)
    dist[list(support)] = 1.0 / len(support)
    return dist


def worst_flat_tv(n, m, eps_x, rng, random_flats=200):
    """Largest TV over flat inputs of min-entropy ``m + 2 log2(1/eps_x)``."""
    k = m + int(round(2 * math.log2(1 / eps_x)))
    table = toeplitz_table(n, m)
    size = 2**n
    worst = 0.0
    for _ in range(random_flats):
        worst = max(worst, strong_tv(table, flat_distribution(rng.choice(size, 2**k, replace=False), size), m))
    # coordinate-fixed subspaces and their cosets
    for free in itertools.combinations(range(n), k):
        fixed = [i for i in range(n) if i not in free]
        for pattern in (0, size - 1):
            base = sum(((pattern >> i) & 1) << i for i in fixed)
            support = [base | sum(((v >> j) & 1) << free[j] for j in range(k)) for v in range(2**k)]
            worst = max(worst, strong_tv(table, flat_distribution(support, size), m))
    # random linear subspaces
    for _ in range(50):
        basis = rng.integers(1, size, k)
        span = {0}
        for v in basis:
            span |= {u ^ int(v) for u in span}
        if len(span) == 2**k:
            worst = max(worst, strong_tv(table, flat_distribution(span, size), m))
    # greedy: grow a support one input at a time, keeping the worst choice
    support = [0]
    while len(support) < 2**k:
        cands = [c for c in rng.choice(size, 24, replace=False) if c not in support]
        support.append(max(cands, key=lambda c: strong_tv(table, flat_distribution(support + [c], size), m)))
    return max(worst, strong_tv(table, flat_distribution(support, size), m))


def binomial_upper(p: float, n: int, k: float = 3.0) -> float:
    return p + k * math.sqrt(p * (1 - p) / n)
