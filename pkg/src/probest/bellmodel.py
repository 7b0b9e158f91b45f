"""Distributions, polytope vertices and Bell functions for the (2,2,2) Bell test.

Index conventions used throughout the package:

* settings ``z = x + 2*y`` so rows are ordered ``xy = 00, 10, 01, 11``;
* outcomes ``c = a + 2*b`` so columns are ordered ``ab = 00, 10, 01, 11``.

Conditional tables are ``(4, 4)`` arrays ``p[z, c] = p(ab|xy)``.  Joint
distributions are ``(S, 4)`` arrays ``p[s, c]`` where ``S`` is the number of
settings values (4 for plain Bell trials, 8 for spot-checking trials where
``s = z + 4*t``).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linprog

SETTINGS = ((0, 0), (1, 0), (0, 1), (1, 1))
OUTCOMES = ((0, 0), (1, 0), (0, 1), (1, 1))
TSIRELSON = (math.sqrt(2.0) - 1.0) / 4.0
Q_MIX = math.sqrt(2.0) - 1.0

ROW_TOL = 1e-12
CONSTRUCTION_TOL = 1e-12
DATA_TOL = 1e-9


def setting_index(x: int, y: int) -> int:
    return x + 2 * y


def outcome_index(a: int, b: int) -> int:
    return a + 2 * b


@dataclass(frozen=True)
class ConditionalDistribution:
    """Settings-conditional outcome table ``p(ab|xy)``."""

    table: np.ndarray

    def __post_init__(self):
        t = np.array(self.table, dtype=float)
        if t.shape != (4, 4):
            raise ValueError(f"conditional table must be 4x4, got {t.shape}")
        if not np.all(np.isfinite(t)) or t.min() < 0.0 or t.max() > 1.0:
            raise ValueError("conditional probabilities must lie in [0, 1]")
        dev = np.abs(t.sum(axis=1) - 1.0).max()
        if dev > ROW_TOL:
            raise ValueError(f"conditional rows must sum to 1 (deviation {dev:.3g})")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    def prob(self, a: int, b: int, x: int, y: int) -> float:
        return float(self.table[setting_index(x, y), outcome_index(a, b)])

    @classmethod
    def from_rows(cls, rows, renormalize: bool = False) -> "ConditionalDistribution":
        t = np.array(rows, dtype=float)
        if renormalize:
            t = t / t.sum(axis=1, keepdims=True)
        return cls(t)


@dataclass(frozen=True)
class SettingsDistribution:
    """Distribution ``nu(xy)`` of the settings pair."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float).reshape(-1)
        if p.size == 0 or p.min() < 0.0 or abs(p.sum() - 1.0) > ROW_TOL:
            raise ValueError("settings probabilities must be nonnegative and sum to 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, n: int = 4) -> "SettingsDistribution":
        return cls(np.full(n, 1.0 / n))


@dataclass(frozen=True)
class JointDistribution:
    """Joint distribution ``p(abxy)`` stored as an ``(S, 4)`` array ``[settings, outcome]``."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim == 1:
            p = p.reshape(-1, 4)
        if p.ndim != 2 or p.shape[1] != 4:
            raise ValueError("joint distribution must have shape (S, 4)")
        if p.min() < 0.0 or abs(p.sum() - 1.0) > ROW_TOL:
            raise ValueError("joint probabilities must be nonnegative and sum to 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def settings(self) -> np.ndarray:
        return self.probs.sum(axis=1)

    def conditional(self) -> np.ndarray:
        """Rows ``p(c|z)``; rows with zero settings mass are returned as zeros."""
        s = self.settings
        out = np.zeros_like(self.probs)
        pos = s > 0
        out[pos] = self.probs[pos] / s[pos, None]
        return out


def semidirect(cond: ConditionalDistribution | np.ndarray, settings) -> JointDistribution:
    """``cond ⋊ settings``: the joint ``p(c|z) nu(z)``."""
    table = cond.table if isinstance(cond, ConditionalDistribution) else np.asarray(cond)
    nu = settings.probs if isinstance(settings, SettingsDistribution) else np.asarray(settings)
    return JointDistribution(table * nu[:, None])


# -- extreme points ---------------------------------------------------------


def lr_deterministic(fa: Sequence[int], fb: Sequence[int]) -> np.ndarray:
    t = np.zeros((4, 4))
    for z, (x, y) in enumerate(SETTINGS):
        t[z, outcome_index(fa[x], fb[y])] = 1.0
    return t


def pr_box(g: Sequence[int]) -> np.ndarray:
    """PR box ``nu_g(ab|xy) = [a = b xor g(xy)] / 2``; ``g`` is indexed by ``z``."""
    if sum(g) % 2 != 1:
        raise ValueError("PR box requires |g^-1(1)| odd")
    t = np.zeros((4, 4))
    for z in range(4):
        for c, (a, b) in enumerate(OUTCOMES):
            if a == b ^ g[z]:
                t[z, c] = 0.5
    return t


def _lr_functions():
    for fa0, fa1, fb0, fb1 in itertools.product((0, 1), repeat=4):
        yield (fa0, fa1), (fb0, fb1)


def pr_functions() -> list[tuple[int, int, int, int]]:
    """The 8 functions ``g`` (as tuples over ``z``) with odd support."""
    return [g for g in itertools.product((0, 1), repeat=4) if sum(g) % 2 == 1]


def _lr_tables() -> list[np.ndarray]:
    return [lr_deterministic(fa, fb) for fa, fb in _lr_functions()]


def conditional_extreme_points(kind: str) -> list[ConditionalDistribution]:
    """Vertices of the LR, non-signaling (NS) or Tsirelson-constrained (Q) polytope.

    Ordering is canonical: LR points by ``(f_A(0), f_A(1), f_B(0), f_B(1))``,
    then PR-derived points by ``g`` and, for Q, by LR-partner index.
    """
    kind = kind.upper()
    lr = _lr_tables()
    if kind == "LR":
        tables = lr
    elif kind == "NS":
        tables = lr + [pr_box(g) for g in pr_functions()]
    elif kind == "Q":
        tables = list(lr)
        for g in pr_functions():
            bg = bell_function("Bg", g)
            box = pr_box(g)
            for t in lr:
                if abs(bell_value(bg, t)) < CONSTRUCTION_TOL:
                    tables.append((1.0 - Q_MIX) * t + Q_MIX * box)
    else:
        raise ValueError(f"unknown polytope kind {kind!r}")
    return [ConditionalDistribution(t) for t in tables]


def bias_settings_polytope(b: float) -> list[SettingsDistribution]:
    """Extreme points of ``Cvx(B_{X,b} ⊗ B_{Y,b})``."""
    if not 0.0 <= b < 1.0:
        raise ValueError("bias must satisfy 0 <= b < 1")
    if b == 0.0:
        return [SettingsDistribution.uniform()]
    points = []
    for u, v in itertools.product((0, 1), repeat=2):
        nu = np.empty(4)
        for z, (x, y) in enumerate(SETTINGS):
            nu[z] = (1 + (-1) ** (u + x) * b) / 2 * (1 + (-1) ** (v + y) * b) / 2
        points.append(SettingsDistribution(nu))
    return points


@dataclass(frozen=True)
class Model:
    """Finite vertex list of a free-for-Z set of joint distributions.

    ``vertices`` has shape ``(V, S, 4)``.  ``cond`` and ``settings`` keep the
    factors each vertex was assembled from.
    """

    vertices: np.ndarray
    kind: str = "custom"
    cond: np.ndarray | None = field(default=None, repr=False)
    settings: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 3 or v.shape[2] != 4 or v.shape[0] == 0:
            raise ValueError("model vertices must have shape (V, S, 4) with V >= 1")
        if v.min() < 0.0 or np.abs(v.sum(axis=(1, 2)) - 1.0).max() > ROW_TOL:
            raise ValueError("every model vertex must be a probability distribution")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    def __len__(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_settings(self) -> int:
        return self.vertices.shape[1]

    def vertex(self, i: int) -> JointDistribution:
        return JointDistribution(self.vertices[i])

    def conditionals(self) -> np.ndarray:
        """``nu(c|s)`` per vertex with zero rows where ``nu(s) = 0``."""
        s = self.vertices.sum(axis=2, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(s > 0, self.vertices / np.where(s > 0, s, 1.0), 0.0)
        return out


def assemble_model(cond_points, settings_points, kind: str = "custom") -> Model:
    """All pairings ``cond ⋊ settings`` (the vertex set of the product polytope)."""
    cond_points = list(cond_points)
    settings_points = list(settings_points)
    if not cond_points or not settings_points:
        raise ValueError("need at least one conditional and one settings point")
    cond = np.array([c.table if isinstance(c, ConditionalDistribution) else c for c in cond_points], float)
    nus = np.array([s.probs if isinstance(s, SettingsDistribution) else s for s in settings_points], float)
    if cond.shape[1:] != (4, 4) or nus.shape[1] != 4:
        raise ValueError("conditionals must be 4x4 and settings 4-vectors")
    for c in cond:
        ConditionalDistribution(c)
    for s in nus:
        SettingsDistribution(s)
    verts = cond[:, None, :, :] * nus[None, :, :, None]
    verts = verts.reshape(-1, 4, 4)
    cond_rep = np.repeat(cond, len(nus), axis=0)
    nus_rep = np.tile(nus, (len(cond), 1))
    return Model(verts, kind=kind, cond=cond_rep, settings=nus_rep)


def standard_model(kind: str, bias: float = 0.0) -> Model:
    """``kind ∈ {LR, NS, Q}`` conditionals combined with the bias-``b`` settings polytope."""
    label = kind.upper() if bias == 0.0 else f"{kind.upper()}+bias({bias:g})"
    return assemble_model(conditional_extreme_points(kind), bias_settings_polytope(bias), kind=label)


def fixed_settings_model(kind: str, settings) -> Model:
    return assemble_model(conditional_extreme_points(kind), [settings], kind=f"{kind.upper()}+fixed")


# -- Bell functions -----------------------------------------------------------


@dataclass(frozen=True)
class BellFunction:
    """Real function ``B(abxy)`` stored as a ``(4, 4)`` array ``[z, c]``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(4, 4)
        if not np.all(np.isfinite(v)):
            raise ValueError("Bell function values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __call__(self, a: int, b: int, x: int, y: int) -> float:
        return float(self.values[setting_index(x, y), outcome_index(a, b)])


def bell_function(kind: str = "CHSH", g: Sequence[int] | None = None) -> BellFunction:
    """CHSH variant ``([xy=11] - [xy≠11]) |a-b|`` or the PR-box-adapted ``B_g``."""
    v = np.zeros((4, 4))
    if kind.upper() == "CHSH":
        for z, (x, y) in enumerate(SETTINGS):
            sign = 1.0 if (x, y) == (1, 1) else -1.0
            for c, (a, b) in enumerate(OUTCOMES):
                v[z, c] = sign * abs(a - b)
        return BellFunction(v)
    if kind.upper() != "BG":
        raise ValueError(f"unknown Bell function kind {kind!r}")
    if g is None or len(g) != 4 or any(gz not in (0, 1) for gz in g) or sum(g) % 2 != 1:
        raise ValueError("g must map the 4 settings to {0,1} with odd support")
    p = 0 if sum(g) == 1 else 1
    for z in range(4):
        for c, (a, b) in enumerate(OUTCOMES):
            v[z, c] = -((-1) ** (g[z] + p)) * float(a != b ^ p)
    return BellFunction(v)


def bell_value(B: BellFunction | np.ndarray, dist) -> float:
    """``Σ B(abxy) p(abxy)``.

    A bare ``(4, 4)`` conditional table is combined with uniform settings.
    """
    vals = B.values if isinstance(B, BellFunction) else np.asarray(B)
    if isinstance(dist, JointDistribution):
        p = dist.probs
    elif isinstance(dist, ConditionalDistribution):
        p = dist.table / 4.0
    else:
        p = np.asarray(dist, dtype=float) / 4.0
    return float(np.sum(vals * p))


def tsirelson_values(cond) -> np.ndarray:
    """``E(B_g)`` at ``cond ⋊ uniform`` for the 8 PR functions ``g``."""
    return np.array([bell_value(bell_function("Bg", g), cond) for g in pr_functions()])


def most_violated_bell_function(cond) -> tuple[tuple[int, int, int, int], BellFunction]:
    """The ``B_g`` with the largest expectation at ``cond ⋊ uniform``."""
    vals = tsirelson_values(cond)
    g = pr_functions()[int(np.argmax(vals))]
    return g, bell_function("Bg", g)


def satisfies_tsirelson(cond, tol: float = DATA_TOL) -> bool:
    return bool(tsirelson_values(cond).max() <= TSIRELSON + tol)


@dataclass(frozen=True)
class NonsignalingResult:
    passed: bool
    max_violation: float

    def __bool__(self):
        return self.passed


def nonsignaling_check(cond, tol: float = DATA_TOL) -> NonsignalingResult:
    t = cond.table if isinstance(cond, ConditionalDistribution) else np.asarray(cond, float)
    t = t.reshape(4, 4)
    # marginals p(a|xy) and p(b|xy)
    pa = np.stack([t[:, [0, 2]].sum(axis=1), t[:, [1, 3]].sum(axis=1)], axis=1)
    pb = np.stack([t[:, [0, 1]].sum(axis=1), t[:, [2, 3]].sum(axis=1)], axis=1)
    viol = 0.0
    for x in (0, 1):
        viol = max(viol, np.abs(pa[setting_index(x, 0)] - pa[setting_index(x, 1)]).max())
    for y in (0, 1):
        viol = max(viol, np.abs(pb[setting_index(0, y)] - pb[setting_index(1, y)]).max())
    return NonsignalingResult(viol <= tol, float(viol))


def in_convex_hull(point: np.ndarray, points: Iterable[np.ndarray], tol: float = 1e-9) -> bool:
    """LP membership test: is ``point`` a convex combination of ``points``?"""
    pts = np.array([np.asarray(p, float).reshape(-1) for p in points])
    target = np.asarray(point, float).reshape(-1)
    a_eq = np.vstack([pts.T, np.ones(len(pts))])
    b_eq = np.append(target, 1.0)
    # minimize the l1 residual so numerical near-membership is measurable
    m, k = a_eq.shape
    c = np.concatenate([np.zeros(k), np.ones(2 * m)])
    a = np.hstack([a_eq, np.eye(m), -np.eye(m)])
    res = linprog(c, A_eq=a, b_eq=b_eq, bounds=(0, None), method="highs")
    return bool(res.status == 0 and res.fun <= tol)


# -- spot-checking lift ----------------------------------------------------------

DEFAULT_SETTING = 3  # xy = 11


def spotcheck_settings(r: float, z0: int = DEFAULT_SETTING) -> np.ndarray:
    """Settings-and-test-flag distribution ``nu_r`` indexed by ``s = z + 4*t``.

    Test trials (``t=1``) have uniform settings with total probability ``r``;
    the remaining trials use the fixed setting ``z0``.
    """
    if not 0.0 < r <= 1.0:
        raise ValueError("test probability r must lie in (0, 1]")
    nu = np.zeros(8)
    nu[4:] = r / 4.0
    nu[z0] += 1.0 - r
    return nu


def lift_conditional(cond) -> np.ndarray:
    """Duplicate ``p(c|z)`` across the test flag: an ``(8, 4)`` table ``p(c|zt)``."""
    t = cond.table if isinstance(cond, ConditionalDistribution) else np.asarray(cond, float)
    return np.concatenate([t, t], axis=0)


def spotcheck_distribution(cond, r: float, z0: int = DEFAULT_SETTING) -> JointDistribution:
    return JointDistribution(lift_conditional(cond) * spotcheck_settings(r, z0)[:, None])


def spotcheck_model(kind_or_points, r: float, z0: int = DEFAULT_SETTING) -> Model:
    """Lifted model with conditionals independent of the test flag and settings ``nu_r``."""
    if isinstance(kind_or_points, str):
        points = conditional_extreme_points(kind_or_points)
        label = kind_or_points.upper()
    else:
        points = list(kind_or_points)
        label = "custom"
    nu = spotcheck_settings(r, z0)
    cond = np.array([lift_conditional(p) for p in points])
    return Model(cond * nu[None, :, None], kind=f"{label}+spotcheck({r:g})", cond=cond,
                 settings=np.tile(nu, (len(points), 1)))
