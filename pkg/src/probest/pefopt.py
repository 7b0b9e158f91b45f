"""Probability estimation factors (PEFs): construction, validation, optimization and rates.

A PEF with power ``beta`` for a model with vertex set ``V`` is a nonnegative
function ``F(c, s)`` satisfying ``sum_cs F(cs) nu(c|s)^beta nu(cs) <= 1`` for
every ``nu`` in ``V``.  Arrays are indexed ``[s, c]`` as in :mod:`bellmodel`.

Rates are reported in bits; internals use natural logarithms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .bellmodel import BellFunction, JointDistribution, Model

LN2 = math.log(2.0)
VALID_TOL = 1e-9
LOG_FLOOR = 1e-300


class SolverError(RuntimeError):
    """Raised when an optimization does not reach its stated accuracy."""


class InfeasibleError(ValueError):
    """Raised when a distribution is outside the model or an LP is infeasible."""


def _joint_array(rho) -> np.ndarray:
    if isinstance(rho, JointDistribution):
        return rho.probs
    return JointDistribution(rho).probs


@dataclass(frozen=True)
class PEF:
    """PEF values ``F[s, c]`` with power ``beta``.

    ``log_values`` keeps ``ln F`` at full precision so that rates of factors
    close to 1 do not lose digits; it is derived from ``values`` if omitted.
    """

    values: np.ndarray
    power: float
    log_values: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v.reshape(-1, 4)
        if not self.power > 0:
            raise ValueError("PEF power must be positive")
        if not np.all(np.isfinite(v)) or v.min() < 0:
            raise ValueError("PEF values must be finite and nonnegative")
        if self.log_values is None:
            with np.errstate(divide="ignore"):
                lv = np.log(v)
        else:
            lv = np.array(self.log_values, dtype=float).reshape(v.shape)
        v.setflags(write=False)
        lv.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "log_values", lv)
        object.__setattr__(self, "power", float(self.power))

    @property
    def n_settings(self) -> int:
        return self.values.shape[0]

    def __call__(self, s: int, c: int) -> float:
        return float(self.values[s, c])

    @classmethod
    def unit(cls, power: float, n_settings: int = 4) -> "PEF":
        return cls(np.ones((n_settings, 4)), power)


@dataclass(frozen=True)
class Validation:
    valid: bool
    margin: float
    worst_vertex: int
    min_value: float

    def __bool__(self):
        return self.valid


def _constraint_terms(vertices: np.ndarray, beta: float):
    """Per-vertex arrays ``nu(cs)`` and ``ln nu(c|s)`` (``-inf`` where zero)."""
    mass = vertices.sum(axis=2, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(mass > 0, vertices / np.where(mass > 0, mass, 1.0), 0.0)
        logc = np.log(cond)
    return vertices, logc


def constraint_lhs(values: np.ndarray, beta: float, vertices: np.ndarray) -> np.ndarray:
    """``sum_cs F(cs) nu(c|s)^beta nu(cs)`` for each vertex in ``vertices``."""
    joint, logc = _constraint_terms(np.asarray(vertices, float), beta)
    with np.errstate(invalid="ignore"):
        w = np.where(joint > 0, joint * np.exp(beta * logc), 0.0)
    return np.einsum("vsc,sc->v", w, np.asarray(values, float).reshape(w.shape[1:]))


def validate_pef(F: PEF | np.ndarray, beta: float | None, model: Model | np.ndarray,
                 tol: float = VALID_TOL) -> Validation:
    """Worst constraint margin ``max_nu LHS(nu) - 1`` over the model vertices."""
    if isinstance(F, PEF):
        values, beta = F.values, F.power if beta is None else beta
    else:
        values = np.asarray(F, float)
    verts = model.vertices if isinstance(model, Model) else np.asarray(model, float)
    values = values.reshape(verts.shape[1:])
    lhs = constraint_lhs(values, beta, verts)
    worst = int(np.argmax(lhs))
    margin = float(lhs[worst] - 1.0)
    vmin = float(values.min())
    return Validation(margin <= tol and vmin >= 0.0, margin, worst, vmin)


# -- rates --------------------------------------------------------------------


def _expected_log(F: PEF, rho: np.ndarray) -> float:
    pos = rho > 0
    lv = F.log_values[pos]
    if np.any(~np.isfinite(lv)):
        return -math.inf
    return float(np.sum(rho[pos] * np.maximum(lv, math.log(LOG_FLOOR))))


def log_prob_rate(F: PEF, beta: float | None, rho, kappa: float = 0.0) -> float:
    """``E_rho(log2 F)/beta``, times ``(1 - kappa/beta)`` when ``kappa > 0``.

    Returns ``-inf`` if ``F`` vanishes on a cell of positive probability.
    """
    beta = F.power if beta is None else beta
    rho = _joint_array(rho).reshape(F.values.shape)
    if kappa == beta:
        return 0.0
    rate = _expected_log(F, rho) / (beta * LN2)
    if kappa > 0:
        rate *= 1.0 - kappa / beta
    return rate


def conditional_entropy(rho) -> float:
    """``H(C|S)`` in bits."""
    p = _joint_array(rho)
    s = p.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log2(np.where(p > 0, p / np.where(s > 0, s, 1), 1.0)), 0.0)
    return float(terms.sum())


def entropy_estimate(F: PEF, beta: float | None, rho, tol: float = 1e-9) -> float:
    """Entropy estimate ``E_rho(log2 F)/beta``, checked against ``H(C|S; rho)``."""
    est = log_prob_rate(F, beta, rho)
    if not math.isfinite(est):
        raise ValueError("PEF vanishes on a cell with positive probability")
    h = conditional_entropy(rho)
    if est > h + tol:
        raise AssertionError(f"entropy estimate {est} exceeds conditional entropy {h}")
    return est


def power_reduce(F: PEF, gamma: float) -> PEF:
    """``F**gamma`` as a PEF with power ``gamma*beta`` and the same log-prob rate."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    if gamma == 1.0:
        return F
    lv = F.log_values * gamma
    return PEF(np.exp(lv), F.power * gamma, log_values=lv)


def convex_combine(pefs, weights, include_unit: float = 0.0) -> PEF:
    """Entrywise weighted average of PEFs with a common power.

    ``include_unit`` is the weight of the trivial PEF ``F = 1``; together with
    ``weights`` it must sum to 1.
    """
    pefs = list(pefs)
    w = np.asarray(weights, dtype=float)
    if len(pefs) == 0 or len(w) != len(pefs):
        raise ValueError("need one weight per PEF")
    if w.min() < 0 or include_unit < 0 or abs(w.sum() + include_unit - 1.0) > 1e-12:
        raise ValueError("weights must be nonnegative and sum to 1")
    powers = {p.power for p in pefs}
    if len(powers) != 1:
        raise ValueError("cannot combine PEFs with different powers")
    if include_unit == 0.0 and np.count_nonzero(w) == 1:
        return pefs[int(np.flatnonzero(w)[0])]
    vals = sum(wi * p.values for wi, p in zip(w, pefs)) + include_unit
    return PEF(vals, powers.pop())


# -- PEF optimization -----------------------------------------------------------


@dataclass(frozen=True)
class SolverOptions:
    """Log-barrier settings for :func:`optimize_pef`."""

    gap_tol: float = 1e-10
    fallback_gap: float = 1e-7
    mu: float = 20.0
    newton_tol: float = 1e-9
    max_newton: int = 200
    max_outer: int = 60


def optimize_pef(model: Model, rho, beta: float, opts: SolverOptions | None = None) -> PEF:
    """Maximize ``sum rho log F`` over PEFs with power ``beta`` for ``model``.

    The problem is written in ``G`` with ``F = 1 + beta*G``, which keeps the
    vertex constraints well scaled when ``beta`` is small:
    ``a_i . G <= b_i`` where ``a_i = nu_i(cs) nu_i(c|s)^beta`` and
    ``b_i = -sum nu_i(cs) expm1(beta ln nu_i(c|s)) / beta``.  It is solved with
    a primal log-barrier Newton method from the strictly feasible point ``F < 1``.
    """
    opts = opts or SolverOptions()
    if not beta > 0:
        raise ValueError("beta must be positive")
    verts = model.vertices
    rho = _joint_array(rho)
    if rho.shape != verts.shape[1:]:
        raise ValueError(f"rho has shape {rho.shape}, model expects {verts.shape[1:]}")
    joint, logc = _constraint_terms(verts, beta)
    with np.errstate(invalid="ignore"):
        a_full = np.where(joint > 0, joint * np.exp(beta * logc), 0.0)
        b = -np.where(joint > 0, joint * np.expm1(beta * logc), 0.0).sum(axis=(1, 2)) / beta
    a_full = a_full.reshape(len(verts), -1)
    r = rho.reshape(-1)

    model_support = a_full.max(axis=0) > 0
    if np.any((r > 0) & ~model_support):
        raise InfeasibleError("rho puts mass on cells no model vertex can produce")
    if not np.any(r > 0):
        raise InfeasibleError("rho has no mass")
    active = np.flatnonzero(model_support)
    A = a_full[:, active]
    ra = r[active]

    G = _barrier_newton(A, b, ra, beta, opts)

    G_full = np.zeros(r.size)
    G_full[active] = G
    bg = beta * G_full
    logF = np.log1p(bg)
    # cells outside the model support carry no constraint; F=1 there
    slack_excess = float(np.max(A @ G - b))
    if slack_excess > 0:
        # LHS - 1 = beta*(a.G - b); rescale by the reciprocal of the worst LHS
        logF = logF - math.log1p(beta * slack_excess)
    values = np.exp(logF)
    pef = PEF(values.reshape(rho.shape), beta, log_values=logF.reshape(rho.shape))
    check = validate_pef(pef, beta, model)
    if check.margin > VALID_TOL:
        raise SolverError(f"optimized PEF violates the model by {check.margin:.3g}")
    return pef


def _barrier_newton(A: np.ndarray, b: np.ndarray, rho: np.ndarray, beta: float, opts: SolverOptions) -> np.ndarray:
    n = A.shape[1]
    m = A.shape[0] + n
    G = np.full(n, -min(1.0, 0.5 / beta))
    if np.any(A @ G >= b):
        raise InfeasibleError("model has a vertex with no mass on any cell")

    t = 1.0
    centered = None  # (G, gap) of the last completed centering
    for _ in range(opts.max_outer):
        ok = True
        for _ in range(opts.max_newton):
            s = b - A @ G
            u = 1.0 + beta * G
            if s.min() <= 0 or u.min() <= 0:
                ok = False
                break
            grad = t * (-rho / u) + A.T @ (1.0 / s) - beta / u
            hess_diag = t * rho * beta / u**2 + beta**2 / u**2
            H = (A.T * (1.0 / s**2)) @ A
            H[np.diag_indices(n)] += hess_diag
            try:
                step = -np.linalg.solve(H, grad)
            except np.linalg.LinAlgError:
                step = -np.linalg.lstsq(H, grad, rcond=None)[0]
            decrement = float(-grad @ step)
            if not math.isfinite(decrement):
                ok = False
                break
            if decrement / 2.0 <= opts.newton_tol:
                break
            # damped Newton step for self-concordant barriers, kept strictly inside
            lam = math.sqrt(max(decrement, 0.0))
            alpha = 1.0 if lam < 0.25 else 1.0 / (1.0 + lam)
            ds = A @ step
            du = beta * step
            lim = np.concatenate([s[ds > 0] / ds[ds > 0], -u[du < 0] / du[du < 0]])
            if lim.size:
                alpha = min(alpha, 0.99 * lim.min())
            G = G + alpha * step
        if not ok:
            # slack lost to rounding: fall back on the last centered point
            if centered is not None and centered[1] < opts.fallback_gap:
                return centered[0]
            break
        centered = (G.copy(), m / t)
        if m / t < opts.gap_tol:
            return G
        t *= opts.mu
    raise SolverError("barrier method did not reach the requested duality gap")


# -- convex-roof LP -------------------------------------------------------------


def _vertex_entropies(verts: np.ndarray) -> np.ndarray:
    return np.array([conditional_entropy(v) for v in verts])


def min_conditional_entropy(model: Model, rho) -> float:
    """Minimum of ``sum_e lambda_e H(C|S; nu_e)`` over decompositions of ``rho``.

    This convex-roof value is the asymptotic gain rate (bits per trial).
    """
    rho = _joint_array(rho)
    verts = model.vertices
    if rho.shape != verts.shape[1:]:
        raise ValueError("rho shape does not match the model")
    h = _vertex_entropies(verts)
    a_eq = verts.reshape(len(verts), -1).T
    res = linprog(h, A_eq=a_eq, b_eq=rho.reshape(-1), bounds=(0, None), method="highs")
    if res.status != 0:
        raise InfeasibleError("rho is not in the convex hull of the model vertices")
    return float(res.fun)


def asymptotic_gain_rate(model: Model, rho, method: str = "LP", betas=(1e-2, 1e-3, 1e-4), opts=None) -> float:
    """Asymptotic gain rate by the convex-roof LP or by a small-power PEF sweep.

    The sweep extrapolates linearly to ``beta = 0`` through the two smallest powers.
    """
    if method.upper() == "LP":
        return min_conditional_entropy(model, rho)
    if method.lower() != "beta_sweep":
        raise ValueError(f"unknown method {method!r}")
    betas = sorted(betas)
    if len(betas) < 2:
        raise ValueError("beta sweep needs at least two powers")
    b1, b2 = betas[0], betas[1]
    r1 = log_prob_rate(optimize_pef(model, rho, b1, opts), b1, rho)
    r2 = log_prob_rate(optimize_pef(model, rho, b2, opts), b2, rho)
    return r1 - (r2 - r1) * b1 / (b2 - b1)


# -- max-prob estimators -------------------------------------------------------


def _max_conditional(verts: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """``max_{cs} gamma(cs) nu(c|s)`` per vertex, over settings with positive mass."""
    mass = verts.sum(axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        cond = np.where(mass > 0, verts / np.where(mass > 0, mass, 1.0), 0.0)
    return (cond * gamma[None]).reshape(len(verts), -1).max(axis=1)


def _as_gamma(gamma, shape) -> np.ndarray:
    if gamma is None:
        return np.ones(shape)
    g = np.broadcast_to(np.asarray(gamma, dtype=float), shape).copy()
    if g.min() <= 0:
        raise ValueError("gamma must be positive")
    return g


def maxprob_violation(B: BellFunction | np.ndarray, model: Model, gamma=None) -> float:
    """Largest ``max_cs gamma nu(c|s) - (1 - E_nu(B))`` over model vertices (``<= 0`` if valid)."""
    verts = model.vertices
    vals = B.values if isinstance(B, BellFunction) else np.asarray(B, float).reshape(verts.shape[1:])
    g = _as_gamma(gamma, verts.shape[1:])
    expect = np.einsum("vsc,sc->v", verts, vals)
    return float(np.max(_max_conditional(verts, g) - (1.0 - expect)))


def _single_settings(model: Model) -> np.ndarray:
    s = model.vertices.sum(axis=2)
    if np.abs(s - s[0]).max() > 1e-12:
        raise ValueError("model must have a single fixed settings distribution")
    return s[0]


@dataclass(frozen=True)
class MaxProbEstimator:
    """Function ``B`` with ``1 - E_nu(B) >= max gamma nu(d|z)`` on the model, and ``bbar = E_rho(B)``."""

    B: BellFunction
    bbar: float
    gamma: np.ndarray | None = field(default=None, repr=False)


def optimize_maxprob_estimator(model: Model, rho, gamma=None, tol: float = 1e-9) -> MaxProbEstimator:
    """Maximize ``E_rho(B)`` subject to the weighted max-prob bound at every vertex.

    Solved as the LP: minimize ``E_rho(Bt)`` subject to
    ``E_nu(Bt) >= gamma(dz) nu(d|z)`` for all vertices and ``dz``; ``B = 1 - Bt``.
    """
    verts = model.vertices
    if verts.shape[1] != 4:
        raise ValueError("max-prob estimators are built for the 4 Bell settings")
    _single_settings(model)
    rho = _joint_array(rho)
    g = _as_gamma(gamma, (4, 4))
    cond = verts / verts.sum(axis=2, keepdims=True)
    # rows: -E_nu(Bt) <= -gamma(dz) nu(d|z) for each vertex and each dz
    n_v = len(verts)
    a_ub = -np.repeat(verts.reshape(n_v, -1), 16, axis=0)
    b_ub = -(cond * g[None]).reshape(-1)
    res = linprog(rho.reshape(-1), A_ub=a_ub, b_ub=b_ub, bounds=(None, None), method="highs")
    if res.status != 0:
        raise InfeasibleError(f"max-prob LP failed: {res.message}")
    B = BellFunction(1.0 - res.x.reshape(4, 4))
    viol = maxprob_violation(B, model, g)
    if viol > tol:
        raise SolverError(f"max-prob bound violated by {viol:.3g}")
    return MaxProbEstimator(B, float(np.sum(rho * B.values)), None if gamma is None else g)


def maxprob_scaled(B0: BellFunction, model: Model) -> BellFunction:
    """Largest multiple ``s*B0`` (``s > 0``) satisfying the unweighted max-prob bound on ``model``."""
    verts = model.vertices
    expect = np.einsum("vsc,sc->v", verts, B0.values)
    slack = 1.0 - _max_conditional(verts, np.ones(verts.shape[1:]))
    pos = expect > 1e-15
    if not np.any(pos):
        raise ValueError("B0 has no positive expectation at any vertex")
    if np.any(slack[~pos] < -1e-12):
        raise ValueError("B0 cannot be scaled to satisfy the bound")
    return BellFunction(B0.values * float(np.min(slack[pos] / expect[pos])))


class NegativePEFError(ValueError):
    """The requested affine PEF has negative entries.

    ``max_lambda`` is the largest mixing weight with the unit PEF that keeps
    every entry nonnegative.
    """

    def __init__(self, message: str, max_lambda: float):
        super().__init__(message)
        self.max_lambda = max_lambda


def pef_from_maxprob(B: BellFunction | np.ndarray, alpha: float, beta: float, lam: float = 1.0,
                     gamma=None, model: Model | None = None, tol: float = 1e-9) -> PEF:
    """Affine PEF ``gamma^beta (1-alpha)^-beta (1 + beta (B - alpha)/(1 - alpha))``, mixed as ``1 + lam (F - 1)``.

    If ``model`` is given, ``B`` is first checked against the max-prob bound.
    The weighted form (``gamma`` given) requires ``lam = 1``.
    """
    vals = B.values if isinstance(B, BellFunction) else np.asarray(B, float)
    if not alpha < 1.0:
        raise ValueError("alpha must be < 1")
    if not beta > 0:
        raise ValueError("beta must be positive")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    if gamma is not None and lam != 1.0:
        raise ValueError("the weighted construction is defined for lambda = 1 only")
    g = _as_gamma(gamma, vals.shape)
    if model is not None:
        viol = maxprob_violation(vals, model, g)
        if viol > tol:
            raise ValueError(f"B violates the max-prob bound by {viol:.3g}")
    if lam == 0.0:
        return PEF.unit(beta, vals.shape[0])
    lin = beta * (vals - alpha) / (1.0 - alpha)
    if np.any(lin < -1.0):
        # F < 0 on some cell; 1 + lam(F - 1) >= 0 needs lam <= 1/(1 - F)
        F = g**beta * (1.0 - alpha) ** (-beta) * (1.0 + lin)
        neg = F < 0
        max_lam = float(np.min(1.0 / (1.0 - F[neg])))
        if gamma is not None or lam > max_lam:
            raise NegativePEFError(
                f"PEF is negative for beta={beta:g}; use lambda <= {max_lam:.6g} or a smaller power",
                max_lam if gamma is None else 0.0,
            )
    with np.errstate(divide="ignore"):
        logF = beta * np.log(g) - beta * math.log1p(-alpha) + np.log1p(np.maximum(lin, -1.0))
    if lam == 1.0:
        return PEF(np.exp(logF), beta, log_values=logF)
    vals_out = 1.0 + lam * np.expm1(logF)
    return PEF(vals_out, beta, log_values=np.log1p(lam * np.expm1(logF)))


# -- spot-checking family -------------------------------------------------------


@dataclass(frozen=True)
class SpotCheckPEF(PEF):
    """PEF over ``(c, z, t)`` (settings index ``s = z + 4*t``) for test probability ``r``."""

    r: float = 0.0
    bbar: float = 0.0

    def __post_init__(self):
        super().__post_init__()
        if self.values.shape != (8, 4):
            raise ValueError("spot-check PEF needs values for 8 settings-flag pairs")
        if not 0.0 < self.r <= 1.0:
            raise ValueError("r must lie in (0, 1]")


def _min_neg(B: np.ndarray) -> float:
    return -min(0.0, float(B.min()))


def spotcheck_pef(B: BellFunction | np.ndarray, bbar: float, r: float, beta: float, kind="Q",
                  z0: int = 3, tol: float = VALID_TOL) -> SpotCheckPEF:
    """``F_{r,beta} = (1-bbar)^-beta (1 + beta (B_r - bbar)/(1 - bbar))`` with ``B_r = B/r`` on test trials.

    ``kind`` (or a list of conditional vertices) defines the lifted model the
    result is validated against; ``B`` must satisfy the max-prob bound for it
    under uniform settings.
    """
    from .bellmodel import conditional_extreme_points, spotcheck_model

    vals = B.values if isinstance(B, BellFunction) else np.asarray(B, float).reshape(4, 4)
    if not 0.0 < r < 0.5:
        raise ValueError("r must satisfy 0 < r < 1/2")
    if not 0.0 < bbar < 1.0:
        raise ValueError("bbar must lie in (0, 1)")
    d = (1.0 - bbar) / (2.0 * _min_neg(vals) + bbar)
    if beta > d * r * (1.0 + 1e-12):
        raise ValueError(f"beta={beta:g} exceeds d*r={d * r:g}")
    Br = np.concatenate([np.zeros((4, 4)), vals / r], axis=0)
    lin = beta * (Br - bbar) / (1.0 - bbar)
    logF = -beta * math.log1p(-bbar) + np.log1p(lin)
    pef = SpotCheckPEF(np.exp(logF), beta, log_values=logF, r=r, bbar=bbar)
    points = conditional_extreme_points(kind) if isinstance(kind, str) else kind
    check = validate_pef(pef, beta, spotcheck_model(points, r, z0), tol)
    if not check.valid:
        raise ValueError(f"spot-check PEF invalid for the lifted model (margin {check.margin:.3g})")
    return pef


@dataclass(frozen=True)
class ExpansionParams:
    """Constants for the spot-checking expansion guarantee (natural-log units).

    With ``r = c_prime/n`` and ``beta = c*c_prime/n``, ``n`` trials give a net
    log-prob of at least ``n*g0/6`` with probability ``>= 1 - lambda_fail**2``.
    ``variance`` is the coefficient ``v`` in ``Var(log-prob) <= v n^2``.
    """

    d: float
    d_prime: float
    c: float
    c_prime: float
    g0: float
    variance: float

    def r(self, n: int) -> float:
        return self.c_prime / n

    def beta(self, n: int) -> float:
        return self.c * self.c_prime / n


def expansion_parameters(bbar: float, vbar: float, w: float, eps_h: float, lambda_fail: float) -> ExpansionParams:
    if not 0.0 < bbar < 1.0:
        raise ValueError("bbar must lie in (0, 1)")
    if vbar < 0 or w < 0:
        raise ValueError("vbar and w must be nonnegative")
    if not 0.0 < eps_h < 1.0 or not 0.0 < lambda_fail <= 1.0:
        raise ValueError("eps_h must lie in (0, 1) and lambda_fail in (0, 1]")
    d = (1.0 - bbar) / (2.0 * w + bbar)
    d_prime = 2.0 * (vbar + bbar**2) / (1.0 - bbar) ** 2
    g0 = -math.log1p(-bbar)
    c = min(d, g0 / (3.0 * d_prime))
    c_prime = max(3.0 * math.log(1.0 / eps_h), 24.0 * LN2**2 / lambda_fail**2) / (c * g0)
    variance = 2.0 * LN2**2 * d_prime / c_prime
    return ExpansionParams(d, d_prime, c, c_prime, g0, variance)


def spotcheck_log_variance_bound(bbar: float, vbar: float, r: float, beta: float) -> float:
    """Upper bound on the variance of ``ln F_{r,beta}`` at the lifted distribution."""
    return 4.0 * LN2**2 * beta**2 / r * (vbar + bbar**2) / (1.0 - bbar) ** 2


def bell_moments(B: BellFunction, rho) -> tuple[float, float, float]:
    """``(bbar, vbar, w)``: mean and variance of ``B`` under ``rho`` and ``-min(0, min B)``."""
    p = _joint_array(rho)
    bbar = float(np.sum(p * B.values))
    vbar = float(np.sum(p * (B.values - bbar) ** 2))
    return bbar, vbar, _min_neg(B.values)
