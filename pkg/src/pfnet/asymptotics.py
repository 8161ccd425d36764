"""Local limit approximations for the open system and the closed network.

Three engines approximate ``P(S_n - m_n = x)`` for the total length of
the open system: a normal density, its one-term Edgeworth correction,
and a gamma density when some queues sit close to saturation. Each result
carries an error budget: the terms of the corresponding big-O bound,
evaluated numerically with every unspecified constant set to 1.

Budgets of the local limit engines live on the scaled axis (``sigma_n``
for normal and Edgeworth, ``alpha_n`` for gamma), so the absolute bound on
the probability is ``total / scale_factor``.  Budgets of the joint, marginal
and mean approximations are relative to the value.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import gammaln

from . import kernels
from .errors import ModelError, RegimeWarning, UnsupportedCaseError
from .model import INFINITE, ServiceCurve, effective_rate
from .surrogate import MomentSet, SolvedSurrogate, gamma_sq

NORMAL = "normal"
EDGEWORTH = "edgeworth"
GAMMA = "gamma"

ORDER_ONE = "order-one"
ALGEBRAIC_CLASS = "algebraic"

XI_RESIDUAL_MAX = 0.1
XI_QC_MAX = 10_000
XI_MAX = 50.0

__all__ = [
    "ApproxResult", "XiEstimate", "BoundCheck",
    "normal_llt", "edgeworth_llt", "gamma_llt",
    "gamma_sq", "char_bound_check",
    "approx_joint", "approx_marginal", "approx_mean",
    "approx_joint_gamma", "approx_marginal_gamma", "approx_mean_gamma",
    "estimate_xi", "xi_total", "gamma_density", "fit_gamma_shape",
]


@dataclass(frozen=True)
class ApproxResult:
    """Approximate value with its evaluated error budget.

    ``scale`` converts the budget to an absolute bound on ``value``:
    ``abs_bound = scale * total_budget``.
    """

    value: object
    leading_term: object
    correction_term: object
    error_budget: dict
    regime: str
    scale: float = 1.0
    notes: tuple = ()

    @property
    def total_budget(self) -> float:
        return float(sum(self.error_budget.values()))

    @property
    def abs_bound(self) -> float:
        return self.scale * self.total_budget


@dataclass(frozen=True)
class XiEstimate:
    index: int
    kind: str
    xi: float
    residual: float


@dataclass(frozen=True)
class BoundCheck:
    """Outcome of ``|phi(theta)| <= exp(-gamma2 theta^2 / 5)`` on a grid."""

    passed: bool
    gamma2: float
    violations: int
    worst_theta: float
    worst_excess: float

    def __bool__(self):
        return self.passed


def _delta(sigma2: float, beta: float, r: float) -> float:
    if beta <= 0:
        return math.inf
    return (0.5 * sigma2 / beta) ** (1.0 / r)


def _lattice_term(sigma: float, gamma2: float, delta: float) -> float:
    """``sigma / (gamma^2 delta) * exp(-gamma^2 delta^2 / 5)``."""
    if math.isinf(delta):
        return 0.0
    if gamma2 <= 0:
        raise UnsupportedCaseError(
            "lattice constant gamma^2 vanishes: the total has span > 1 and no local limit holds"
        )
    return sigma / (gamma2 * delta) * math.exp(-gamma2 * delta * delta / 5.0)


def _check_regime(gamma2, delta, notes):
    gd = math.sqrt(max(gamma2, 0.0)) * delta
    if gd < 1:
        msg = f"Berry-Esseen regime not reached (gamma*delta = {gd:.3g} < 1)"
        warnings.warn(msg, RegimeWarning, stacklevel=3)
        notes.append(msg)


def _as_out(x):
    x = np.asarray(x, dtype=float)
    return x if x.ndim else float(x)


def _moments(sol_or_moments) -> MomentSet:
    return sol_or_moments.moments if isinstance(sol_or_moments, SolvedSurrogate) else sol_or_moments


# ---------------------------------------------------------------- normal


def normal_llt(sol: SolvedSurrogate, x, r: float = 1.0) -> ApproxResult:
    """Gaussian local approximation of ``P(S_n - m_n = x)``.

    Budget on the ``sigma_n`` scale: ``beta^(2+r)/sigma^(2+r)`` plus the
    lattice term with ``delta^r = sigma^2 / (2 beta^(2+r))``.
    """
    if not 0 < r <= 1:
        raise ModelError(f"moment excess r must lie in (0, 1], got {r}")
    ms = _moments(sol)
    s2 = ms.sigma2
    if not s2 > 0:
        raise UnsupportedCaseError("normal approximation needs a positive variance")
    s = math.sqrt(s2)
    beta = ms.total_beta(2 + r)
    delta = _delta(s2, beta, r)
    notes = []
    _check_regime(ms.total_gamma2, delta, notes)
    x = np.asarray(x, dtype=float)
    lead = np.exp(-x * x / (2 * s2)) / (math.sqrt(2 * math.pi) * s)
    budget = {
        "lyapunov": beta / s ** (2 + r),
        "lattice": _lattice_term(s, ms.total_gamma2, delta),
    }
    return ApproxResult(_as_out(lead), _as_out(lead), 0.0, budget, NORMAL, 1.0 / s, tuple(notes))


def edgeworth_llt(sol: SolvedSurrogate, x, r: float = 1.0) -> ApproxResult:
    """Normal density times the skewness bracket ``1 + b3/(6 s^3) (z^3 - 3z)``."""
    if not 0 < r <= 1:
        raise ModelError(f"moment excess r must lie in (0, 1], got {r}")
    ms = _moments(sol)
    s2 = ms.sigma2
    if not s2 > 0:
        raise UnsupportedCaseError("Edgeworth approximation needs a positive variance")
    s = math.sqrt(s2)
    delta = _delta(s2, ms.total_beta(3), 1.0)
    notes = []
    _check_regime(ms.total_gamma2, delta, notes)
    x = np.asarray(x, dtype=float)
    z = x / s
    lead = np.exp(-0.5 * z * z) / (math.sqrt(2 * math.pi) * s)
    corr = lead * ms.total_beta3_signed / (6 * s ** 3) * (z ** 3 - 3 * z)
    budget = {
        "lyapunov": ms.total_beta(3 + r) / s ** (3 + r),
        "lattice": _lattice_term(s, ms.total_gamma2, delta),
    }
    return ApproxResult(
        _as_out(lead + corr), _as_out(lead), _as_out(corr), budget, EDGEWORTH, 1.0 / s, tuple(notes)
    )


# ---------------------------------------------------------------- gamma


def gamma_density(y, xi: float):
    """Gamma(xi, 1) density, zero for ``y <= 0``."""
    y = np.asarray(y, dtype=float)
    out = np.zeros(y.shape)
    pos = y > 0
    yp = y[pos]
    out[pos] = np.exp((xi - 1) * np.log(yp) - yp - gammaln(xi))
    return out if out.ndim else float(out)


def estimate_xi(curve: ServiceCurve, mu: Optional[float] = None, index: int = 0,
                qc_max: int = XI_QC_MAX, xi_max: float = XI_MAX) -> XiEstimate:
    """Algebraic order of the first singularity of a saturable queue.

    A curve equal to its limit from some ``q_c <= qc_max`` on has order one.
    Otherwise ``q log(mu / mu(q))`` is fitted to the constant ``xi - 1``
    over the window ``q in [qc_max / 2, qc_max]``.
    """
    if curve.kind == INFINITE:
        raise UnsupportedCaseError(f"queue {index}: infinite-server queues never saturate")
    mu = effective_rate(curve) if mu is None else float(mu)
    qc = curve.constant_from
    if qc is not None and qc <= qc_max:
        return XiEstimate(index, ORDER_ONE, 1.0, 0.0)
    q = np.arange(qc_max // 2, qc_max + 1, dtype=float)
    y = q * np.log(mu / curve.rate(q))
    c = float(y.mean())
    resid = float(np.sqrt(np.mean((y - c) ** 2)))
    if resid > XI_RESIDUAL_MAX or c < -XI_RESIDUAL_MAX or 1 + c > xi_max:
        raise UnsupportedCaseError(
            f"queue {index}: unclassified singularity (fit xi-1 = {c:.4g}, residual {resid:.3g})"
        )
    if abs(c) < 1e-9:
        return XiEstimate(index, ORDER_ONE, 1.0, resid)
    return XiEstimate(index, ALGEBRAIC_CLASS, 1.0 + max(c, 0.0), resid)


def xi_total(sol: SolvedSurrogate) -> float:
    """``xi_n``: sum of the singularity orders over the bottleneck set."""
    net = sol.network
    return float(sum(estimate_xi(net.curves[k], index=k).xi for k in sol.F0))


def _gamma_eps(sol: SolvedSurrogate, xi: float, r: float):
    """Evaluated constituents of the gamma-regime error term, and the hat lattice data."""
    a = sol.alpha
    hat = sol.hat_moments
    s2 = hat.sigma2 if hat.index else 0.0
    budget = {"hat_spread": 0.0, "inverse_alpha": 1.0 / a, "hat_lyapunov": 0.0, "hat_shape": 0.0}
    if s2 > 0:
        s = math.sqrt(s2)
        beta = hat.total_beta(2 + r)
        lyap = beta / s ** (2 + r)
        ratio = s / a
        budget["hat_spread"] = ratio ** 2
        budget["hat_lyapunov"] = lyap * ratio ** (2 + r)
        budget["hat_shape"] = lyap * ratio ** (xi - 1)
        return budget, (s, beta, hat.total_gamma2)
    return budget, None


def _require_bottleneck(sol: SolvedSurrogate):
    if not sol.F0:
        raise UnsupportedCaseError("gamma regime needs a nonempty bottleneck set")
    if not sol.rho0 > 0:
        raise UnsupportedCaseError("gamma regime needs a positive load")


def gamma_llt(sol: SolvedSurrogate, x, xi: Optional[float] = None, r: float = 1.0) -> ApproxResult:
    """Gamma local approximation ``alpha P(S_n - m_n = x) ~ y^(xi-1) e^-y / Gamma(xi)``.

    ``y = xi + x / alpha``. Budget on the ``alpha_n`` scale.
    """
    _require_bottleneck(sol)
    if not 0 < r <= 1:
        raise ModelError(f"moment excess r must lie in (0, 1], got {r}")
    xi = xi_total(sol) if xi is None else float(xi)
    a = sol.alpha
    x = np.asarray(x, dtype=float)
    y = xi + x / a
    lead = gamma_density(y, xi) / a
    notes = []
    if np.any(y <= 0):
        notes.append("left-tail outside support: value 0 where xi + x/alpha <= 0")
    budget, hat = _gamma_eps(sol, xi, r)
    budget["lattice"] = 0.0
    if hat is not None:
        s, beta, g2 = hat
        delta = _delta(s * s, beta, r)
        if math.isfinite(delta):
            if g2 <= 0:
                raise UnsupportedCaseError("hat lattice constant vanishes")
            budget["lattice"] = math.exp(-g2 * delta * delta / 5.0) / (
                g2 * delta ** (xi + 1) * a ** (xi - 1))
        if s / a >= 1:
            notes.append(f"hat spread sigma/alpha = {s / a:.3g} is not small")
    return ApproxResult(_as_out(lead), _as_out(lead), 0.0, budget, GAMMA, 1.0 / a, tuple(notes))


def fit_gamma_shape(pmf, center: float, alpha: float, bounds=(0.2, 20.0)) -> float:
    """Shape ``k`` minimizing ``sum_x (alpha p(m + x) - g_k(k + x/alpha))^2``.

    ``pmf`` is indexed by the total population and ``center`` is its mean.
    """
    p = np.asarray(pmf, dtype=float)
    x = np.arange(len(p)) - center

    def loss(k):
        return float(np.sum((alpha * p - gamma_density(k + x / alpha, k)) ** 2))

    res = minimize_scalar(loss, bounds=bounds, method="bounded", options={"xatol": 1e-8})
    return float(res.x)


# ---------------------------------------------------------------- lattice bound


def char_bound_check(pmf, theta=None, tol: float = 1e-12) -> BoundCheck:
    """Check ``|phi(theta)| <= exp(-gamma^2 theta^2 / 5)`` on a grid in ``[-pi, pi]``."""
    p = np.asarray(pmf, dtype=float)
    theta = np.linspace(-math.pi, math.pi, 1001) if theta is None else np.asarray(theta, dtype=float)
    g2 = gamma_sq(p)
    mod = np.abs(kernels.char_sum(p, theta))
    excess = mod - np.exp(-g2 * theta * theta / 5.0)
    bad = excess > tol
    i = int(np.argmax(excess))
    return BoundCheck(not bad.any(), g2, int(bad.sum()), float(theta[i]), float(excess[i]))


# ---------------------------------------------------------------- closed-network formulas


def _log_pmf(sol: SolvedSurrogate, k: int, q: int) -> float:
    pmf = sol.queues[k].pmf
    if q < 0:
        raise ModelError(f"queue {k}: negative length {q}")
    if q >= len(pmf):
        return -math.inf
    v = pmf[q]
    return math.log(v) if v > 0 else -math.inf


def _check_queues(sol, queues, values):
    queues = [int(k) for k in queues]
    values = [int(q) for q in values]
    if len(queues) != len(values):
        raise ModelError("queues and values must have the same length")
    if len(set(queues)) != len(queues):
        raise ModelError("repeated queue index")
    for k in queues:
        if not 0 <= k < sol.network.n:
            raise ModelError(f"queue index {k} out of range")
    return queues, values


def _lyap(ms: MomentSet, r: float) -> float:
    return ms.total_beta(2 + r) / ms.sigma ** (2 + r)


def approx_joint(sol: SolvedSurrogate, state: Sequence[int], r: float = 1.0) -> ApproxResult:
    """``sqrt(2 pi) sigma_n prod_k P(X_k = q_k)``, relative budget."""
    state = [int(q) for q in state]
    if len(state) != sol.network.n:
        raise ModelError(f"state has {len(state)} entries for {sol.network.n} queues")
    if sum(state) != sol.population:
        raise ModelError(f"state sums to {sum(state)}, population is {sol.population}")
    ms = sol.moments
    lv = 0.5 * math.log(2 * math.pi * ms.sigma2) + sum(_log_pmf(sol, k, q) for k, q in enumerate(state))
    v = math.exp(lv)
    return ApproxResult(v, v, 0.0, {"lyapunov": _lyap(ms, r)}, NORMAL, v)


def approx_marginal(sol: SolvedSurrogate, queues: Sequence[int], values: Sequence[int],
                    r: float = 1.0) -> ApproxResult:
    """``prod_{k in queues} P(X_k = q_k)`` with the relative budget of the normal regime."""
    queues, values = _check_queues(sol, queues, values)
    ms = sol.moments
    s2 = ms.sigma2
    v = math.exp(sum(_log_pmf(sol, k, q) for k, q in zip(queues, values)))
    dev = sum(ms.mean[k] - q for k, q in zip(queues, values))
    budget = {
        "lyapunov": _lyap(ms, r),
        "local_spread": (sum(ms.var[k] for k in queues) + dev * dev) / s2,
    }
    if r > 1:
        budget["skew"] = abs(dev * ms.total_beta3_signed) / s2 ** 2
    return ApproxResult(v, v, 0.0, budget, NORMAL, v)


def approx_mean(sol: SolvedSurrogate, j: int, r: float = 1.0) -> ApproxResult:
    """``E Q_j ~ m_j``, relative budget of the normal regime."""
    ms = sol.moments
    s2 = ms.sigma2
    s = math.sqrt(s2)
    mj, vj = float(ms.mean[j]), float(ms.var[j])
    if not mj > 0:
        raise UnsupportedCaseError(f"queue {j} has zero mean")
    bj = float(ms.beta(2 + r)[j])
    budget = {
        "lyapunov": _lyap(ms, r),
        "share": vj / s2,
        "local_moment": bj / (mj * s ** (1 + r)),
    }
    if r > 1:
        sj = math.sqrt(vj)
        budget["skew"] = abs(ms.total_beta3_signed) / s2 ** 2 * sj * (1 + sj / mj)
    return ApproxResult(mj, mj, 0.0, budget, NORMAL, mj)


def _gamma_budget(sol, r):
    xi = xi_total(sol)
    budget, _ = _gamma_eps(sol, xi, r)
    return xi, budget


def approx_joint_gamma(sol: SolvedSurrogate, state: Sequence[int], r: float = 1.0) -> ApproxResult:
    """``alpha Gamma(xi) / (e^-xi xi^(xi-1)) prod_k P(X_k = q_k)``, relative budget."""
    _require_bottleneck(sol)
    state = [int(q) for q in state]
    if len(state) != sol.network.n:
        raise ModelError(f"state has {len(state)} entries for {sol.network.n} queues")
    xi, budget = _gamma_budget(sol, r)
    lpre = math.log(sol.alpha) + float(gammaln(xi)) + xi - (xi - 1) * math.log(xi)
    v = math.exp(lpre + sum(_log_pmf(sol, k, q) for k, q in enumerate(state)))
    return ApproxResult(v, v, 0.0, budget, GAMMA, v)


def approx_marginal_gamma(sol: SolvedSurrogate, queues: Sequence[int], values: Sequence[int],
                          r: float = 1.0) -> ApproxResult:
    """Product of open pmfs for queues outside the bottleneck set."""
    _require_bottleneck(sol)
    queues, values = _check_queues(sol, queues, values)
    hit = sorted(set(queues) & set(sol.F0))
    if hit:
        raise UnsupportedCaseError(
            f"queues {hit} are bottlenecks: the gamma-regime marginal only covers "
            "queue sets disjoint from the bottleneck set"
        )
    xi, budget = _gamma_budget(sol, r)
    ms = sol.moments
    dev = sum(ms.mean[k] - q for k, q in zip(queues, values))
    budget["local_shift"] = abs(dev) / sol.alpha
    v = math.exp(sum(_log_pmf(sol, k, q) for k, q in zip(queues, values)))
    return ApproxResult(v, v, 0.0, budget, GAMMA, v)


def approx_mean_gamma(sol: SolvedSurrogate, j: int, r: float = 1.0) -> ApproxResult:
    """``E Q_j ~ m_j`` in the gamma regime, for bottleneck and other queues alike."""
    _require_bottleneck(sol)
    xi, budget = _gamma_budget(sol, r)
    ms = sol.moments
    mj, vj = float(ms.mean[j]), float(ms.var[j])
    if j not in sol.F0:
        if not mj > 0:
            raise UnsupportedCaseError(f"queue {j} has zero mean")
        budget["local_mean"] = (vj + mj * mj) / (mj * sol.alpha)
    return ApproxResult(mj, mj, 0.0, budget, GAMMA, mj)
