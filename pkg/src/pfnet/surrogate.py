"""The open parallel-queue system associated with a closed network.

Each queue ``k`` is fed independently with Poisson intensity
``lam * pi_k``; its stationary length ``X_k`` has pmf proportional to
``(lam pi_k)^x / (mu_k(1) ... mu_k(x))``. Conditioning the independent
lengths on ``X_1 + ... + X_n = m`` reproduces the closed network, and the
intensity ``lam_n`` solving ``E[X_1 + ... + X_n] = m`` is the one all
approximations are taken at.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import ErgodicityError, PopulationError, PrecisionWarning, UnsupportedCaseError
from .model import ALGEBRAIC, INFINITE, SINGLE, ClosedNetwork, QueuePartition, ServiceCurve, effective_rate, partition

TAIL_TOL = 1e-12
MOMENT_TAIL_TOL = 1e-10
MAX_SUPPORT = 4_000_000
SATURATION_MARGIN = 1e-14


@dataclass(frozen=True, eq=False)
class OpenQueue:
    """Stationary law of one open queue at arrival intensity ``intensity``."""

    index: int
    curve: ServiceCurve
    intensity: float
    log_f: float
    pmf: np.ndarray
    tail_mass: float = 0.0

    @property
    def support(self) -> np.ndarray:
        return np.arange(len(self.pmf))

    @cached_property
    def mean(self) -> float:
        return float(self.support @ self.pmf)

    @cached_property
    def var(self) -> float:
        d = self.support - self.mean
        return float((d * d) @ self.pmf)

    def abs_moment(self, r: float) -> float:
        """``E|X - m|^r`` by direct summation over the stored support."""
        return float(np.abs(self.support - self.mean) ** r @ self.pmf)

    def gf(self, z):
        """Generating function ``f_k(z)``, valid for ``|z| <= intensity``."""
        z = np.asarray(z, dtype=complex)
        if self.intensity == 0:
            return np.ones_like(z)
        w = z / self.intensity
        powers = w[..., None] ** self.support
        return math.exp(self.log_f) * (powers @ self.pmf)

    def char_fn(self, theta):
        """Characteristic function of ``X - E X``."""
        theta = np.asarray(theta, dtype=float)
        vals = kernels.char_sum(self.pmf, theta.ravel()) * np.exp(-1j * self.mean * theta.ravel())
        return vals.reshape(theta.shape) if theta.ndim else vals[0]


def _log_terms(curve: ServiceCurve, a: float, n_max: int) -> np.ndarray:
    x = np.arange(n_max + 1)
    return x * math.log(a) - curve.log_rate_products(n_max)


def _pow4_geometric_tail(n: int, r: float) -> float:
    # bound on sum_{j>=1} (n + j)^4 r^j using (n + j)^4 <= 8 (n^4 + j^4)
    s0 = r / (1 - r)
    s4 = r * (1 + 11 * r + 11 * r * r + r ** 3) / (1 - r) ** 5
    return 8.0 * (n ** 4 * s0 + s4)


def queue_pmf(
    curve: ServiceCurve,
    weight: float,
    lam: float,
    tail_tol: float = TAIL_TOL,
    min_support: int = 0,
    index: int = 0,
) -> OpenQueue:
    """Stationary pmf of a queue fed at intensity ``lam * weight``.

    The support is extended until the neglected mass is below ``tail_tol``
    and the neglected part of the fourth central moment is below
    ``MOMENT_TAIL_TOL`` relative, and always covers ``min_support``.
    """
    a = float(lam) * float(weight)
    if a < 0:
        raise ErgodicityError(f"queue {index}: negative arrival intensity {a}")
    if a == 0.0:
        pmf = np.zeros(min_support + 1)
        pmf[0] = 1.0
        return OpenQueue(index, curve, 0.0, 0.0, pmf)
    mu_eff = effective_rate(curve)
    if a >= mu_eff:
        raise ErgodicityError(
            f"queue {index} is not ergodic: intensity {a:.6g} >= effective rate {mu_eff:.6g}"
        )
    q0 = curve.constant_from
    n = max(64, min_support, (q0 or 0) + 1)
    if curve.kind == INFINITE:
        n = max(n, int(3 * a / curve.mu) + 64)
    while True:
        logt = _log_terms(curve, a, n)
        top = logt.max()
        t = np.exp(logt - top)
        head = t.sum()
        r = a / float(curve.rate(n + 1))
        if q0 is not None:
            tail = t[-1] * r / (1 - r)  # exact geometric remainder
        else:
            tail = t[-1] * r / (1 - r) if r < 1 else math.inf
        total = head + (tail if q0 is not None else 0.0)
        if r < 1:
            mean = (np.arange(n + 1) @ t) / head
            beta4 = ((np.arange(n + 1) - mean) ** 4 @ t) / head
            tail4 = t[-1] * _pow4_geometric_tail(n, r) / total
            if tail / total < tail_tol and tail4 <= MOMENT_TAIL_TOL * max(beta4, 1e-300):
                break
        if n >= MAX_SUPPORT:
            warnings.warn(
                f"queue {index}: support capped at {n} with tail mass {tail / total:.3g}",
                PrecisionWarning,
                stacklevel=2,
            )
            break
        n = min(2 * n, MAX_SUPPORT)
    if curve.kind == SINGLE:
        log_f = -math.log1p(-a / curve.mu)
    elif curve.kind == INFINITE:
        log_f = a / curve.mu
    else:
        log_f = top + math.log(total)
    pmf = np.exp(logt - log_f)
    return OpenQueue(index, curve, a, log_f, pmf, float(tail / total))


def size_biased(queue: OpenQueue) -> np.ndarray:
    """Pmf of the size-biased length, ``P(Xs = x) = x P(X = x) / E X``."""
    m = queue.mean
    if not m > 0:
        raise UnsupportedCaseError(f"queue {queue.index}: size-biased law undefined for a zero mean")
    return queue.support * queue.pmf / m


def gamma_sq(pmf) -> float:
    """Pairing constant ``sum_k p_2k p_2k+1 / (p_2k + p_2k+1)``.

    It controls the decay of ``|phi(theta)|`` away from zero for lattice
    laws and vanishes when the support lies on a sublattice of span >= 2.
    """
    p = np.asarray(pmf, dtype=float)
    if len(p) % 2:
        p = np.append(p, 0.0)
    even, odd = p[0::2], p[1::2]
    s = even + odd
    nz = s > 0
    return float(np.sum(even[nz] * odd[nz] / s[nz]))


@dataclass(frozen=True, eq=False)
class MomentSet:
    """Per-queue and aggregate moments of the open system.

    ``beta2..beta4`` are centred absolute moments, ``beta3_signed`` the third
    central moment and ``gamma2`` the lattice pairing constant.
    """

    index: tuple
    mean: np.ndarray
    var: np.ndarray
    beta3: np.ndarray
    beta4: np.ndarray
    beta3_signed: np.ndarray
    gamma2: np.ndarray
    queues: tuple = ()

    @classmethod
    def from_queues(cls, queues: Sequence[OpenQueue]) -> "MomentSet":
        queues = tuple(queues)
        cols = {k: [] for k in ("mean", "var", "beta3", "beta4", "beta3_signed", "gamma2")}
        for q in queues:
            d = q.support - q.mean
            ad = np.abs(d)
            cols["mean"].append(q.mean)
            cols["var"].append(q.var)
            cols["beta3"].append(float(ad ** 3 @ q.pmf))
            cols["beta4"].append(float(ad ** 4 @ q.pmf))
            cols["beta3_signed"].append(float(d ** 3 @ q.pmf))
            cols["gamma2"].append(gamma_sq(q.pmf))
        arrays = {k: np.array(v, dtype=float) for k, v in cols.items()}
        return cls(tuple(q.index for q in queues), queues=queues, **arrays)

    def subset(self, indices) -> "MomentSet":
        pos = {k: i for i, k in enumerate(self.index)}
        sel = [pos[k] for k in indices]
        return MomentSet(
            tuple(self.index[i] for i in sel),
            self.mean[sel], self.var[sel], self.beta3[sel], self.beta4[sel],
            self.beta3_signed[sel], self.gamma2[sel],
            tuple(self.queues[i] for i in sel) if self.queues else (),
        )

    def beta(self, order: float) -> np.ndarray:
        """Per-queue ``E|X - m|^order``; integer orders 2..4 come from storage."""
        if order == 2:
            return self.var
        if order == 3:
            return self.beta3
        if order == 4:
            return self.beta4
        if not self.queues:
            raise UnsupportedCaseError(f"fractional moment of order {order} needs the queue pmfs")
        return np.array([q.abs_moment(order) for q in self.queues])

    def total_beta(self, order: float) -> float:
        return float(self.beta(order).sum())

    @property
    def total_mean(self) -> float:
        return float(self.mean.sum())

    @property
    def sigma2(self) -> float:
        return float(self.var.sum())

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def total_beta3_signed(self) -> float:
        return float(self.beta3_signed.sum())

    @property
    def total_gamma2(self) -> float:
        return float(self.gamma2.sum())


def _mean_var(curve: ServiceCurve, a: float):
    """Mean and variance of one open queue, closed form where available."""
    if a == 0.0:
        return 0.0, 0.0
    if curve.kind == SINGLE:
        rho = a / curve.mu
        return rho / (1 - rho), rho / (1 - rho) ** 2
    if curve.kind == INFINITE:
        return a / curve.mu, a / curve.mu
    if curve.kind == ALGEBRAIC:
        if a / curve.mu > 1 - 1e-6:
            return math.inf, math.inf  # support would exceed MAX_SUPPORT
        with warnings.catch_warnings():
            warnings.simplefilter("error", PrecisionWarning)
            try:
                q = queue_pmf(curve, 1.0, a)
            except PrecisionWarning:
                return math.inf, math.inf
        return q.mean, q.var
    # explicit head below q0, geometric tail from q0 on
    q0 = curve.constant_from
    rho = a / effective_rate(curve)
    logt = _log_terms(curve, a, q0)
    top = logt.max()
    w = np.exp(logt - top)
    head, t0 = w[:-1], w[-1]
    xs = np.arange(q0)
    g = 1 - rho
    s0 = head.sum() + t0 / g
    s1 = xs @ head + t0 * (q0 / g + rho / g ** 2)
    s2 = (xs ** 2) @ head + t0 * (q0 ** 2 / g + 2 * q0 * rho / g ** 2 + rho * (1 + rho) / g ** 3)
    mean = s1 / s0
    return mean, max(s2 / s0 - mean * mean, 0.0)


def queue_means(network: ClosedNetwork, lam: float, with_var: bool = False):
    """Per-queue open-system means (and variances) at intensity ``lam``.

    Single- and infinite-server queues are evaluated in bulk.
    """
    a = lam * network.pi
    kinds = np.array([c.kind for c in network.curves])
    mus = np.array([c.mu for c in network.curves])
    mean = np.empty(network.n)
    var = np.empty(network.n)
    s = kinds == SINGLE
    if s.any():
        rho = a[s] / mus[s]
        if np.any(rho >= 1):
            k = int(np.flatnonzero(s)[np.argmax(rho)])
            raise ErgodicityError(f"queue {k} is not ergodic at intensity {lam:.6g}")
        mean[s] = rho / (1 - rho)
        var[s] = rho / (1 - rho) ** 2
    i = kinds == INFINITE
    mean[i] = a[i] / mus[i]
    var[i] = a[i] / mus[i]
    for k in np.flatnonzero(~(s | i)):
        curve = network.curves[k]
        if a[k] >= effective_rate(curve):
            raise ErgodicityError(f"queue {k} is not ergodic at intensity {lam:.6g}")
        mean[k], var[k] = _mean_var(curve, float(a[k]))
    return (mean, var) if with_var else mean


def total_mean(network: ClosedNetwork, lam: float) -> float:
    """``m_n(lam)``, the expected total population of the open system."""
    return float(queue_means(network, lam).sum())


@dataclass(frozen=True, eq=False)
class SolvedSurrogate:
    """Open system at the intensity matching the closed population."""

    network: ClosedNetwork
    lam: float
    queues: tuple
    moments: MomentSet
    partition: QueuePartition

    @property
    def population(self) -> int:
        return self.network.population

    @property
    def rho0(self) -> float:
        return self.partition.rho0

    @property
    def alpha(self) -> float:
        r = self.rho0
        return r / (1 - r)

    @property
    def F0(self) -> tuple:
        return self.partition.F0

    @cached_property
    def hat_indices(self) -> tuple:
        f0 = set(self.F0)
        return tuple(k for k in range(self.network.n) if k not in f0)

    @cached_property
    def hat_moments(self) -> MomentSet:
        return self.moments.subset(self.hat_indices)

    def pmfs(self, indices=None) -> list:
        idx = range(self.network.n) if indices is None else indices
        return [self.queues[k].pmf for k in idx]

    def char_fn(self, k: int, theta):
        return self.queues[k].char_fn(theta)

    def char_fn_total(self, theta):
        return self._char_product(range(self.network.n), theta)

    def char_fn_hat(self, theta):
        return self._char_product(self.hat_indices, theta)

    def _char_product(self, indices, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.ones(theta.shape, dtype=complex)
        for k in indices:
            out = out * self.queues[k].char_fn(theta)
        return out


def solve_lambda(
    network: ClosedNetwork,
    m: Optional[int] = None,
    tol: float = 1e-9,
    bracket: Optional[tuple] = None,
    min_support: Optional[int] = None,
) -> SolvedSurrogate:
    """Intensity ``lam_n`` with ``m_n(lam_n) = m`` and the open system there.

    Safeguarded Newton on the monotone map ``lam -> m_n(lam)`` using the
    derivative ``sigma_n^2(lam) / lam``, bracketed in ``(0, lambda0)``.
    """
    if m is None:
        m = network.population
    elif m != network.population:
        network = network.with_population(m)
    if m < 0:
        raise PopulationError(f"population must be nonnegative, got {m}")
    lam0 = network.lambda0
    support = m if min_support is None else min_support
    if m == 0:
        lam = 0.0
    else:
        lam = _root(network, m, lam0, tol, bracket)
    queues = tuple(
        queue_pmf(c, network.pi[k], lam, min_support=support, index=k)
        for k, c in enumerate(network.curves)
    )
    moments = MomentSet.from_queues(queues)
    resid = abs(moments.total_mean - m)
    if resid > tol * max(1.0, m):
        warnings.warn(
            f"population residual {resid:.3g} exceeds {tol:g} relative after truncation",
            PrecisionWarning,
            stacklevel=2,
        )
    return SolvedSurrogate(network, lam, queues, moments, partition(network, lam, strict=False))


def _root(network, m, lam0, tol, bracket):
    target_tol = 0.1 * tol * max(1.0, m)
    if math.isinf(lam0):
        # no saturable queue: m_n is unbounded, grow the bracket until it covers m
        hi_cap = 1.0
        while total_mean(network, hi_cap) < m:
            hi_cap *= 2.0
    else:
        hi_cap = lam0 * (1 - SATURATION_MARGIN)
    lo, hi = (0.0, hi_cap) if bracket is None else (max(0.0, bracket[0]), min(hi_cap, bracket[1]))

    def f(lam):
        mean, var = queue_means(network, lam, with_var=True)
        return float(mean.sum()) - m, float(var.sum())

    f_hi, _ = f(hi)
    if f_hi < 0:
        if bracket is not None and hi < hi_cap:
            return _root(network, m, lam0, tol, None)
        raise PopulationError(
            f"population {m} exceeds representable load: m_n reaches only {f_hi + m:.6g} "
            f"at intensity {hi:.17g} (saturation at {lam0:.17g})"
        )
    if lo > 0 and f(lo)[0] > 0:
        return _root(network, m, lam0, tol, None)
    lam = 0.5 * (lo + hi) if lo > 0 or math.isinf(lam0) else min(hi, 0.5 * lam0)
    for _ in range(400):
        val, var = f(lam)
        if abs(val) <= target_tol:
            return lam
        if val > 0:
            hi = lam
        else:
            lo = lam
        if hi - lo <= 4 * np.finfo(float).eps * hi:
            return lam
        step = lam - val * lam / var if var > 0 and math.isfinite(var) else math.nan
        lam = step if lo < step < hi else 0.5 * (lo + hi)
    return lam
