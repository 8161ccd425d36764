"""Exact equilibrium of a closed network by convolution over the population.

All weights are kept as logarithms; ``x_k(q) = pi_k^q / (mu_k(1)...mu_k(q))``
and ``Z_j = sum over q_1+...+q_n=j of prod_k x_k(q_k)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ModelError, PrecisionWarning
from .model import ClosedNetwork

SN_TAIL_TOL = 1e-10


def log_weights(network: ClosedNetwork, k: int, m: int) -> np.ndarray:
    """``log x_k(q)`` for ``q = 0..m``."""
    q = np.arange(m + 1)
    return q * math.log(network.pi[k]) - network.curves[k].log_rate_products(m)


def _check_population(m):
    if int(m) != m or m < 0:
        raise ModelError(f"population must be a nonnegative integer, got {m!r}")
    return int(m)


def normalizing_constants(network: ClosedNetwork, m: int | None = None) -> np.ndarray:
    """``log Z_j`` for ``j = 0..m`` by sequential log-space convolution."""
    m = _check_population(network.population if m is None else m)
    acc = np.full(m + 1, -np.inf)
    acc[0] = 0.0
    for k in range(network.n):
        acc = kernels.log_convolve(acc, log_weights(network, k, m), m + 1)
    return acc


@dataclass(frozen=True, eq=False)
class ExactSolution:
    """Normalizing constants, marginal pmfs and means of the closed network."""

    network: ClosedNetwork
    log_Z: np.ndarray
    marginals: np.ndarray  # shape (n, m + 1)

    @property
    def population(self) -> int:
        return len(self.log_Z) - 1

    @property
    def means(self) -> np.ndarray:
        return self.marginals @ np.arange(self.population + 1)

    def marginal(self, k: int) -> np.ndarray:
        return self.marginals[k]

    def mean(self, k: int) -> float:
        return float(self.means[k])

    def joint(self, state: Sequence[int]) -> float:
        return joint_probability(self.network, state, self.log_Z[-1])


def _leave_one_out(network: ClosedNetwork, m: int):
    """``log Z^(-k)_j`` for every queue ``k`` via prefix and suffix products."""
    n = network.n
    w = [log_weights(network, k, m) for k in range(n)]
    unit = np.full(m + 1, -np.inf)
    unit[0] = 0.0
    prefix = [unit]
    for k in range(n - 1):
        prefix.append(kernels.log_convolve(prefix[-1], w[k], m + 1))
    suffix = [unit]
    for k in range(n - 1, 0, -1):
        suffix.append(kernels.log_convolve(suffix[-1], w[k], m + 1))
    suffix.reverse()  # suffix[k] covers queues k+1..n-1
    out = []
    for k in range(n):
        out.append(kernels.log_convolve(prefix[k], suffix[k], m + 1))
    return w, out


def solve_exact(network: ClosedNetwork, m: int | None = None) -> ExactSolution:
    """Exact marginals ``P(Q_k = q) = x_k(q) Z^(-k)_{m-q} / Z_m`` for all queues."""
    m = _check_population(network.population if m is None else m)
    if m != network.population:
        network = network.with_population(m)
    log_Z = normalizing_constants(network, m)
    w, loo = _leave_one_out(network, m)
    marg = np.empty((network.n, m + 1))
    for k in range(network.n):
        lp = w[k] + loo[k][::-1] - log_Z[m]
        marg[k] = np.exp(lp)
    return ExactSolution(network, log_Z, marg)


def exact_marginal(network: ClosedNetwork, k: int, m: int | None = None) -> np.ndarray:
    return solve_exact(network, m).marginal(k)


def exact_mean(network: ClosedNetwork, k: int, m: int | None = None) -> float:
    return solve_exact(network, m).mean(k)


def joint_probability(network: ClosedNetwork, state: Sequence[int], log_Zm: float | None = None) -> float:
    """Product-form probability of a full state vector."""
    state = [int(q) for q in state]
    if len(state) != network.n or min(state) < 0:
        raise ModelError(f"state {state} does not match a {network.n}-queue network")
    m = sum(state)
    if log_Zm is None:
        log_Zm = normalizing_constants(network, m)[m]
    lw = sum(log_weights(network, k, q)[q] for k, q in enumerate(state))
    return math.exp(lw - log_Zm)


def enumerate_states(n: int, m: int):
    """All vectors of ``n`` nonnegative integers summing to ``m``."""
    if n == 1:
        yield (m,)
        return
    for q in range(m + 1):
        for rest in enumerate_states(n - 1, m - q):
            yield (q,) + rest


def exact_sn_pmf(pmfs: Sequence[np.ndarray], J: int | None = None, warn: bool = True) -> np.ndarray:
    """``P(X_1 + ... + X_n = j)`` for ``j = 0..J`` from independent pmfs.

    Warns when the mass of the full convolution lying beyond ``J`` exceeds
    ``SN_TAIL_TOL``.
    """
    pmfs = [np.asarray(p, dtype=float) for p in pmfs]
    full_len = sum(len(p) - 1 for p in pmfs) + 1
    if J is None:
        J = full_len - 1
    acc = np.zeros(J + 1)
    acc[0] = 1.0
    for p in pmfs:
        acc = kernels.convolve_truncated(acc, p, J + 1)
    if warn and J + 1 < full_len:
        expected = math.prod(float(p.sum()) for p in pmfs)
        lost = expected - float(acc.sum())
        if lost > SN_TAIL_TOL:
            warnings.warn(f"S_n pmf truncated at {J}: mass {lost:.3g} lies beyond", PrecisionWarning, stacklevel=2)
    return acc
