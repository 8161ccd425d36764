"""Three application families: Jackson networks with a load measure, tandem
subnetworks with failures, and a fleet of service vehicles between stations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ModelError, NumericalInconsistencyError, UnsupportedCaseError
from .model import ClosedNetwork, ServiceCurve, check_irreducible, check_stochastic, invariant_measure, partition
from .oracle import solve_exact
from .scaling import GROWTH_STEP, NetworkFamily, check_assumptions, default_t_grid, m_hat0
from .surrogate import solve_lambda

STATE_BUDGET = 1_000_000
WEIGHT_TOL = 1e-9


def _cycle(n: int) -> sp.csr_matrix:
    return sp.csr_matrix((np.ones(n), (np.arange(n), (np.arange(n) + 1) % n)), shape=(n, n))


# ---------------------------------------------------------------- Jackson


def load_measure(table) -> tuple:
    """Validate a list of ``(r, weight)`` atoms; returns arrays ``(r, w)``."""
    arr = np.asarray(table, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) == 0:
        raise ModelError("load measure must be a nonempty list of (r, weight) pairs")
    r, w = arr[:, 0], arr[:, 1]
    if np.any(r <= 0) or np.any(r > 1):
        raise ModelError("relative loads must lie in (0, 1]")
    if np.any(w < 0) or abs(w.sum() - 1) > WEIGHT_TOL:
        raise ModelError(f"weights must be nonnegative and sum to 1, got {w.sum():.12g}")
    return r, w


def discretize_density(density, atoms: int = 100) -> list:
    """Midpoint atoms ``((i - 1/2)/atoms, density/atoms)`` on (0, 1), renormalized."""
    r = (np.arange(atoms) + 0.5) / atoms
    w = np.asarray([density(x) for x in r], dtype=float) / atoms
    return list(zip(r, w / w.sum()))


def lambda_cr(table, t_grid=None) -> float:
    """``lim_{t -> 1} int t r / (1 - t r) dI(r)``; infinite for an atom at ``r = 1``."""
    r, w = load_measure(table)
    if np.any(w[r >= 1 - 1e-12] > 0):
        return math.inf
    t = default_t_grid() if t_grid is None else np.sort(np.asarray(t_grid, dtype=float))
    g = np.array([float(np.sum(w * s * r / (1 - s * r))) for s in t])
    growth = g[-3:] / g[-4:-1] - 1
    if np.all(growth > GROWTH_STEP):
        return math.inf
    return float(2 * g[-1] - g[-2])


def _allocate(w, total):
    """Largest-remainder split of ``total`` items by weights ``w``."""
    raw = w * total
    base = np.floor(raw).astype(int)
    rest = total - base.sum()
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:rest]] += 1
    return base


def jackson_network(table, n: int, population: int = 0) -> ClosedNetwork:
    """Single-server queues on a cycle with relative loads drawn from the measure.

    Queue 0 is an anchor at relative load 1 (the definition of ``lambda0``
    makes the largest relative load equal to one); the other ``n - 1``
    queues are dealt to the atoms by largest remainder.
    """
    r, w = load_measure(table)
    if n < 1:
        raise ModelError("need at least one queue")
    counts = _allocate(w, n - 1)
    loads = np.concatenate([[1.0], np.repeat(r, counts)])
    curves = [ServiceCurve.single(1.0 / x) for x in loads]
    return ClosedNetwork(curves, _cycle(n), population)


def jackson_family(table, indices: Sequence[int], population=None) -> NetworkFamily:
    load_measure(table)
    return NetworkFamily(lambda n: jackson_network(table, n), tuple(indices), population, "jackson")


build_jackson = jackson_family


# ---------------------------------------------------------------- tandem


def tandem_network(s: int, ell: int, f: float, population: int = 0) -> ClosedNetwork:
    """``s`` subnetworks of ``ell`` unit-rate queues in tandem.

    After service a task fails with probability ``f`` and returns to the
    entry of its subnetwork; otherwise it moves on, the last queue of a
    subnetwork feeding the entry of the next one (cyclically).
    """
    if not 0 < f < 1:
        raise ModelError(f"failure probability must lie in (0, 1), got {f}")
    if s < 1 or ell < 1:
        raise ModelError("s and ell must be positive")
    n = s * ell
    rows, cols, vals = [], [], []
    for i in range(s):
        entry = i * ell
        for k in range(ell):
            q = entry + k
            nxt = q + 1 if k < ell - 1 else ((i + 1) % s) * ell
            rows += [q, q]
            cols += [entry, nxt]
            vals += [f, 1 - f]
    P = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))  # duplicates are summed
    return ClosedNetwork([ServiceCurve.single(1.0)] * n, P, population)


def tandem_pi(s: int, ell: int, f: float) -> np.ndarray:
    """Closed-form invariant measure ``pi_k = (1-f)^(k-1) f / (s (1 - (1-f)^ell))``."""
    k = np.arange(ell)
    block = f * (1 - f) ** k / (1 - (1 - f) ** ell) / s
    return np.tile(block, s)


def tandem_family(f: float, pairs: dict, population=None) -> NetworkFamily:
    """Family indexed by the keys of ``pairs``, each mapping to ``(s, ell)``."""
    pairs = dict(pairs)
    return NetworkFamily(lambda n: tandem_network(*pairs[n], f), tuple(pairs), population, "tandem")


build_tandem = tandem_network


def L_f(t: float, f: float, terms: Optional[int] = None) -> float:
    """``sum_{k>=1} t (1-f)^(k-1) / (1 - t (1-f)^(k-1))``, truncated at ``terms`` if given."""
    if not 0 < t < 1:
        raise ModelError("t must lie in (0, 1)")
    total, k, x = 0.0, 0, t
    while True:
        term = x / (1 - x)
        total += term
        k += 1
        if terms is not None and k >= terms:
            return total
        if terms is None and term < 1e-17 * total:
            return total
        x *= 1 - f


# ---------------------------------------------------------------- vehicles


@dataclass(frozen=True, eq=False)
class VehicleNetwork:
    """Stations with request rates, travel rates between them and a routing matrix."""

    station_rates: np.ndarray
    travel_rates: np.ndarray
    routing: np.ndarray
    fleet: int = 0

    def __post_init__(self):
        mu = np.asarray(self.station_rates, dtype=float)
        P = np.asarray(self.routing, dtype=float)
        T = np.broadcast_to(np.asarray(self.travel_rates, dtype=float), P.shape).copy()
        n = len(mu)
        if P.shape != (n, n):
            raise ModelError(f"routing must be {n}x{n}")
        if np.any(mu <= 0):
            raise ModelError("station rates must be positive")
        check_stochastic(P)
        check_irreducible(P)
        if np.any(T[P > 0] <= 0):
            raise ModelError("travel rates must be positive on used edges")
        if int(self.fleet) != self.fleet or self.fleet < 0:
            raise ModelError("fleet size must be a nonnegative integer")
        object.__setattr__(self, "station_rates", mu)
        object.__setattr__(self, "routing", P)
        object.__setattr__(self, "travel_rates", T)
        object.__setattr__(self, "fleet", int(self.fleet))

    @property
    def n(self) -> int:
        return len(self.station_rates)

    @cached_property
    def edges(self) -> tuple:
        return tuple((int(k), int(l)) for k, l in zip(*np.nonzero(self.routing > 0)))

    @cached_property
    def station_pi(self) -> np.ndarray:
        return invariant_measure(self.routing)

    @cached_property
    def network(self) -> ClosedNetwork:
        return build_vehicle(self)

    def with_fleet(self, m: int) -> "VehicleNetwork":
        return VehicleNetwork(self.station_rates, self.travel_rates, self.routing, m)

    def scaled(self, factor: float) -> "VehicleNetwork":
        return VehicleNetwork(self.station_rates * factor, self.travel_rates * factor, self.routing, self.fleet)


def symmetric_vehicle(n: int = 3, station_rate: float = 1.0, travel_rate: float = 0.25,
                      fleet: int = 0) -> VehicleNetwork:
    P = np.full((n, n), 1.0 / n)
    return VehicleNetwork(np.full(n, station_rate), np.full((n, n), travel_rate), P, fleet)


def build_vehicle(v: VehicleNetwork) -> ClosedNetwork:
    """Stations first (single server), then one infinite-server queue per used edge.

    Checks that the station share of the full invariant measure is half the
    station-chain measure.
    """
    n = v.n
    edges = v.edges
    N = n + len(edges)
    rows, cols, vals = [], [], []
    for e, (k, l) in enumerate(edges):
        rows += [k, n + e]
        cols += [n + e, l]
        vals += [v.routing[k, l], 1.0]
    P = sp.csr_matrix((vals, (rows, cols)), shape=(N, N))
    curves = [ServiceCurve.single(x) for x in v.station_rates]
    curves += [ServiceCurve.infinite(v.travel_rates[k, l]) for k, l in edges]
    labels = [f"station{k}" for k in range(n)] + [f"edge{k}-{l}" for k, l in edges]
    net = ClosedNetwork(curves, P, v.fleet, labels)
    factor = net.pi[:n] / v.station_pi
    if np.max(np.abs(factor - 0.5)) > 1e-9:
        raise NumericalInconsistencyError(f"station share of the invariant measure is {factor}, expected 1/2")
    return net


@dataclass(frozen=True)
class LossEstimate:
    value: float
    method: str
    lam: Optional[float] = None
    epsilon: Optional[float] = None
    notes: tuple = ()


def _scal_epsilon(m, mh):
    if not 0 < m < mh:
        return math.inf
    theta = 1 - m / mh
    return 1.0 / m + 1.0 / (m * m * theta ** 4)


def asymptotic_loss_at(v: VehicleNetwork, lam: float) -> float:
    """``1 - sum_k lam pi_k / sum_k mu_k`` with the full-network station measure."""
    pi = v.network.pi[: v.n]
    return 1.0 - lam * float(pi.sum()) / float(v.station_rates.sum())


def loss_probability(v: VehicleNetwork, method: str = "exact", budget: int = STATE_BUDGET) -> LossEstimate:
    """Share of requests finding their station empty."""
    m = v.fleet
    if m == 0:
        return LossEstimate(1.0, method, 0.0, 0.0, ("empty fleet",))
    net = v.network
    mu = v.station_rates
    if method == "exact":
        if net.n * m > budget:
            raise UnsupportedCaseError(
                f"state-space size {net.n}x{m} exceeds budget {budget}; use the asymptotic route"
            )
        ex = solve_exact(net)
        p0 = ex.marginals[: v.n, 0]
        return LossEstimate(float(mu @ p0 / mu.sum()), method)
    if method == "asymptotic":
        sol = solve_lambda(net)
        mh = m_hat0(net)
        eps = _scal_epsilon(m, mh)
        notes = []
        theta = 1 - m / mh if mh > 0 else math.nan
        if not (theta > 0 and theta * theta * m >= 10):
            notes.append("fleet outside the non-saturated regime hypotheses")
        return LossEstimate(asymptotic_loss_at(v, sol.lam), method, sol.lam, eps, tuple(notes))
    raise ModelError(f"unknown loss method {method!r}")


@dataclass(frozen=True)
class FleetRecommendation:
    m_hat0: float
    fleet: int
    bottlenecks: tuple
    lambda0: float
    nonsat: object


def recommend_fleet(v: VehicleNetwork, A: float = 0.95) -> FleetRecommendation:
    """Fleet size ``m_hat0 = sum of open means outside the bottlenecks at lambda0``."""
    net = v.network
    part = partition(net)
    mh = m_hat0(net, part)
    checks = check_assumptions(net, part, A=A)
    stations = tuple(k for k in part.F0 if k < v.n)
    return FleetRecommendation(mh, int(math.floor(mh + 1e-9)), stations, part.lambda0, checks["A-nonsat"])


# ---------------------------------------------------------------- presets


def vehicle_from_dict(d: dict) -> VehicleNetwork:
    if "routing" in d:
        P = np.asarray(d["routing"], dtype=float)
        n = len(P)
    else:
        n = int(d.get("stations", 3))
        P = np.full((n, n), 1.0 / n)
    mu = np.broadcast_to(np.asarray(d.get("station_rates", 1.0), dtype=float), (n,))
    T = np.asarray(d.get("travel_rates", 0.25), dtype=float)
    return VehicleNetwork(mu, T, P, int(d.get("fleet", 0)))
