"""Closed product-form networks: service curves, routing, queue partition.

A network is a list of queues, each with a state-dependent service rate
``mu(q)`` for ``q >= 1`` customers present, a stochastic routing matrix and
a number of circulating customers. The routing chain's invariant measure
``pi`` gives the relative visit rates used everywhere else.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .errors import ErgodicityError, ModelError, PopulationError, StructureError

SINGLE = "single"
MULTI = "multi"
INFINITE = "infinite"
ALGEBRAIC = "algebraic"
TABLE = "table"
KINDS = (SINGLE, MULTI, INFINITE, ALGEBRAIC, TABLE)

ROW_SUM_TOL = 1e-12
TIE_TOL = 1e-9
DENSE_LIMIT = 2000


@dataclass(frozen=True)
class ServiceCurve:
    """Service rate as a function of the local queue length.

    Use the named constructors rather than the raw fields:

    >>> ServiceCurve.multi(1.0, 3).rate(np.arange(1, 6))
    array([1., 2., 3., 3., 3.])
    """

    kind: str
    mu: float
    c: Optional[int] = None
    xi: Optional[float] = None
    table: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unknown queue kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == TABLE:
            if not self.table:
                raise ModelError("table curve needs a non-empty rate list")
            if any(not (v > 0 and math.isfinite(v)) for v in self.table):
                raise ModelError("table rates must be positive and finite")
            object.__setattr__(self, "table", tuple(float(v) for v in self.table))
            object.__setattr__(self, "mu", float(self.table[-1]))
        elif not (self.mu > 0 and math.isfinite(self.mu)):
            raise ModelError(f"service rate must be positive and finite, got {self.mu}")
        if self.kind == MULTI and (self.c is None or int(self.c) != self.c or self.c < 1):
            raise ModelError(f"multi-server curve needs an integer server count >= 1, got {self.c}")
        if self.kind == ALGEBRAIC and (self.xi is None or not self.xi > 1):
            raise ModelError(f"algebraic curve needs order xi > 1, got {self.xi}")

    @classmethod
    def single(cls, mu: float) -> "ServiceCurve":
        return cls(SINGLE, float(mu))

    @classmethod
    def multi(cls, mu: float, c: int) -> "ServiceCurve":
        return cls(MULTI, float(mu), c=int(c))

    @classmethod
    def infinite(cls, mu: float) -> "ServiceCurve":
        return cls(INFINITE, float(mu))

    @classmethod
    def algebraic(cls, mu: float, xi: float) -> "ServiceCurve":
        """Rate approaching ``mu`` from below as ``mu * exp(-(xi - 1) / q)``."""
        return cls(ALGEBRAIC, float(mu), xi=float(xi))

    @classmethod
    def tabulated(cls, rates: Sequence[float]) -> "ServiceCurve":
        """Explicit rates ``mu(1..Q)``, held constant at ``mu(Q)`` beyond ``Q``."""
        if not len(rates):
            raise ModelError("table curve needs a non-empty rate list")
        return cls(TABLE, float(rates[-1]), table=tuple(rates))

    @property
    def is_finite(self) -> bool:
        """True when the queue can be saturated by a finite input flow."""
        return self.kind != INFINITE

    def rate(self, q):
        q = np.asarray(q, dtype=float)
        if self.kind == SINGLE:
            return np.full(q.shape, self.mu)
        if self.kind == MULTI:
            return self.mu * np.minimum(q, self.c)
        if self.kind == INFINITE:
            return self.mu * q
        if self.kind == ALGEBRAIC:
            return self.mu * np.exp(-(self.xi - 1.0) / q)
        tab = np.asarray(self.table)
        idx = np.clip(q.astype(int) - 1, 0, len(tab) - 1)
        return tab[idx]

    def log_rate_products(self, n_max: int) -> np.ndarray:
        """``log(mu(1) * ... * mu(q))`` for ``q = 0..n_max`` (zero at ``q = 0``)."""
        out = np.zeros(n_max + 1)
        if n_max <= 0:
            return out
        q = np.arange(1, n_max + 1)
        if self.kind == INFINITE:
            from scipy.special import gammaln  # log q! without overflow

            out[1:] = q * math.log(self.mu) + gammaln(q + 1.0)
            return out
        out[1:] = np.cumsum(np.log(self.rate(q)))
        return out

    @property
    def constant_from(self) -> Optional[int]:
        """Smallest ``q0`` with ``mu(q) == effective rate`` for all ``q >= q0``, if any."""
        if self.kind == SINGLE:
            return 1
        if self.kind == MULTI:
            return self.c
        if self.kind == TABLE:
            tab = self.table
            q0 = len(tab)
            while q0 > 1 and tab[q0 - 2] == tab[-1]:
                q0 -= 1
            return q0
        return None

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "mu": self.mu}
        if self.kind == MULTI:
            d["c"] = self.c
        if self.kind == ALGEBRAIC:
            d["xi"] = self.xi
        if self.kind == TABLE:
            d["table"] = list(self.table)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ServiceCurve":
        kind = d.get("kind")
        try:
            if kind == SINGLE:
                return cls.single(d["mu"])
            if kind == MULTI:
                return cls.multi(d["mu"], d["c"])
            if kind == INFINITE:
                return cls.infinite(d["mu"])
            if kind == ALGEBRAIC:
                return cls.algebraic(d["mu"], d["xi"])
            if kind == TABLE:
                return cls.tabulated(d["table"])
        except KeyError as exc:
            raise ModelError(f"queue of kind {kind!r} is missing field {exc.args[0]!r}") from None
        raise ModelError(f"unknown queue kind {kind!r}; expected one of {KINDS}")


def effective_rate(curve: ServiceCurve) -> float:
    """Liminf of the geometric mean of the rates; ``inf`` for infinite-server queues."""
    if curve.kind == SINGLE or curve.kind == ALGEBRAIC:
        return curve.mu
    if curve.kind == MULTI:
        return curve.mu * curve.c
    if curve.kind == TABLE:
        return curve.table[-1]
    return math.inf


def _as_routing(routing):
    if sp.issparse(routing):
        return sp.csr_matrix(routing, dtype=float)
    arr = np.asarray(routing, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ModelError(f"routing must be a square matrix, got shape {arr.shape}")
    return arr


def check_stochastic(routing) -> None:
    P = _as_routing(routing)
    if sp.issparse(P):
        if P.nnz and P.data.min() < 0:
            raise ModelError("routing matrix has negative entries")
        rows = np.asarray(P.sum(axis=1)).ravel()
    else:
        if not np.all(np.isfinite(P)) or P.min() < 0:
            raise ModelError("routing matrix has negative or non-finite entries")
        rows = P.sum(axis=1)
    bad = np.flatnonzero(np.abs(rows - 1.0) > ROW_SUM_TOL)
    if bad.size:
        k = int(bad[0])
        raise ModelError(f"routing row {k} sums to {rows[k]!r}, not 1")


def check_irreducible(routing) -> None:
    P = _as_routing(routing)
    graph = sp.csr_matrix(P > 0) if not sp.issparse(P) else (P > 0)
    ncomp, labels = connected_components(graph, directed=True, connection="strong")
    if ncomp > 1:
        # a class that cannot be reached from queue 0's class
        reach = breadth_first_order(graph, 0, directed=True, return_predecessors=False)
        unreachable = sorted(set(range(P.shape[0])) - set(reach.tolist()))
        if unreachable:
            cls = [k for k in unreachable if labels[k] == labels[unreachable[0]]]
            raise StructureError(
                f"routing is reducible: queues {cls} are not reachable from queue 0"
            )
        cls = [int(k) for k in np.flatnonzero(labels != labels[0])]
        raise StructureError(f"routing is reducible: queue 0 cannot be reached from queues {cls}")


def invariant_measure(routing) -> np.ndarray:
    """Stationary distribution of an irreducible stochastic matrix.

    Dense solve up to ``DENSE_LIMIT`` states, sparse LU above; power
    iteration on the lazy chain is the fallback if a solve is inaccurate.
    """
    check_stochastic(routing)
    check_irreducible(routing)
    P = _as_routing(routing)
    n = P.shape[0]
    if n == 1:
        return np.ones(1)
    b = np.zeros(n)
    b[-1] = 1.0
    if sp.issparse(P) or n > DENSE_LIMIT:
        # pin the last component to 1 and solve the reduced system; a row of
        # ones would fill in the LU factors
        A = sp.csc_matrix(sp.csr_matrix(P).T - sp.identity(n, format="csr"))
        pi = np.ones(n)
        pi[:-1] = scipy.sparse.linalg.spsolve(A[:-1, :-1], -A[:-1, [n - 1]].toarray().ravel())
    else:
        A = P.T - np.eye(n)
        A[-1, :] = 1.0
        pi = scipy.linalg.solve(A, b)
    if not _is_fixed_point(P, pi):
        pi = _power_iteration(P)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    return pi


def _is_fixed_point(P, pi, tol=1e-10):
    if not np.all(np.isfinite(pi)) or pi.min() <= 0:
        return False
    return float(np.max(np.abs(P.T @ pi - pi))) < tol


def _power_iteration(P, tol=1e-12, max_iter=1_000_000):
    n = P.shape[0]
    pi = np.full(n, 1.0 / n)
    PT = P.T
    for _ in range(max_iter):
        nxt = 0.5 * (pi + PT @ pi)
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - pi)) < tol:
            return nxt
        pi = nxt
    return pi


@dataclass(eq=False, frozen=True)
class ClosedNetwork:
    """A single-chain closed network with ``population`` circulating customers."""

    curves: tuple
    routing: object
    population: int = 0
    labels: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "curves", tuple(self.curves))
        object.__setattr__(self, "routing", _as_routing(self.routing))
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
        m = self.population
        if isinstance(m, bool) or int(m) != m or m < 0:
            raise PopulationError(f"population must be a nonnegative integer, got {m!r}")
        object.__setattr__(self, "population", int(m))
        if self.routing.shape[0] != len(self.curves):
            raise ModelError(
                f"routing is {self.routing.shape[0]}x{self.routing.shape[0]} "
                f"but {len(self.curves)} queues were given"
            )
        check_stochastic(self.routing)
        check_irreducible(self.routing)

    @property
    def n(self) -> int:
        return len(self.curves)

    @cached_property
    def pi(self) -> np.ndarray:
        return invariant_measure(self.routing)

    @cached_property
    def effective_rates(self) -> np.ndarray:
        return np.array([effective_rate(c) for c in self.curves])

    @cached_property
    def lambda0(self) -> float:
        """Smallest arrival intensity at which some finite-rate queue saturates."""
        mu = self.effective_rates
        fin = np.isfinite(mu)
        if not fin.any():
            return math.inf
        return float(np.min(mu[fin] / self.pi[fin]))

    @property
    def has_saturable_queue(self) -> bool:
        return any(c.is_finite for c in self.curves)

    def with_population(self, m: int) -> "ClosedNetwork":
        net = ClosedNetwork.__new__(ClosedNetwork)
        for name in ("curves", "routing", "labels"):
            object.__setattr__(net, name, getattr(self, name))
        if isinstance(m, bool) or int(m) != m or m < 0:
            raise ModelError(f"population must be a nonnegative integer, got {m!r}")
        object.__setattr__(net, "population", int(m))
        for cached in ("pi", "effective_rates", "lambda0"):
            if cached in self.__dict__:
                net.__dict__[cached] = self.__dict__[cached]
        return net

    def scaled(self, factor: float) -> "ClosedNetwork":
        """Same network with every service rate multiplied by ``factor``."""
        curves = []
        for c in self.curves:
            d = c.to_dict()
            if c.kind == TABLE:
                d["table"] = [v * factor for v in c.table]
            d["mu"] = c.mu * factor
            curves.append(ServiceCurve.from_dict(d))
        return ClosedNetwork(curves, self.routing, self.population, self.labels)

    def dense_routing(self) -> np.ndarray:
        P = self.routing
        return P.toarray() if sp.issparse(P) else P

    def __eq__(self, other):
        if not isinstance(other, ClosedNetwork):
            return NotImplemented
        return (
            self.curves == other.curves
            and self.population == other.population
            and self.labels == other.labels
            and np.array_equal(self.dense_routing(), other.dense_routing())
        )

    __hash__ = None


@dataclass(frozen=True)
class QueuePartition:
    """Finite-rate set F, infinite-rate set I and bottleneck set F0."""

    F: tuple
    I: tuple
    F0: tuple
    effective_rates: np.ndarray
    lambda0: float
    lam: Optional[float] = None
    rho0: Optional[float] = None
    rho: Optional[np.ndarray] = field(default=None, repr=False)


def partition(
    network: ClosedNetwork,
    lam: Optional[float] = None,
    tie_tol: float = TIE_TOL,
    strict: bool = True,
) -> QueuePartition:
    """Classify queues and compute the saturation load ``lambda0``.

    With ``lam`` given, per-queue utilizations ``rho_k = lam * pi_k / mu_k``
    are added (infinite-server queues use ``mu_k(1)``). A network without
    finite-rate queues raises unless ``strict`` is false, in which case
    ``lambda0`` is infinite and ``rho0`` is zero.
    """
    mu = network.effective_rates
    pi = network.pi
    fin = np.isfinite(mu)
    F = tuple(int(k) for k in np.flatnonzero(fin))
    I = tuple(int(k) for k in np.flatnonzero(~fin))
    if not F and strict:
        raise StructureError("network has no finite-rate queue, so it can never saturate")
    lam0 = network.lambda0
    # relative load at saturation, 1 for bottlenecks
    rel = np.zeros(network.n)
    rel[fin] = lam0 * pi[fin] / mu[fin]
    F0 = tuple(k for k in F if rel[k] >= 1.0 - tie_tol)
    if lam is None:
        return QueuePartition(F, I, F0, mu, lam0)
    lam = float(lam)
    base = mu.copy()
    for k in I:
        base[k] = network.curves[k].mu
    rho = lam * pi / base
    rho0 = lam / lam0 if F else 0.0
    for k in F:
        if rho[k] >= 1.0:
            raise ErgodicityError(
                f"queue {k} is not ergodic: load {rho[k]:.6g} >= 1 at intensity {lam:.6g}"
            )
    return QueuePartition(F, I, F0, mu, lam0, lam, rho0, rho)


def network_to_dict(network: ClosedNetwork) -> dict:
    d = {
        "n": network.n,
        "population": network.population,
        "routing": network.dense_routing().tolist(),
        "queues": [c.to_dict() for c in network.curves],
    }
    if network.labels is not None:
        d["labels"] = list(network.labels)
    return d


def network_from_dict(d: dict) -> ClosedNetwork:
    for key in ("routing", "queues"):
        if key not in d:
            raise ModelError(f"network description is missing {key!r}")
    curves = [ServiceCurve.from_dict(q) for q in d["queues"]]
    if "n" in d and int(d["n"]) != len(curves):
        raise ModelError(f"n = {d['n']} but {len(curves)} queues are listed")
    return ClosedNetwork(curves, np.asarray(d["routing"], dtype=float), d.get("population", 0), d.get("labels"))


def load_network(path) -> ClosedNetwork:
    return network_from_dict(json.loads(Path(path).read_text()))


def dump_network(network: ClosedNetwork, path=None) -> str:
    text = json.dumps(network_to_dict(network), indent=2)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text
