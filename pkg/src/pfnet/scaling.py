"""Critical populations, regime classification and assumption checks for network families.

A family maps an index ``n`` to a closed network. Along the family the
open-system mean ``m_n(t lambda0_n)`` at a fraction ``t`` of the
saturation load sets the population scale: populations well below the
critical sequence ``m0_n`` keep every queue bounded, populations above it
make the bottleneck queues grow.
"""
from __future__ import annotations

import ast
import math
import operator
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .asymptotics import estimate_xi
from .errors import ModelError, NumericalInconsistencyError, UnsupportedCaseError
from .model import INFINITE, ClosedNetwork, QueuePartition, ServiceCurve, partition
from .surrogate import queue_means, solve_lambda, total_mean

G_FINITE = "finite-1"
G_INFINITE = "infinite"

NON_SATURATED = "NonSaturated"
SATURATED_GAMMA = "SaturatedGamma"
SATURATED_NORMAL = "SaturatedNormal"
SATURATED_UNBOUNDED = "SaturatedUnbounded"

GROWTH_STEP = 0.05
THETA_THRESHOLD = 10.0
XI_FLAG = 20.0
MONOTONE_TOL = 1e-9


def default_t_grid() -> np.ndarray:
    return 1.0 - 2.0 ** -np.arange(3, 13)


# ---------------------------------------------------------------- population rules

_BINOPS = {
    ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
    ast.Div: operator.truediv, ast.Pow: operator.pow, ast.FloorDiv: operator.floordiv,
}
_FUNCS = {
    "round": round, "floor": math.floor, "ceil": math.ceil, "min": min, "max": max,
    "sqrt": math.sqrt, "log": math.log, "exp": math.exp, "abs": abs,
}
_NAMES = ("n", "m0", "m0hat")


class PopulationRule:
    """Arithmetic expression over ``n``, ``m0`` and ``m0hat``, e.g. ``"0.5*m0"``.

    Parsed once into an AST; only numbers, the three names, arithmetic and
    a few math functions are accepted.
    """

    def __init__(self, expr: str):
        self.expr = str(expr)
        try:
            tree = ast.parse(self.expr, mode="eval")
        except SyntaxError as e:
            raise ModelError(f"bad population rule {expr!r}: {e.msg}") from None
        self._tree = tree.body
        self.names = set()
        self._check(self._tree)

    def _check(self, node):
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return
        if isinstance(node, ast.Name):
            if node.id not in _NAMES:
                raise ModelError(f"population rule uses unknown name {node.id!r}")
            self.names.add(node.id)
            return
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            self._check(node.left)
            self._check(node.right)
            return
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            self._check(node.operand)
            return
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCS and not node.keywords):
            for a in node.args:
                self._check(a)
            return
        raise ModelError(f"population rule {self.expr!r}: unsupported construct {type(node).__name__}")

    def _eval(self, node, env):
        if isinstance(node, ast.Constant):
            return node.value
        if isinstance(node, ast.Name):
            v = env.get(node.id)
            if v is None:
                raise ModelError(f"population rule needs {node.id!r}")
            return v
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        return _FUNCS[node.func.id](*(self._eval(a, env) for a in node.args))

    def __call__(self, n, m0=None, m0hat=None) -> int:
        v = self._eval(self._tree, {"n": n, "m0": m0, "m0hat": m0hat})
        if not np.isfinite(v) or v < 0:
            raise ModelError(f"population rule {self.expr!r} gives {v} at n={n}")
        return int(round(v))

    def __repr__(self):
        return f"PopulationRule({self.expr!r})"


# ---------------------------------------------------------------- families


@dataclass
class NetworkFamily:
    """Indexed family of closed networks with an optional population rule."""

    generator: Callable[[int], ClosedNetwork]
    indices: tuple
    population: Optional[object] = None  # PopulationRule, str or callable(n, m0, m0hat)
    name: str = "family"
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.indices = tuple(self.indices)
        if not self.indices:
            raise ModelError("family needs at least one index")
        if isinstance(self.population, str):
            self.population = PopulationRule(self.population)

    def network(self, n) -> ClosedNetwork:
        if n not in self._cache:
            net = self.generator(n)
            if not isinstance(net, ClosedNetwork):
                raise ModelError(f"family generator returned {type(net).__name__} at index {n}")
            self._cache[n] = net
        return self._cache[n]

    def size(self, n) -> int:
        return self.network(n).n

    def population_at(self, n, m0=None, m0hat=None) -> int:
        if self.population is None:
            return self.network(n).population
        return self.population(n, m0, m0hat)

    def with_population(self, rule) -> "NetworkFamily":
        return NetworkFamily(self.generator, self.indices, rule, self.name, self._cache)


def replicate(base: ClosedNetwork, copies: int) -> ClosedNetwork:
    """``copies`` copies of ``base``; each step stays in its copy or moves to the next with equal odds.

    The routing is ``P (x) (I + C) / 2`` with ``C`` the cyclic shift of copies,
    so the invariant measure is ``pi_base / copies`` on every copy.
    """
    if copies < 1:
        raise ModelError("need at least one copy")
    P = sp.csr_matrix(base.routing)
    shift = sp.csr_matrix((np.ones(copies), (np.arange(copies), (np.arange(copies) + 1) % copies)),
                          shape=(copies, copies))
    lazy = 0.5 * (sp.identity(copies, format="csr") + shift)
    R = sp.kron(lazy, P, format="csr")
    return ClosedNetwork(list(base.curves) * copies, R, base.population * copies)


def replicate_family(base: ClosedNetwork, indices: Sequence[int], population=None,
                     name: str = "replicate") -> NetworkFamily:
    return NetworkFamily(lambda n: replicate(base, n), tuple(indices), population, name)


def balanced_family(indices: Sequence[int], mu: float = 1.0, population=None) -> NetworkFamily:
    """``n`` identical single-server queues, uniform invariant measure."""
    base = ClosedNetwork([ServiceCurve.single(mu)], np.ones((1, 1)), 0)
    return replicate_family(base, indices, population, name="balanced")


# ---------------------------------------------------------------- critical sequences


def m_of_t(network: ClosedNetwork, t: float) -> float:
    """``m_n(t lambda0_n)``."""
    if not 0 < t < 1:
        raise ModelError(f"t must lie in (0, 1), got {t}: load at or beyond saturation")
    lam0 = network.lambda0
    if not math.isfinite(lam0):
        raise UnsupportedCaseError("network has no finite-rate queue, lambda0 is infinite")
    return total_mean(network, t * lam0)


def m_hat0(network: ClosedNetwork, part: Optional[QueuePartition] = None) -> float:
    """``sum over queues outside F0 of m_k(lambda0)``."""
    part = partition(network) if part is None else part
    f0 = set(part.F0)
    keep = [k for k in range(network.n) if k not in f0]
    if not keep:
        return 0.0
    sub = _SubNetworkView(network, keep)
    return float(queue_means(sub, part.lambda0).sum())


class _SubNetworkView:
    """Duck-typed restriction of a network to some queues, for ``queue_means``."""

    def __init__(self, network, keep):
        self.curves = [network.curves[k] for k in keep]
        self.pi = network.pi[keep]
        self.n = len(keep)


@dataclass(frozen=True)
class CriticalSequence:
    u: float
    indices: tuple
    values: tuple
    h_u: float
    t_grid: tuple
    g_profile: tuple
    g_limit_class: str
    g_limit: float
    confidence: float
    base_values: tuple = ()

    def at(self, n) -> float:
        return self.values[self.indices.index(n)]


def _g_samples(network, u, t_grid):
    lam0 = network.lambda0
    base = total_mean(network, u * lam0)
    return np.array([total_mean(network, t * lam0) for t in t_grid]) / base, base


def critical_sequence(family: NetworkFamily, u: float = 0.5, t_grid=None,
                      extrapolate: bool = True, probe: Optional[Sequence] = None) -> CriticalSequence:
    """``m0_n(u) = h_u m_n(u lambda0_n)`` with ``h_u`` from the limit of ``g_u(t)`` as ``t -> 1``.

    ``g_u(t)`` is sampled at the largest index; with two or more indices it
    is extrapolated linearly in ``1 / size`` from the two largest ones.
    ``probe`` replaces those by other (typically much larger) indices of
    the same family, for families whose finite-size terms stay large on the
    evaluation indices. The
    limit is called infinite when each of the last three samples grows by
    more than 5%, and is otherwise estimated by Richardson extrapolation.
    """
    if not 0 < u < 1:
        raise ModelError(f"u must lie in (0, 1), got {u}")
    t_grid = default_t_grid() if t_grid is None else np.sort(np.asarray(t_grid, dtype=float))
    if t_grid.size < 4 or t_grid[0] <= 0 or t_grid[-1] >= 1:
        raise ModelError("t-grid needs at least four points inside (0, 1)")
    idx = sorted(family.indices if probe is None else probe, key=family.size)
    base_vals = {}
    profiles = {}
    for n in idx[-2:]:
        profiles[n], base_vals[n] = _g_samples(family.network(n), u, t_grid)
    g = profiles[idx[-1]]
    if extrapolate and len(idx) >= 2:
        n1, n2 = idx[-2], idx[-1]
        h1, h2 = 1.0 / family.size(n1), 1.0 / family.size(n2)
        if h1 != h2:
            g = (h1 * profiles[n2] - h2 * profiles[n1]) / (h1 - h2)
    steps = np.diff(g)
    if np.any(steps < -MONOTONE_TOL * np.abs(g[1:])):
        k = int(np.argmin(steps))
        raise NumericalInconsistencyError(
            f"g_u(t) decreases between t={t_grid[k]:.6g} and t={t_grid[k + 1]:.6g}: "
            f"{g[k]:.10g} -> {g[k + 1]:.10g}"
        )
    last = g[-4:]
    growth = last[1:] / last[:-1] - 1
    if np.all(growth > GROWTH_STEP):
        cls, limit, h_u, conf = G_INFINITE, math.inf, 1.0, float(growth.min())
    else:
        limit = float(2 * g[-1] - g[-2])
        prev = float(2 * g[-2] - g[-3])
        cls, h_u = G_FINITE, limit
        conf = abs(limit - prev) / abs(limit)
    values = []
    bases = []
    for n in family.indices:
        b = base_vals.get(n)
        if b is None:
            b = m_of_t(family.network(n), u)
        bases.append(b)
        values.append(h_u * b)
    return CriticalSequence(u, tuple(family.indices), tuple(values), h_u, tuple(t_grid),
                            tuple(g), cls, limit, conf, tuple(bases))


# ---------------------------------------------------------------- assumptions


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    statistic: float
    threshold: float
    witness: Optional[int] = None
    detail: str = ""


def _base_rates(network, part):
    mu = part.effective_rates.copy()
    for k in part.I:
        mu[k] = network.curves[k].mu
    return mu


def check_assumptions(network: ClosedNetwork, part: Optional[QueuePartition] = None,
                      uan_threshold: float = 0.1, A: float = 0.95, B: float = 10.0,
                      qmax: int = 10_000) -> dict:
    """Evaluate the standing assumptions on one network; report style, never raises."""
    part = partition(network, strict=False) if part is None else part
    mu = _base_rates(network, part)
    pi = network.pi
    out = {}

    w = pi / mu
    k = int(np.argmax(w))
    stat = float(w[k] / w.sum())
    out["A-uan"] = AssumptionCheck("A-uan", stat <= uan_threshold, stat, uan_threshold, k,
                                  "largest share of pi/mu")

    # service lower bounds: finite queues R(q) = mu(q)/mu with geometric mean -> 1,
    # infinite-server queues T(q) = mu(q)/mu(1) -> infinity
    q = np.arange(1, qmax + 1, dtype=float)
    bad, detail = None, []
    for kk in part.F:
        c = network.curves[kk]
        R = np.minimum(1.0, c.rate(q) / part.effective_rates[kk])
        gm = float(np.exp(np.mean(np.log(R))))
        if gm < 1 - 10.0 / math.sqrt(qmax):
            bad = kk if bad is None else bad
            detail.append(f"queue {kk}: geometric mean of R only {gm:.4g}")
    for kk in part.I:
        c = network.curves[kk]
        if c.kind != INFINITE and c.rate(qmax) / c.rate(1) < 0.5 * qmax:
            bad = kk if bad is None else bad
            detail.append(f"queue {kk}: T(q) does not grow")
    lam0 = part.lambda0
    if part.I and math.isfinite(lam0):
        loads = lam0 * pi[list(part.I)] / mu[list(part.I)]
        j = int(np.argmax(loads))
        bmax = float(loads[j])
        if bmax >= B:
            bad = part.I[j] if bad is None else bad
            detail.append(f"queue {part.I[j]}: infinite-server load {bmax:.4g} >= B={B}")
    else:
        bmax = 0.0
        if part.I:
            bad = part.I[0]
            detail.append("no finite-rate queue, lambda0 is infinite")
    out["A-service"] = AssumptionCheck("A-service", bad is None, bmax, B, bad,
                                      "; ".join(detail) or "R(q)=min(1,mu(q)/mu), T(q)=q")

    rest = [kk for kk in part.F if kk not in set(part.F0)]
    if rest:
        loads = lam0 * pi[rest] / mu[rest]
        j = int(np.argmax(loads))
        stat = float(loads[j])
        out["A-nonsat"] = AssumptionCheck("A-nonsat", stat <= A, stat, A, rest[j],
                                         "largest saturation load outside F0")
    else:
        out["A-nonsat"] = AssumptionCheck("A-nonsat", True, 0.0, A, None, "no finite queue outside F0")

    try:
        xis = [estimate_xi(network.curves[kk], index=kk).xi for kk in part.F0]
        out["A-pole"] = AssumptionCheck("A-pole", bool(part.F0), float(sum(xis)), math.nan, None,
                                       f"xi per bottleneck: {xis}")
    except UnsupportedCaseError as e:
        out["A-pole"] = AssumptionCheck("A-pole", False, math.nan, math.nan, None, str(e))
    return out


# ---------------------------------------------------------------- classification


@dataclass(frozen=True)
class IndexStats:
    index: object
    population: int
    lam: float
    rho0: float
    F0: tuple
    m0: float
    m0hat: float
    ratio: float
    xi: float
    uan: float


@dataclass(frozen=True)
class RegimeReport:
    index: object
    population: int
    lam: float
    rho0: float
    F0: tuple
    m0: float
    m0hat: float
    ratio: float
    theta: float
    xi: float
    classification: str
    theorem: str
    epsilon: Optional[float]
    assumptions: dict
    outside_hypotheses: bool
    notes: tuple
    rows: tuple
    sequence: CriticalSequence


def _index_stats(family, n, m0):
    net = family.network(n)
    part0 = partition(net)
    mh = m_hat0(net, part0)
    m = family.population_at(n, m0, mh)
    sol = solve_lambda(net.with_population(m))
    xi = float(sum(estimate_xi(net.curves[k], index=k).xi for k in part0.F0))
    mu = _base_rates(net, part0)
    w = net.pi / mu
    return IndexStats(n, m, sol.lam, sol.rho0, part0.F0, m0, mh, m / m0 if m0 > 0 else math.inf,
                      xi, float(w.max() / w.sum())), sol


def classify(family: NetworkFamily, index=None, u: float = 0.5, seq: Optional[CriticalSequence] = None,
             t_grid=None, A: float = 0.95, B: float = 10.0, uan_threshold: float = 0.1) -> RegimeReport:
    """Regime of the family at ``index`` (default the largest), with the applicable error size."""
    seq = critical_sequence(family, u, t_grid) if seq is None else seq
    index = max(family.indices, key=family.size) if index is None else index
    rows, sols = [], {}
    for n, m0 in zip(seq.indices, seq.values):
        row, sol = _index_stats(family, n, m0)
        rows.append(row)
        sols[n] = sol
    cur = rows[seq.indices.index(index)]
    sol = sols[index]
    net = sol.network
    m = cur.population
    notes = []

    assumptions = check_assumptions(net, None, uan_threshold, A, B)
    uans = [r.uan for r in sorted(rows, key=lambda r: family.size(r.index))]
    trend_ok = all(b <= a * (1 + 1e-9) for a, b in zip(uans, uans[1:]))
    ua = assumptions["A-uan"]
    assumptions["A-uan"] = AssumptionCheck(ua.name, ua.passed and trend_ok, ua.statistic, ua.threshold,
                                           ua.witness, ua.detail + ("" if trend_ok else "; not decreasing along the family"))

    ordered = sorted(rows, key=lambda r: family.size(r.index))
    xis = [r.xi for r in ordered]
    xi_flag = cur.xi >= XI_FLAG and len(xis) >= 2 and xis[-1] > xis[-2]

    mh = cur.m0hat
    theta = math.nan
    classification, theorem, eps = None, "", None
    if mh > 0 and m > 0:
        theta = abs(m / mh - 1)
        if m < mh and theta * theta * m >= THETA_THRESHOLD and not xi_flag:
            classification, theorem = NON_SATURATED, "strong-critical, below"
            eps = 1.0 / m + 1.0 / (m * m * theta ** 4)
            notes.append(f"bottleneck-queue quantities carry error {1.0 / (theta * theta * m):.4g}")

    strong_above = mh > 0 and m > mh and (m / mh - 1) * mh >= THETA_THRESHOLD
    if classification is None and strong_above:
        theta = m / mh - 1
        if xi_flag:
            classification, theorem = SATURATED_NORMAL, "growing xi"
            eps = 1.0 / ((1 - sol.rho0) * m)
        else:
            classification, theorem = SATURATED_GAMMA, "strong-critical, above"
            eps = (1.0 / (theta * theta * mh) + 1.0 / (theta * mh)
                   + (1.0 / math.sqrt(mh)) * (1.0 / (mh * theta * theta)) ** ((cur.xi - 1) / 2))

    if classification is None:
        ratios = [r.ratio for r in ordered]
        if seq.g_limit_class == G_FINITE:
            saturated = cur.ratio > 1
        else:
            saturated = (len(ratios) >= 2 and all(b > a * (1 + GROWTH_STEP) for a, b in zip(ratios, ratios[1:]))
                         and ratios[-1] >= 2 * ratios[0])
        if not saturated:
            classification, theorem = NON_SATURATED, "weak-critical, below"
            eps = 1.0 / m if m > 0 else 0.0
            if mh > 0 and m > 0:
                notes.append("near-critical, no theorem applies to the refined error")
        elif xi_flag:
            classification, theorem = SATURATED_NORMAL, "growing xi"
            eps = 1.0 / ((1 - sol.rho0) * m)
        else:
            classification, theorem = SATURATED_UNBOUNDED, "weak-critical, above"
            notes.append("near-critical, no theorem applies to error sizes; bottleneck means unbounded")

    if classification == SATURATED_NORMAL:
        for k in cur.F0:
            b4 = float(sol.moments.beta4[k])
            bound = 10.0 * sol.rho0 / (1 - sol.rho0) ** 4
            if b4 > bound:
                notes.append(f"fourth-moment uniformity fails at queue {k}")
                break
    outside = not all(a.passed for a in assumptions.values())
    if outside:
        failed = [k for k, a in assumptions.items() if not a.passed]
        notes.append(f"outside theorem hypotheses: {', '.join(failed)}")
    return RegimeReport(index, m, sol.lam, sol.rho0, cur.F0, cur.m0, mh, cur.ratio, theta, cur.xi,
                        classification, theorem, eps, assumptions, outside, tuple(notes), tuple(rows), seq)


# ---------------------------------------------------------------- infinite-server splitting


def split_saturated_infinite_server(network: ClosedNetwork, lam: Optional[float] = None,
                                    cap: float = 1.0, return_map: bool = False):
    """Replace each infinite-server queue with open mean above ``cap`` by equal copies.

    A queue with mean ``a`` becomes ``ceil(a / cap)`` infinite-server queues
    with the same rate; traffic into it is split evenly, so each copy has
    mean ``a / c`` and the law of the total population is unchanged.
    """
    if cap <= 0:
        raise ModelError("cap must be positive")
    if lam is None:
        lam = solve_lambda(network).lam
    means = lam * network.pi
    counts = []
    for k, c in enumerate(network.curves):
        if c.kind == INFINITE and means[k] / c.mu > cap:
            counts.append(int(math.ceil(means[k] / c.mu / cap - 1e-12)))
        else:
            counts.append(1)
    if all(c == 1 for c in counts):
        return (network, [[k] for k in range(network.n)]) if return_map else network
    groups, pos = [], 0
    for c in counts:
        groups.append(list(range(pos, pos + c)))
        pos += c
    P = sp.coo_matrix(network.routing)
    rows, cols, vals = [], [], []
    for i, j, v in zip(P.row, P.col, P.data):
        cj = counts[j]
        for src in groups[i]:
            for dst in groups[j]:
                rows.append(src)
                cols.append(dst)
                vals.append(v / cj)
    R = sp.csr_matrix((vals, (rows, cols)), shape=(pos, pos))
    curves = [network.curves[k] for k in range(network.n) for _ in range(counts[k])]
    labels = None
    if network.labels is not None:
        labels = [network.labels[k] if counts[k] == 1 else f"{network.labels[k]}.{i}"
                  for k in range(network.n) for i in range(counts[k])]
    out = ClosedNetwork(curves, R, network.population, labels)
    return (out, groups) if return_map else out


# ---------------------------------------------------------------- family files


def family_from_dict(d: dict) -> NetworkFamily:
    """Build a family from its description.

    ``{"rule": "replicate", "base": <network>, "indices": [...]}``,
    ``{"rule": "tandem", "s": "n", "ell": "n", "f": 0.5, "indices": [...]}`` or
    ``{"rule": "jackson", "measure": [[r, w], ...], "indices": [...]}``; an
    optional ``"population"`` expression over ``n``, ``m0`` and ``m0hat``.
    """
    from . import apps
    from .model import network_from_dict

    rule = d.get("rule")
    indices = d.get("indices")
    if not indices:
        raise ModelError("family description needs a nonempty 'indices' list")
    pop = d.get("population")
    if rule == "replicate":
        if "base" not in d:
            raise ModelError("replicate family needs a 'base' network")
        return replicate_family(network_from_dict(d["base"]), indices, pop)
    if rule == "tandem":
        s_rule, l_rule = PopulationRule(d.get("s", "n")), PopulationRule(d.get("ell", "n"))
        pairs = {n: (s_rule(n), l_rule(n)) for n in indices}
        return apps.tandem_family(float(d.get("f", 0.5)), pairs, pop)
    if rule == "jackson":
        if "measure" not in d:
            raise ModelError("jackson family needs a 'measure' table")
        return apps.jackson_family(d["measure"], indices, pop)
    raise ModelError(f"unknown family rule {rule!r}; expected replicate, tandem or jackson")
