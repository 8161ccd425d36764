import math

import numpy as np
import pytest
from scipy.stats import poisson

from instances import cycle
from pfnet import apps, scaling
from pfnet.errors import ModelError, NumericalInconsistencyError
from pfnet.model import ServiceCurve, network_to_dict
from pfnet.oracle import exact_sn_pmf, solve_exact
from pfnet.scaling import (
    G_FINITE, G_INFINITE, NON_SATURATED, SATURATED_GAMMA, SATURATED_NORMAL, NetworkFamily, PopulationRule,
    balanced_family, check_assumptions, classify, critical_sequence, default_t_grid, family_from_dict,
    m_hat0, m_of_t, replicate, split_saturated_infinite_server,
)
from pfnet.surrogate import solve_lambda


def test_t_grid():
    t = default_t_grid()
    assert len(t) == 10 and t[0] == 1 - 2 ** -3 and t[-1] == 1 - 2 ** -12


def test_m_of_t_limits():
    net = cycle([ServiceCurve.single(1.0)] * 4)
    assert m_of_t(net, 1e-9) == pytest.approx(0.0, abs=1e-8)
    assert m_of_t(net, 0.5) == pytest.approx(4.0)
    with pytest.raises(ModelError):
        m_of_t(net, 1.0)


def test_m_of_t_tandem_limit():
    f, t = 0.5, 0.6
    net = apps.tandem_network(20, 30, f)
    assert m_of_t(net, t) / 20 == pytest.approx(apps.L_f(t, f), rel=1e-6)


def test_replicate_measure():
    base = cycle([ServiceCurve.single(1.0), ServiceCurve.infinite(2.0)])
    net = replicate(base, 5)
    assert net.n == 10
    assert np.allclose(net.pi, np.tile(base.pi, 5) / 5)


def test_population_rule():
    rule = PopulationRule("2*m0 + floor(sqrt(n))")
    assert rule(16, m0=3.2) == 10
    assert PopulationRule("max(n, 3)")(1) == 3
    for bad in ("__import__('os')", "n.real", "m0 if n else 1", "lambda: 1", "q + 1"):
        with pytest.raises(ModelError):
            PopulationRule(bad)
    with pytest.raises(ModelError):
        PopulationRule("m0")(4)


def test_balanced_critical_sequence():
    fam = balanced_family([10, 20, 40])
    for u in (0.5, 0.8):
        seq = critical_sequence(fam, u)
        assert seq.g_limit_class == G_INFINITE and seq.h_u == 1.0
        assert np.allclose(seq.values, [n * u / (1 - u) for n in fam.indices])


def test_jackson_critical_sequence():
    table = apps.discretize_density(lambda r: 2 * (1 - r), 100)
    fam = apps.jackson_family(table, [1000, 2000])
    seq = critical_sequence(fam, 0.5, probe=(100001, 200001))
    assert seq.g_limit_class == G_FINITE
    lc = apps.lambda_cr(table)
    assert seq.at(2000) / 2000 == pytest.approx(lc, rel=0.05)


def test_tandem_critical_sequence_linear_in_s():
    pairs = {1: (4, 8), 2: (8, 8), 3: (16, 8)}
    seq = critical_sequence(apps.tandem_family(0.5, pairs), 0.5, extrapolate=False)
    per_s = np.array(seq.values) / [p[0] for p in pairs.values()]
    assert np.ptp(per_s) < 1e-9 * per_s.max()


def test_critical_sequence_rejects_nonmonotone(monkeypatch):
    fam = balanced_family([4, 8])
    real = scaling.total_mean

    def bumpy(net, lam):
        v = real(net, lam)
        return v * (0.3 if lam > 0.99 * net.lambda0 else 1.0)

    monkeypatch.setattr(scaling, "total_mean", bumpy)
    with pytest.raises(NumericalInconsistencyError):
        critical_sequence(fam, 0.5)


def test_critical_sequence_input_checks():
    fam = balanced_family([4])
    with pytest.raises(ModelError):
        critical_sequence(fam, 1.0)
    with pytest.raises(ModelError):
        critical_sequence(fam, 0.5, t_grid=[0.5, 0.9])


def test_classify_balanced_below():
    fam = balanced_family([20, 40, 80], population="round(n / 2)")
    rep = classify(fam)
    assert rep.classification == NON_SATURATED
    assert rep.population == 40
    means = [solve_exact(fam.network(n).with_population(n // 2)).means.max() for n in fam.indices]
    assert max(means) < 1.0


def test_classify_fixed_bottleneck_above():
    def gen(n):
        return cycle([ServiceCurve.single(1.0)] + [ServiceCurve.single(2.0)] * (n - 1))

    fam = NetworkFamily(gen, (10, 20, 40), "2 * m0hat")
    rep = classify(fam)
    assert rep.classification == SATURATED_GAMMA
    assert rep.m0hat == pytest.approx(39.0)
    sol = solve_lambda(fam.network(40).with_population(rep.population))
    ex = solve_exact(sol.network)
    assert ex.mean(0) == pytest.approx(sol.alpha, rel=0.1)
    assert rep.epsilon == pytest.approx(2 / 39 + 1 / math.sqrt(39))


def test_classify_growing_xi():
    base = cycle([ServiceCurve.single(1.0), ServiceCurve.single(2.0)])
    fam = scaling.replicate_family(base, [20, 40, 80], "4 * m0hat")
    rep = classify(fam)
    assert rep.xi == 80
    assert rep.classification == SATURATED_NORMAL
    assert rep.epsilon == pytest.approx(1 / ((1 - rep.rho0) * rep.population))


def test_assumptions_balanced():
    for n in (10, 40):
        chk = check_assumptions(balanced_family([n]).network(n))
        assert chk["A-uan"].statistic == pytest.approx(1 / n)
        assert chk["A-uan"].passed
        assert chk["A-nonsat"].passed and chk["A-service"].passed


def test_assumptions_vehicle_service():
    chk = check_assumptions(apps.symmetric_vehicle(3).network)
    assert chk["A-service"].passed
    assert "T(q)=q" in chk["A-service"].detail


def test_assumptions_nonsat_witness():
    net = cycle([ServiceCurve.single(1.0), ServiceCurve.single(1 / 0.999), ServiceCurve.single(3.0)])
    chk = check_assumptions(net)
    assert not chk["A-nonsat"].passed
    assert chk["A-nonsat"].witness == 1
    assert chk["A-nonsat"].statistic == pytest.approx(0.999)


def test_split_poisson_five():
    net = cycle([ServiceCurve.single(1.0), ServiceCurve.infinite(1.0)], 0)
    lam = 10.0  # pi uniform: the infinite-server queue has mean 5
    split, groups = split_saturated_infinite_server(net, lam, cap=1.0, return_map=True)
    assert groups == [[0], [1, 2, 3, 4, 5]]
    lam_s = lam * net.pi[0] / split.pi[0]
    means = lam_s * split.pi[1:] / 1.0
    assert np.allclose(means, 1.0)
    x = np.arange(40)
    total = exact_sn_pmf([poisson.pmf(x, 1.0)] * 5, 39, warn=False)
    assert np.allclose(total, poisson.pmf(x, 5.0), atol=1e-12)


def test_split_noop():
    net = cycle([ServiceCurve.single(1.0), ServiceCurve.infinite(10.0)], 3)
    assert split_saturated_infinite_server(net) is net


def test_split_vehicle_heavy_edges():
    v = apps.symmetric_vehicle(3, travel_rate=0.02, fleet=20)
    net = v.network
    split, groups = split_saturated_infinite_server(net, return_map=True)
    assert split.labels[3].startswith("edge0-0.")
    ex, exs = solve_exact(net), solve_exact(split)
    for k in range(3):
        assert np.allclose(ex.marginal(k), exs.marginal(groups[k][0]), atol=1e-10)


def test_m_hat0_simple():
    net = cycle([ServiceCurve.single(1.0), ServiceCurve.single(2.0), ServiceCurve.infinite(3.0)])
    # lambda0 = 3; loads 1, 1/2 and 1/3
    assert m_hat0(net) == pytest.approx(1.0 + 1 / 3)


def test_family_from_dict():
    base = network_to_dict(cycle([ServiceCurve.single(1.0)]))
    fam = family_from_dict({"rule": "replicate", "base": base, "indices": [3, 6], "population": "n"})
    assert fam.size(6) == 6 and fam.population_at(6) == 6
    fam = family_from_dict({"rule": "tandem", "s": "n", "ell": "2*n", "f": 0.5, "indices": [2]})
    assert fam.size(2) == 8
    fam = family_from_dict({"rule": "jackson", "measure": [[0.5, 1.0]], "indices": [10]})
    assert fam.size(10) == 10
    with pytest.raises(ModelError):
        family_from_dict({"rule": "nope", "indices": [1]})
    with pytest.raises(ModelError):
        family_from_dict({"rule": "replicate", "indices": []})
