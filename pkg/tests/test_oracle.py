import math

import numpy as np
import pytest
from scipy.stats import binom, nbinom

from instances import cycle, random_suite
from pfnet.errors import ModelError, PrecisionWarning
from pfnet.model import ClosedNetwork, ServiceCurve
from pfnet.oracle import (
    enumerate_states, exact_marginal, exact_mean, exact_sn_pmf, joint_probability, log_weights,
    normalizing_constants, solve_exact,
)


def test_two_single_servers_z():
    net = cycle([ServiceCurve.single(1.0)] * 2, 2)
    Z = np.exp(normalizing_constants(net))
    assert np.allclose(Z, [1.0, 1.0, 0.75])


def test_single_queue_unit_rates():
    net = ClosedNetwork([ServiceCurve.single(1.0)], [[1.0]], 8)
    assert np.allclose(np.exp(normalizing_constants(net)), 1.0)


def test_infinite_server_pair_z():
    net = cycle([ServiceCurve.infinite(1.0)] * 2, 10)
    Z = np.exp(normalizing_constants(net))
    assert np.allclose(Z, [1 / math.factorial(j) for j in range(11)], rtol=1e-12)


def test_symmetric_mm1_marginal():
    assert np.allclose(exact_marginal(cycle([ServiceCurve.single(1.0)] * 2, 1), 0), [0.5, 0.5])


def test_infinite_server_binomial():
    p = exact_marginal(cycle([ServiceCurve.infinite(1.0)] * 2, 3), 0)
    assert np.allclose(p, binom.pmf(np.arange(4), 3, 0.5), atol=1e-14)


def test_zero_population():
    net = cycle([ServiceCurve.single(1.0), ServiceCurve.infinite(2.0)], 0)
    ex = solve_exact(net)
    assert np.allclose(ex.marginals[:, 0], 1.0)
    assert exact_mean(net, 1) == 0.0


def test_negative_population():
    with pytest.raises(ModelError):
        normalizing_constants(cycle([ServiceCurve.single(1.0)] * 2), -1)


@pytest.mark.parametrize("net", random_suite(12, seed=3, m_max=5), ids=lambda n: f"n{n.n}m{n.population}")
def test_marginals_match_enumeration(net):
    ex = solve_exact(net)
    m = net.population
    marg = np.zeros((net.n, m + 1))
    for s in enumerate_states(net.n, m):
        p = joint_probability(net, s, ex.log_Z[-1])
        for k, q in enumerate(s):
            marg[k, q] += p
    assert np.allclose(marg, ex.marginals, atol=1e-12)
    assert np.isclose(marg[0].sum(), 1.0)


def test_joint_state_validation():
    net = cycle([ServiceCurve.single(1.0)] * 2, 2)
    with pytest.raises(ModelError):
        joint_probability(net, [1, -1])
    with pytest.raises(ModelError):
        joint_probability(net, [1, 1, 0])


def test_large_population_no_overflow():
    net = cycle([ServiceCurve.single(1.0), ServiceCurve.single(0.5), ServiceCurve.infinite(0.01)], 2000)
    ex = solve_exact(net)
    assert np.all(np.isfinite(ex.log_Z))
    assert np.allclose(ex.marginals.sum(axis=1), 1.0)


def test_log_weights_definition():
    net = cycle([ServiceCurve.multi(1.0, 2), ServiceCurve.single(2.0)], 3)
    w = np.exp(log_weights(net, 0, 3))
    pi = net.pi[0]
    assert np.allclose(w, [1, pi, pi ** 2 / 2, pi ** 3 / 4])


def test_sn_identity_case():
    p = np.array([0.2, 0.5, 0.3])
    assert np.allclose(exact_sn_pmf([p]), p)


def test_sn_negative_binomial():
    rho = 0.4
    x = np.arange(400)
    g = (1 - rho) * rho ** x
    out = exact_sn_pmf([g, g], 30)
    assert np.allclose(out, nbinom.pmf(np.arange(31), 2, 1 - rho), atol=1e-15)
    assert np.allclose(out, (np.arange(31) + 1) * (1 - rho) ** 2 * rho ** np.arange(31))


def test_sn_truncation_warning():
    g = 0.5 ** (np.arange(60) + 1)
    with pytest.warns(PrecisionWarning):
        exact_sn_pmf([g, g], 5)
