import json

import numpy as np
import pytest
import scipy.sparse as sp

from instances import cycle
from pfnet import apps
from pfnet.errors import ErgodicityError, ModelError, PopulationError, StructureError
from pfnet.model import (
    ClosedNetwork, ServiceCurve, dump_network, effective_rate, invariant_measure, load_network,
    network_from_dict, network_to_dict, partition,
)


def test_invariant_measure_swap():
    assert np.allclose(invariant_measure([[0, 1], [1, 0]]), [0.5, 0.5])


def test_invariant_measure_four_cycle():
    P = np.roll(np.eye(4), 1, axis=1)
    assert np.allclose(invariant_measure(P), 0.25)


def test_invariant_measure_tandem_subnet():
    net = apps.tandem_network(1, 3, 0.5)
    assert np.allclose(net.pi, [4 / 7, 2 / 7, 1 / 7], atol=1e-12)


def test_invariant_measure_sparse_large():
    n = 5000
    P = sp.csr_matrix((np.ones(n), (np.arange(n), (np.arange(n) + 1) % n)), shape=(n, n))
    pi = invariant_measure(P)
    assert np.allclose(pi, 1.0 / n)


def test_invariant_measure_rejects_nonstochastic():
    with pytest.raises(ModelError):
        invariant_measure([[0.5, 0.4], [1.0, 0.0]])


def test_invariant_measure_rejects_reducible():
    with pytest.raises(StructureError):
        invariant_measure([[1.0, 0.0], [0.0, 1.0]])


def test_effective_rates():
    assert effective_rate(ServiceCurve.single(2.0)) == 2.0
    assert effective_rate(ServiceCurve.multi(1.0, 3)) == pytest.approx(3.0)
    assert effective_rate(ServiceCurve.infinite(1.0)) == np.inf
    assert effective_rate(ServiceCurve.tabulated([1.0, 2.0, 4.0])) == 4.0
    assert effective_rate(ServiceCurve.algebraic(1.5, 2.0)) == pytest.approx(1.5)


def test_multi_rate_profile():
    assert np.allclose(ServiceCurve.multi(1.0, 3).rate(np.arange(1, 6)), [1, 2, 3, 3, 3])


@pytest.mark.parametrize("bad", [
    {"kind": "warp", "mu": 1.0},
    {"kind": "single", "mu": -1.0},
    {"kind": "multi", "mu": 1.0},
    {"kind": "multi", "mu": 1.0, "c": 0},
    {"kind": "algebraic", "mu": 1.0, "xi": 1.0},
    {"kind": "table", "table": []},
])
def test_bad_curves(bad):
    with pytest.raises(ModelError):
        ServiceCurve.from_dict(bad)


def test_partition_symmetric_pair():
    net = cycle([ServiceCurve.single(1.0)] * 2)
    part = partition(net)
    assert part.F == (0, 1) and part.F0 == (0, 1)
    assert part.lambda0 == pytest.approx(2.0)


def test_partition_mixed_pair():
    net = cycle([ServiceCurve.single(1.0), ServiceCurve.infinite(1.0)])
    part = partition(net)
    assert part.F == (0,) and part.I == (1,) and part.F0 == (0,)
    assert part.lambda0 == pytest.approx(2.0)


def test_partition_vehicle_stations_and_edges():
    v = apps.symmetric_vehicle(3)
    part = partition(v.network)
    assert part.F == (0, 1, 2)
    assert part.I == tuple(range(3, 12))


def test_partition_ties():
    net = cycle([ServiceCurve.single(1.0), ServiceCurve.single(1.0 + 1e-12), ServiceCurve.single(2.0)])
    assert partition(net).F0 == (0, 1)


def test_partition_rejects_overload():
    net = cycle([ServiceCurve.single(1.0)] * 2)
    with pytest.raises(ErgodicityError):
        partition(net, lam=2.0)


def test_population_validation():
    with pytest.raises(PopulationError):
        cycle([ServiceCurve.single(1.0)], -1)
    with pytest.raises(ModelError):
        ClosedNetwork([ServiceCurve.single(1.0)], np.ones((2, 2)) / 2)


def test_round_trip(tmp_path):
    net = ClosedNetwork(
        [ServiceCurve.single(1.0), ServiceCurve.multi(0.5, 3), ServiceCurve.infinite(2.0),
         ServiceCurve.algebraic(1.0, 2.5), ServiceCurve.tabulated([0.5, 1.0, 1.5])],
        np.full((5, 5), 0.2), 7, labels=list("abcde"))
    path = tmp_path / "net.json"
    dump_network(net, path)
    back = load_network(path)
    assert back == net
    assert network_to_dict(back) == network_to_dict(net)
    assert json.loads(path.read_text())["n"] == 5


def test_dict_n_mismatch():
    d = network_to_dict(cycle([ServiceCurve.single(1.0)] * 2, 1))
    d["n"] = 3
    with pytest.raises(ModelError):
        network_from_dict(d)


def test_scaled_network_keeps_structure():
    net = cycle([ServiceCurve.single(1.0), ServiceCurve.infinite(2.0)], 3)
    s = net.scaled(4.0)
    assert s.lambda0 == pytest.approx(4 * net.lambda0)
    assert np.allclose(s.pi, net.pi)
