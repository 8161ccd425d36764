import os
import subprocess
import sys

import numpy as np
import pytest

from pfnet import _pykernels, kernels

try:
    from pfnet import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = [pytest.param(_pykernels, id="python"),
            pytest.param(_ckernels, id="cython",
                         marks=pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built"))]


def _log_ref(a, b, out_len):
    ea, eb = np.exp(a), np.exp(b)
    full = np.convolve(ea, eb)[:out_len]
    out = np.full(out_len, -np.inf)
    with np.errstate(divide="ignore"):
        out[:len(full)] = np.log(full)
    return out


@pytest.mark.parametrize("impl", BACKENDS)
def test_log_convolve(impl):
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=30), rng.normal(size=17)
    a[[3, 7]] = -np.inf
    for out_len in (1, 20, 46, 60):
        got = impl.log_convolve(a, b, out_len)
        assert np.allclose(got, _log_ref(a, b, out_len), rtol=1e-13, atol=0, equal_nan=False)
        assert np.array_equal(np.isinf(got), np.isinf(_log_ref(a, b, out_len)))


@pytest.mark.parametrize("impl", BACKENDS)
def test_log_convolve_wide_range(impl):
    # terms differing by e^1400 keep relative precision in every output slot
    a = np.array([0.0, -700.0, -1400.0])
    b = np.array([0.0, 700.0])
    got = impl.log_convolve(a, b, 4)
    assert np.allclose(got, [0.0, 700.0, 0.0, -700.0], rtol=1e-14)
    # the small partner of a large term is still resolved
    assert impl.log_convolve([0.0, -30.0], [0.0, -5.0], 3)[1] == pytest.approx(np.log(np.exp(-5.0) + np.exp(-30.0)), rel=1e-15)


@pytest.mark.parametrize("impl", BACKENDS)
def test_log_convolve_empty(impl):
    assert np.all(np.isneginf(impl.log_convolve(np.full(3, -np.inf), np.zeros(3), 5)))


@pytest.mark.parametrize("impl", BACKENDS)
def test_convolve_truncated(impl):
    rng = np.random.default_rng(2)
    p, q = rng.random(50), rng.random(80)
    for out_len in (10, 129, 200):
        ref = np.zeros(out_len)
        full = np.convolve(p, q)[:out_len]
        ref[:len(full)] = full
        assert np.allclose(impl.convolve_truncated(p, q, out_len), ref, rtol=1e-13)


@pytest.mark.parametrize("impl", BACKENDS)
def test_char_sum(impl):
    rng = np.random.default_rng(3)
    p = rng.dirichlet(np.ones(300))
    th = np.linspace(-np.pi, np.pi, 1001)
    ref = np.exp(1j * np.outer(th, np.arange(300))) @ p
    assert np.allclose(impl.char_sum(p, th), ref, atol=1e-13)


@pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")
def test_backends_agree_on_random_inputs():
    rng = np.random.default_rng(4)
    for _ in range(20):
        a, b = rng.normal(0, 50, rng.integers(1, 300)), rng.normal(0, 50, rng.integers(1, 300))
        n = int(rng.integers(1, 600))
        assert np.allclose(_ckernels.log_convolve(a, b, n), _pykernels.log_convolve(a, b, n), rtol=1e-12)
        p = rng.random(int(rng.integers(1, 400)))
        th = rng.uniform(-np.pi, np.pi, 50)
        assert np.allclose(_ckernels.char_sum(p, th), _pykernels.char_sum(p, th), atol=1e-12 * p.sum())


def test_selected_backend():
    assert kernels.BACKEND == ("cython" if _ckernels is not None and not os.environ.get("PFNET_PURE_PYTHON") else "python")


def test_pure_python_switch_gives_same_numbers():
    code = (
        "import numpy as np; from pfnet import kernels; from pfnet.oracle import solve_exact;"
        "from pfnet.model import ClosedNetwork, ServiceCurve as S;"
        "net = ClosedNetwork([S.single(1.0), S.multi(0.5, 3), S.infinite(0.2)], np.full((3, 3), 1/3), 25);"
        "print(kernels.BACKEND); print(repr(solve_exact(net).means.tolist()))"
    )
    out = {}
    for flag in ("1", ""):
        env = dict(os.environ, PFNET_PURE_PYTHON=flag)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        backend, means = res.stdout.split("\n")[:2]
        out[backend] = np.array(eval(means))
    assert "python" in out
    for v in out.values():
        assert np.allclose(v, out["python"], rtol=1e-12)
