import csv
import io
import json

import numpy as np
import pytest
from scipy.stats import binom

from instances import bottleneck_cycle, cycle
from pfnet.cli import EXIT_BUDGET, EXIT_MODEL, EXIT_OK, EXIT_USAGE, run
from pfnet.model import ServiceCurve, load_network, network_to_dict


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def models(tmp_path):
    two_mm1 = network_to_dict(cycle([ServiceCurve.single(1.0)] * 2, 1))
    two_inf = network_to_dict(cycle([ServiceCurve.infinite(1.0)] * 2, 3))
    bottleneck = network_to_dict(bottleneck_cycle(1))
    return {
        "two_mm1": _write(tmp_path / "two_mm1.json", two_mm1),
        "two_inf": _write(tmp_path / "two_inf.json", two_inf),
        "bottleneck50": _write(tmp_path / "bottleneck50.json", bottleneck),
    }


def _run(argv):
    buf = io.StringIO()
    code = run(argv, stdout=buf)
    return code, buf.getvalue()


def test_lambda_prints_two_thirds(models):
    code, out = _run(["lambda", "--model", models["two_mm1"], "--population", "1"])
    assert code == EXIT_OK
    assert "λ_n = 0.666667" in out


def test_exact_binomial_table(models):
    code, out = _run(["exact", "--model", models["two_inf"], "--population", "3", "--format", "csv"])
    assert code == EXIT_OK
    rows = list(csv.DictReader(io.StringIO(out)))
    p = [float(r["probability"]) for r in rows if r["queue"] == "0"]
    assert np.allclose(p, binom.pmf(range(4), 3, 0.5), atol=1e-12)


def test_compare_gamma_csv(models, tmp_path):
    out_dir = tmp_path / "res"
    code, out = _run(["compare", "--model", models["bottleneck50"], "--population", "400",
                      "--regime", "gamma", "--format", "csv", "--out", str(out_dir)])
    assert code == EXIT_OK
    header = out.splitlines()[0]
    assert header == "x,exact,gamma_llt,budget"
    assert (out_dir / "report.csv").read_text() == out
    rep = json.loads((out_dir / "report.json").read_text())
    assert rep["status"] == "ok" and rep["results"]["regime"] == "gamma"
    assert len(rep["inputs_sha256"]) == 64
    assert rep["command"][0] == "compare"


def test_compare_exit_code_when_budget_exceeded(models, monkeypatch):
    from pfnet import asymptotics, cli

    real = asymptotics.normal_llt

    def tight(sol, x, r=1.0):
        res = real(sol, x, r)
        return type(res)(res.value, res.leading_term, res.correction_term,
                         {k: v * 1e-6 for k, v in res.error_budget.items()}, res.regime, res.scale, res.notes)

    monkeypatch.setattr(cli.asy, "normal_llt", tight)
    code, _ = _run(["compare", "--model", models["bottleneck50"], "--regime", "normal", "--format", "json"])
    assert code == EXIT_BUDGET


def test_csv_twelve_digits(models):
    _, out = _run(["lambda", "--model", models["two_mm1"], "--format", "csv"])
    row = [r for r in csv.reader(io.StringIO(out))][1:]
    assert row[0][1] == "0.333333333333"


def test_json_output(models):
    code, out = _run(["approx", "--model", models["bottleneck50"], "--format", "json"])
    rep = json.loads(out)
    assert code == EXIT_OK
    assert rep["results"]["regime"] == "gamma"
    assert set(rep["assumptions"]) == {"A-uan", "A-service", "A-nonsat", "A-pole"}


def test_approx_auto_normal(tmp_path):
    path = _write(tmp_path / "bal.json", network_to_dict(cycle([ServiceCurve.single(1.0)] * 30, 30)))
    code, out = _run(["approx", "--model", path, "--format", "json"])
    assert code == EXIT_OK
    rep = json.loads(out)
    assert rep["results"]["regime"] == "normal"


def test_dump_model_round_trip(models, tmp_path):
    dumped = tmp_path / "dumped.json"
    code, _ = _run(["lambda", "--model", models["bottleneck50"], "--dump-model", str(dumped)])
    assert code == EXIT_OK
    a, b = load_network(models["bottleneck50"]), load_network(dumped)
    assert a == b
    assert network_to_dict(a) == network_to_dict(b)


def test_usage_errors(models):
    assert _run(["frobnicate"])[0] == EXIT_USAGE
    assert _run(["lambda", "--model", models["two_mm1"], "--bogus"])[0] == EXIT_USAGE
    assert _run(["approx", "--regime", "cauchy"])[0] == EXIT_USAGE


def test_model_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"population": 1, "routing": [[0.5, 0.4], [1, 0]],
                               "queues": [{"kind": "single", "mu": 1}] * 2}))
    assert _run(["exact", "--model", str(bad)])[0] == EXIT_MODEL
    assert "row" in capsys.readouterr().err
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert _run(["exact", "--model", str(broken)])[0] == EXIT_MODEL
    assert _run(["exact", "--model", str(tmp_path / "missing.json")])[0] == EXIT_MODEL
    assert _run(["exact"])[0] == EXIT_MODEL


def test_scaling_command(tmp_path):
    fam = {"family": {"rule": "tandem", "s": "n", "ell": "n", "f": 0.5, "indices": [5, 10, 20]}}
    path = _write(tmp_path / "fam.json", fam)
    code, out = _run(["scaling", "--model", path, "--u", "0.5", "--format", "json"])
    assert code == EXIT_OK
    rep = json.loads(out)
    rows = rep["tables"]["critical_sequence"]["rows"]
    assert [r[0] for r in rows] == [5, 10, 20]
    per_s = [r[2] / r[0] for r in rows]
    assert max(per_s) / min(per_s) < 1.1


def test_scaling_with_population_rule(tmp_path):
    fam = {"family": {"rule": "jackson", "measure": [[0.9, 1.0]], "indices": [10, 20, 40, 80],
                      "population": "round(2 * m0)"}, "probe": [100001, 200001]}
    path = _write(tmp_path / "fam.json", fam)
    code, out = _run(["scaling", "--model", path, "--u", "0.95", "--format", "json"])
    rep = json.loads(out)
    assert code == EXIT_OK
    assert rep["results"]["g_limit_class"] == "finite-1"
    assert rep["results"]["classification"] == "SaturatedGamma"


def test_app_presets(tmp_path):
    code, out = _run(["app", "vehicle", "--population", "6", "--format", "json"])
    rep = json.loads(out)
    assert code == EXIT_OK
    assert rep["results"]["recommended_fleet"] == 12
    assert abs(rep["results"]["loss_exact"] - rep["results"]["loss_asymptotic"]) < 0.05
    code, out = _run(["app", "jackson", "--format", "json"])
    assert code == EXIT_OK and abs(json.loads(out)["results"]["lambda_cr"] - 1) < 0.02
    path = _write(tmp_path / "t.json", {"tandem": {"f": 0.5, "pairs": [[5, 5], [10, 10]]}})
    code, out = _run(["app", "tandem", "--model", path, "--format", "json"])
    assert code == EXIT_OK
    assert len(json.loads(out)["tables"]["tandem"]["rows"]) == 2


def test_deterministic_reports(models, tmp_path):
    argv = ["compare", "--model", models["bottleneck50"], "--format", "json"]
    assert _run(argv)[1] == _run(argv)[1]
