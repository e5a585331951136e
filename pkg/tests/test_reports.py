import json

import numpy as np
import pytest

from msgamlss import hmm, reports
from msgamlss.cli import main
from msgamlss.data import write_dataset
from msgamlss.simulate import simulate_chain


@pytest.fixture(scope="module")
def price_like():
    """Two persistent regimes with a positive covariate effect in both."""
    rng = np.random.default_rng(5)
    T = 400
    s = simulate_chain([[0.98, 0.02], [0.02, 0.98]], [0.5, 0.5], T, seed=6)
    oil = np.cumsum(rng.normal(0, 0.3, T)) + 10
    y = np.where(s == 0, 2.0 + 0.5 * oil, 8.0 + 0.8 * oil) + rng.normal(0, np.where(s == 0, 0.5, 1.0))
    return y, oil[:, None]


def test_run_lengths():
    assert reports.run_lengths([0, 0, 1, 1, 1, 0]) == {0: [2, 1], 1: [3]}
    assert reports.run_lengths([2]) == {2: [1]}


def test_decode_rows():
    w = hmm.PosteriorWeights(np.array([[0.2, 0.8], [0.5, 0.5]]), np.zeros((1, 2, 2)))
    header, rows = reports.decode_rows(w)
    assert header == ["t", "u_1", "u_2", "state"]
    assert rows == [[1, 0.2, 0.8, 2], [2, 0.5, 0.5, 1]]


def test_covariate_grid():
    X = np.array([[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]])
    g = reports.covariate_grid(X, 1, 3)
    np.testing.assert_array_equal(g[:, 1], [1.0, 3.0, 5.0])
    np.testing.assert_array_equal(g[:, 0], 2.0)


def test_energy_study_linear(price_like):
    y, X = price_like
    model, s = reports.energy_study(y, X, "linear", (100, 200))
    assert s["gamma_12"] == model.states.gamma[0, 1]
    np.testing.assert_allclose(s["implied_mean_dwell"], 1 / (1 - np.diag(model.states.gamma)))
    assert all(b > 0 for b in s["mean_slope"])
    assert s["decoded_runs"][0] >= 1


def test_quantile_rows_ordered(price_like):
    y, X = price_like
    model, _ = reports.energy_study(y, X, "linear", (50, 50), max_iter=10)
    header, rows = reports.quantile_rows(model, reports.covariate_grid(X, 0, 5))
    assert header[:3] == ["x", "state", "mean"] and len(rows) == 10
    for r in rows:
        q = r[3:]
        assert q == sorted(q)
        assert q[2] <= r[2] <= q[3]  # normal mean lies between the 25 % and 75 % quantiles


def test_replicate_energy_command(price_like, tmp_path):
    y, X = price_like
    write_dataset(tmp_path / "energy.csv", y, X, ["Price", "Oil"])
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"experiment": "energy-linear", "data": str(tmp_path / "energy.csv"),
                               "grid_points": 7}))
    assert main(["replicate", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert {"gamma_12", "gamma_21", "implied_mean_dwell", "mean_slope"} <= set(summary)
    for name in ("model.json", "decode.csv", "quantiles.csv", "diagnostics.csv"):
        assert (tmp_path / "out" / name).exists()
