import json

import numpy as np
import pytest

import driftlab as dl


def test_ring_spectrum():
    a = dl.combination_matrix("ring", agents=4)
    lam, v = dl.spectral_decompose(a)
    np.testing.assert_allclose(lam, [1, 1 / 3, 1 / 3, -1 / 3], atol=1e-12)
    np.testing.assert_allclose(v @ np.diag(lam) @ v.T, a.weights, atol=1e-12)
    np.testing.assert_allclose(dl.perron_vector(a), np.full(4, 0.25), atol=1e-10)


def test_bad_matrix_rejected():
    with pytest.raises(ValueError):
        dl.combination_matrix("custom", agents=2, matrix=np.array([[1.0, 0.5], [0.0, 0.5]]))


def test_theory_matches_oracle_for_small_mu():
    model = dl.quadratic_network(agents=6, dim=2, hessian_eigenvalues=[0.6, 1.2], seed=3)
    info = dl.minimizer_summary(model)
    a = dl.combination_matrix("ring", agents=6)
    mu, batch = 0.005, 100
    n = 200
    for alg in ("centralized", "consensus", "diffusion"):
        theory = dl.predict_er(dl.theory_inputs(info, a, mu, batch), alg, n)["total"]
        steps, er = dl.oracle_er(info, a, alg, mu, batch, n, record_every=n)
        assert steps[-1] == n
        assert abs(theory - er[-1]) / er[-1] < 0.1


def test_ensemble_is_reproducible():
    model = dl.quadratic_network(agents=4, dim=2, seed=1)
    info = dl.minimizer_summary(model)
    a = dl.combination_matrix("ring", agents=4)
    r1 = dl.ensemble_er(model, info, a, "diffusion", 0.05, 1, 50, 200, seed=9, record_every=10, workers=1)
    r2 = dl.ensemble_er(model, info, a, "diffusion", 0.05, 1, 50, 200, seed=9, record_every=10, workers=2)
    assert r1["er_mean"] == r2["er_mean"]
    steps, er = dl.oracle_er(info, a, "diffusion", 0.05, 1, 49, record_every=10)
    for m, s, o in zip(r1["er_mean"], r1["er_stderr"], er):
        assert abs(m - o) <= 5 * s + 1e-15


def test_double_well_basin():
    model = dl.double_well_network([0.2, -0.2])
    info = dl.minimizer_summary(model, "plus")
    assert info.w_star[0] > 0
    assert info.basin.lower < info.w_star[0] < info.basin.upper
    assert info.basin.barrier > 0


def test_cli_in_process(tmp_path):
    code, out, err = dl.run_cli(["topology", "--set", "topology.kind=ring", "--set", "topology.K=5",
                                 "--seed", "4", "--output", str(tmp_path), "--deterministic"])
    assert code == 0, err
    cfg = json.loads((tmp_path / "config.json").read_text())
    assert cfg["topology"]["K"] == 5
    assert (tmp_path / "eigenvalues.csv").exists()

    code, _, err = dl.run_cli(["theory", "--set", "run.mu=-1", "--output", str(tmp_path)])
    assert code == 1
    assert err.startswith("error kind=validation")
