import json
import os

import numpy as np
import pytest

import avae_lab as al


def test_kl_matches_formula():
    rng = np.random.default_rng(0)
    mu = rng.normal(size=(5, 3))
    var = rng.uniform(0.2, 2.0, size=(5, 3))
    expected = 0.5 * (var + mu**2 - 1 - np.log(var)).sum(axis=1)
    np.testing.assert_allclose(al.kl_to_standard(mu, var), expected, rtol=1e-12)


def test_w2_of_identical_gaussians_is_zero():
    c = np.array([[2.0, 0.3], [0.3, 1.0]])
    assert al.w2_distance(np.zeros(2), c, np.zeros(2), c) == pytest.approx(0.0, abs=1e-6)
    assert al.w2_distance(np.zeros(2), c, np.ones(2), c) == pytest.approx(np.sqrt(2.0))


def test_ppca_projection_idempotent():
    rng = np.random.default_rng(1)
    m = al.PpcaModel(rng.normal(size=(6, 2)), 0.0)
    p = m.projection()
    np.testing.assert_allclose(p @ p, p, atol=1e-12)
    res = al.ppca_identity_residuals(seed=0, trials=3)
    assert max(res.values()) < 1e-8


def test_tabular_exact_posterior_gives_zero_kl():
    model = al.tabular_init(nx=8, nz=8, seed=3)
    dec, enc = al.tabular_tables(model)
    np.testing.assert_allclose(dec.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(enc.sum(axis=1), 1.0, atol=1e-12)
    trained, losses = al.tabular_train(model, al.bimodal_histogram(8), "AVAE", steps=20)
    assert len(losses) == 20
    h = al.tabular_heatmaps(trained)
    assert h["z_kernel"].sum() == pytest.approx(1.0)


def test_config_errors_are_value_errors():
    cfg = al.default_config()
    cfg["objective"]["kind"] = "SE"
    with pytest.raises(al.ConfigError):
        al.train(cfg, "/tmp/never")
    with pytest.raises(ValueError):
        al.train({"model": {"nonsense": 1}}, "/tmp/never")


def test_train_and_evaluate_synthetic(tmp_path):
    cfg = al.default_config()
    cfg["data"].update(dataset="synth", synth_obs=6, synth_latent=2, train_size=200, test_size=50)
    cfg["model"].update(latent=2, hidden=[5])
    cfg["train"].update(steps=20, batch=16)
    r = al.train(cfg, str(tmp_path / "run"))
    assert os.path.exists(r["checkpoint"])
    assert al.load_checkpoint_config(r["checkpoint"]) == cfg
    with pytest.raises(al.ConfigError):
        al.train(cfg, str(tmp_path / "run"))
    rep = al.evaluate(r["checkpoint"], {"eval": {"probe_steps": 50, "pgd_steps": 3, "pgd_restarts": 0,
                                                 "drift_steps": 3, "drift_points": 10}},
                      out=str(tmp_path / "run"))
    assert 0.0 <= rep["nominal"]["sign"] <= 1.0
    assert set(rep["adversarial"]["sign"]) == {"0", "0.1"}


def test_bundled_mnist_loads():
    root = os.environ.get("AVAE_DATA_DIR")
    if not root:
        pytest.skip("AVAE_DATA_DIR not set")
    d = al.load_idx(f"{root}/mnist/t10k-images-idx3-ubyte.gz", f"{root}/mnist/t10k-labels-idx1-ubyte.gz")
    assert d["x"].shape == (1000, 784)
    assert d["shape"] == (28, 28, 1)
    assert 0.0 <= d["x"].min() and d["x"].max() <= 1.0
