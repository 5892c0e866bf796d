import numpy as np
import pytest

import causalgcn as cg

SMALL = {"nodes": 240, "classes": 3, "train_per_class": 10, "valid": 90, "test": 120}


def small_graph(seed=1):
    return cg.planted_partition(seed=seed, **SMALL)


def test_graph_roundtrip():
    g = small_graph()
    assert g.num_nodes == 240
    assert g.features.shape == (240, 16)
    rebuilt = cg.Graph(g.num_nodes, g.edges(), g.features, g.labels, g.num_classes,
                       g.train, g.valid, g.test)
    assert rebuilt.num_edges == g.num_edges


def test_injection_adds_cross_edges():
    g = small_graph()
    h = cg.inject_cross_category_edges(g, 0.5, seed=3)
    assert h.num_edges == g.num_edges + round(0.5 * g.num_edges)
    labels = g.labels
    added = set(h.edges()) - set(g.edges())
    assert all(labels[u] != labels[v] for u, v in added)


def test_self_mode_is_plain_perceptron():
    g = small_graph()
    model, log, _ = cg.train(g, {"epochs": 30, "hidden": 8, "seed": 2})
    assert log
    out = cg.predict(model, g)
    logits = model.mlp_logits(g.features)
    soft = np.exp(logits - logits.max(axis=1, keepdims=True))
    soft /= soft.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(out["y_self"], soft, atol=1e-12)
    np.testing.assert_allclose(out["effect"].sum(axis=1), 0.0, atol=1e-12)


def test_uncertainty_vanishes_without_dropout():
    g = small_graph()
    model, _, _ = cg.train(g, {"epochs": 10, "hidden": 8, "seed": 2})
    _, graph_var = cg.causal_uncertainty(model, g, k_mc=4, tau=0.0, seed=5)
    assert np.all(graph_var == 0.0)


def test_svm_dual_feasible():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(20, 2))
    y = [1 if a * b > 0 else -1 for a, b in x]
    sol = cg.solve_svm_dual(cg.rbf_kernel(x, x, 1.0), y, 10.0)
    assert abs(float(np.dot(sol["alpha"], y))) < 1e-6
    assert sol["alpha"].min() >= 0.0 and sol["alpha"].max() <= 10.0


def test_pipeline_and_errors(tmp_path):
    cfg = {"seed": 4, "hidden": 16, "epochs": 80, "k_mc": 6, "synthetic": SMALL,
           "perturb": {"ratio": 0.3}}
    out = cg.run_pipeline(cfg, str(tmp_path))
    acc = out["metrics"]["accuracy"]
    assert acc["oracle"] >= acc["cgi"]
    z_hat, z_self = out["bundle"]["z_hat"], out["bundle"]["z_self"]
    assert all(c in (a, b) for c, a, b in zip(out["z_cgi"], z_hat, z_self))
    assert (tmp_path / "metrics.json").exists()
    with pytest.raises(ValueError):
        cg.run_pipeline({"no_such_key": 1})
