"""Tests for the four explainers: definitions, oracles, and contracts."""

import numpy as np
import pytest

from graphleak import explain, gnn, graphgen


def separable_graph(seed=0, n=48, d=8):
    params = graphgen.SbmParams(
        n=n, num_classes=2, p_in=0.3, p_out=0.02, mean_radius=3.0,
        feature_noise=0.3, feature_dim=d,
    )
    return graphgen.generate_sbm(params, seed=seed)


@pytest.fixture(scope="module")
def fixture():
    graph = separable_graph()
    model = gnn.train_gnn(graph, "gcn", gnn.GnnHyper(layers=2, hidden=16, epochs=120), seed=0)
    return graph, model


def test_grad_equals_loss_and_grad(fixture):
    graph, model = fixture
    for v in (0, 7):
        assert np.array_equal(
            explain.explain_grad(model, graph, v),
            gnn.loss_and_grad(model, graph, v)[1],
        )


def test_grad_constant_model_zero(fixture):
    graph, _ = fixture
    model = gnn.GnnModel(
        arch="gcn", layers=2, hidden=8, num_classes=2,
        feature_dim=graph.features.shape[1],
        params=gnn.init_params("gcn", 2, 8, graph.features.shape[1], 2, seed=0),
        dropout=0.0,
    )
    for t in model.params.values():
        t.data[:] = 0.0
    assert np.allclose(explain.explain_grad(model, graph, 2), 0.0)


def test_grad_finite_difference(fixture):
    graph, model = fixture
    v = 11
    grad = explain.explain_grad(model, graph, v)
    step = 1e-5
    for i in range(graph.features.shape[1]):
        orig = graph.features[v, i]
        graph.features[v, i] = orig + step
        hi, _ = gnn.loss_and_grad(model, graph, v)
        graph.features[v, i] = orig - step
        lo, _ = gnn.loss_and_grad(model, graph, v)
        graph.features[v, i] = orig
        numeric = (hi - lo) / (2 * step)
        scale = max(1.0, abs(grad[i]), abs(numeric))
        assert abs(grad[i] - numeric) / scale < 1e-4


def test_gradinput_cases(fixture):
    graph, model = fixture
    v = 4
    grad = explain.explain_grad(model, graph, v)
    assert np.array_equal(
        explain.explain_gradinput(model, graph, v), graph.features[v] * grad
    )
    saved = graph.features[v].copy()
    graph.features[v] = 0.0
    assert np.allclose(explain.explain_gradinput(model, graph, v), 0.0)
    graph.features[v] = 1.0
    assert np.array_equal(
        explain.explain_gradinput(model, graph, v),
        explain.explain_grad(model, graph, v),
    )
    graph.features[v] = saved


def test_gnnexplainer_mask_range_and_determinism(fixture):
    graph, model = fixture
    cfg = explain.GnnExplainerConfig(steps=30)
    mask = explain.explain_gnnexplainer(model, graph, 3, cfg, seed=5)
    assert mask.shape == (graph.features.shape[1],)
    assert np.all((mask >= 0) & (mask <= 1))
    again = explain.explain_gnnexplainer(model, graph, 3, cfg, seed=5)
    assert np.array_equal(mask, again)


def test_gnnexplainer_ignored_feature_gets_low_mask():
    graph = separable_graph(seed=1, n=32, d=6)
    model = gnn.train_gnn(graph, "gcn", gnn.GnnHyper(layers=2, hidden=12, epochs=120), seed=1)
    dead = 2
    model.params["w0"].data[dead, :] = 0.0  # feature `dead` never used

    # ablation oracle: feature `dead` must not move predictions
    base = gnn.predict(model, graph)
    saved = graph.features[:, dead].copy()
    graph.features[:, dead] = 0.0
    assert np.allclose(gnn.predict(model, graph), base, atol=1e-12)
    graph.features[:, dead] = saved

    masks = [
        explain.explain_gnnexplainer(model, graph, v, seed=v) for v in range(0, 32, 4)
    ]
    dead_mass = np.median([m[dead] for m in masks])
    informative = np.median(
        [np.median(np.delete(m, dead)) for m in masks]
    )
    assert dead_mass <= informative


def test_gnnexplainer_symmetric_model_balanced_masks():
    # symmetry oracle: the fixture is invariant under any feature swap
    # (identical weight rows AND identical feature columns), so mask entries
    # can differ only through init noise
    from graphleak.numerics import Tensor

    n, d = 24, 6
    rng = np.random.default_rng(3)
    adjacency = np.zeros((n, n))
    for i in range(n - 1):
        adjacency[i, i + 1] = adjacency[i + 1, i] = 1
    base = rng.normal(size=n)
    feats = np.tile(base[:, None], (1, d))  # every feature column identical
    labels = (base > 0).astype(np.int64)
    graph = graphgen.Graph(n, adjacency, feats, labels, 2)
    model = gnn.GnnModel(
        arch="gcn", layers=1, hidden=0, num_classes=2, feature_dim=d,
        params={
            "w0": Tensor(np.tile([[1.0, -1.0]], (d, 1)) / np.sqrt(d), requires_grad=True),
            "b0": Tensor(np.zeros(2), requires_grad=True),
        },
        dropout=0.0,
    )
    spreads = []
    for seed in range(5):
        mask = explain.explain_gnnexplainer(model, graph, 5, seed=seed)
        spreads.append(float(mask.max() - mask.min()))
    assert np.median(spreads) <= 0.2


def test_graphlime_constant_feature_gets_zero():
    graph = separable_graph(seed=2, n=32, d=5)
    graph.features[:, 3] = 1.5  # no variance anywhere
    model = gnn.train_gnn(graph, "gcn", gnn.GnnHyper(layers=2, hidden=12, epochs=60), seed=2)
    phi = explain.explain_graphlime(model, graph, 4)
    assert phi[3] == 0.0
    assert np.all(phi >= 0)


def test_graphlime_huge_lambda_zeroes_everything(fixture):
    graph, model = fixture
    cfg = explain.GraphLimeConfig(lam=1e9)
    assert np.allclose(explain.explain_graphlime(model, graph, 6, cfg), 0.0)


def test_graphlime_fallback_on_singleton_neighbourhood():
    n = 6
    adjacency = np.zeros((n, n))
    adjacency[2, 3] = adjacency[3, 2] = 1
    rng = np.random.default_rng(4)
    graph = graphgen.Graph(
        n, adjacency, rng.normal(size=(n, 4)),
        np.array([0, 1, 0, 1, 0, 1]), 2,
    )
    model = gnn.train_gnn(
        graph, "gcn", gnn.GnnHyper(layers=1, hidden=0, epochs=30), seed=0
    )
    with pytest.warns(UserWarning, match="falling back"):
        phi = explain.explain_graphlime(model, graph, 0)  # isolated node
    assert np.array_equal(phi, explain.explain_grad(model, graph, 0))


def test_graphlime_predictive_feature_wins_vs_grid_oracle():
    # 2-feature fixture on a cycle: feature 0 drives predictions (labels are
    # its smoothed sign), feature 1 is pure noise
    n, d = 16, 2
    rng = np.random.default_rng(5)
    adjacency = np.zeros((n, n))
    for i in range(n):
        adjacency[i, (i + 1) % n] = adjacency[(i + 1) % n, i] = 1
    feats = np.zeros((n, d))
    feats[:, 0] = np.linspace(-2, 2, n)
    feats[:, 1] = rng.normal(size=n)
    labels = (feats[:, 0] > 0).astype(np.int64)
    graph = graphgen.Graph(n, adjacency, feats, labels, 2)
    model = gnn.train_gnn(
        graph, "gcn", gnn.GnnHyper(layers=1, hidden=0, epochs=300, dropout=0.0,
                                   train_fraction=1.0), seed=5
    )
    assert model.meta["train_accuracy"] >= 0.8
    cfg = explain.GraphLimeConfig(hops=2)
    node = 4
    phi = explain.explain_graphlime(model, graph, node, cfg)
    assert phi[0] >= 0.9 * phi.sum() > 0

    # exhaustive grid-search oracle over the same lasso objective
    samples = explain._hop_neighbourhood(graph, node, 2)
    preds = gnn.predict(model, graph)[samples]
    target = explain._gaussian_kernel(preds).ravel()
    columns = np.stack(
        [explain._gaussian_kernel(feats[samples, k]).ravel() for k in range(d)],
        axis=1,
    )
    lam = 0.01 * float(np.max(columns.T @ target))
    grid = np.linspace(0, 2, 161)
    best, best_val = None, np.inf
    for a in grid:
        for b in grid:
            val = np.sum((target - columns @ np.array([a, b])) ** 2) + lam * (a + b)
            if val < best_val:
                best, best_val = (a, b), val
    ours = explain.nonnegative_lasso(columns, target, lam)
    ours_val = np.sum((target - columns @ ours) ** 2) + lam * ours.sum()
    assert ours_val <= best_val + 1e-9
    assert abs(ours[0] - best[0]) < 0.05


def test_explain_all_matrix_contract(fixture):
    graph, model = fixture
    mat = explain.explain_all(model, graph, "gradinput")
    assert mat.values.shape == graph.features.shape
    assert mat.kind == "gradinput"
    assert not mat.perturbed
    expect = np.array(
        [explain.explain_gradinput(model, graph, v) for v in range(graph.n)]
    )
    assert np.array_equal(mat.values, expect)


def test_perturb_sets_flag(fixture):
    graph, model = fixture
    from graphleak import dp

    mat = explain.explain_all(model, graph, "grad")
    spec = dp.calibrate("gaussian", epsilon=1.0, delta=1e-5)
    noisy = dp.perturb(mat, spec, seed=0)
    assert noisy.perturbed
    assert not mat.perturbed
    assert noisy.values.shape == mat.values.shape


def test_explanations_save_load_round_trip(tmp_path, fixture):
    graph, model = fixture
    mat = explain.explain_all(model, graph, "grad")
    path = tmp_path / "expl.bin"
    explain.save_explanations(mat, path)
    loaded = explain.load_explanations(path)
    assert loaded.kind == "grad"
    assert np.array_equal(loaded.values, mat.values)
