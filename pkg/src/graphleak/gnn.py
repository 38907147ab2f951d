"""Small node-classification GNNs (GCN, GIN, GraphSAGE) for the explainers
to interrogate.

All three run on the tape-based tensor engine so that input gradients (the
Grad explainer) and mask gradients (GNNExplainer) come from the same
backward pass as training.  The forward pass recomputes the aggregation
operator from the adjacency tensor each call; that keeps the pass
differentiable through a soft (masked) adjacency at negligible cost for
n <= 512.

Training is full-batch plain gradient descent with a fixed step: a deliberate
desk-scale simplification (no momentum state to serialise, smaller autodiff
surface), recorded in audit reports as a deviation from the usual Adam setup.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import container
from . import numerics as nx
from .graphgen import Graph
from .numerics import Tensor

ARCHITECTURES = ("gcn", "gin", "sage")


class GnnError(ValueError):
    """Invalid training setup or model/graph mismatch."""


class TrainingDiverged(GnnError):
    """Non-finite loss encountered during training."""


@dataclass(frozen=True)
class GnnHyper:
    layers: int = 3
    hidden: int = 32
    epochs: int = 200
    learning_rate: float = 0.01
    dropout: float = 0.5
    train_fraction: float = 0.8

    def validate(self) -> "GnnHyper":
        if self.layers < 1:
            raise GnnError("need at least one layer")
        if not 0.0 <= self.dropout < 1.0:
            raise GnnError("dropout must lie in [0, 1)")
        if not 0.0 < self.train_fraction <= 1.0:
            raise GnnError("train fraction must lie in (0, 1]")
        return self


@dataclass
class GnnModel:
    """Trained backbone: architecture, parameter tensors, training metadata."""

    arch: str
    layers: int
    hidden: int
    num_classes: int
    feature_dim: int
    params: dict
    dropout: float
    meta: dict = field(default_factory=dict)

    def parameter_items(self):
        return sorted(self.params.items())


def _glorot(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(arch, layers, hidden, feature_dim, num_classes, seed=0) -> dict:
    rng = np.random.default_rng(seed)
    params = {}
    for layer in range(layers):
        d_in = feature_dim if layer == 0 else hidden
        d_out = num_classes if layer == layers - 1 else hidden
        if arch == "sage":
            d_in = 2 * d_in  # concat(self, mean-neighbours)
        params[f"w{layer}"] = Tensor(_glorot(rng, d_in, d_out), requires_grad=True)
        params[f"b{layer}"] = Tensor(np.zeros(d_out), requires_grad=True)
        if arch == "gin":
            params[f"w{layer}_2"] = Tensor(_glorot(rng, d_out, d_out), requires_grad=True)
            params[f"b{layer}_2"] = Tensor(np.zeros(d_out), requires_grad=True)
    return params


def _gcn_operator(adjacency: Tensor) -> Tensor:
    """Symmetric-normalised adjacency with self-loops: D^-1/2 (A+I) D^-1/2."""
    n = adjacency.shape[0]
    with_loops = nx.add(adjacency, Tensor(np.eye(n)))
    inv_sqrt_deg = nx.power(nx.tensor_sum(with_loops, axis=1), -0.5)
    col_scaled = nx.mul(with_loops, inv_sqrt_deg)
    return nx.transpose(nx.mul(nx.transpose(col_scaled), inv_sqrt_deg))


def _mean_neighbours(adjacency: Tensor, h: Tensor) -> Tensor:
    degree = nx.clamp_min(nx.tensor_sum(adjacency, axis=1), 1.0)
    summed = nx.matmul(adjacency, h)
    return nx.transpose(nx.mul(nx.transpose(summed), nx.power(degree, -1.0)))


def forward_logits(
    model: GnnModel,
    features: Tensor,
    adjacency: Tensor,
    dropout_rng: np.random.Generator | None = None,
) -> Tensor:
    """Logits (n, C); pass a dropout RNG only in training mode."""
    p = model.params
    h = features
    gcn_op = _gcn_operator(adjacency) if model.arch == "gcn" else None
    if model.arch == "gin":
        n = adjacency.shape[0]
        agg = nx.add(adjacency, Tensor(np.eye(n)))  # sum over self + neighbours
    for layer in range(model.layers):
        if model.arch == "gcn":
            z = nx.matmul(gcn_op, h)
        elif model.arch == "sage":
            z = nx.concat([h, _mean_neighbours(adjacency, h)], axis=1)
        else:
            z = nx.matmul(agg, h)
        z = nx.add(nx.matmul(z, p[f"w{layer}"]), p[f"b{layer}"])
        if model.arch == "gin":
            z = nx.add(nx.matmul(nx.relu(z), p[f"w{layer}_2"]), p[f"b{layer}_2"])
        if layer < model.layers - 1:
            z = nx.relu(z)
            if dropout_rng is not None and model.dropout > 0.0:
                keep = dropout_rng.random(z.shape) >= model.dropout
                z = nx.mul(z, Tensor(keep / (1.0 - model.dropout)))
        h = z
    return h


def cross_entropy(logits: Tensor, labels: np.ndarray, rows: np.ndarray | None = None) -> Tensor:
    """Mean cross-entropy at the true labels, optionally over selected rows."""
    logp = nx.log_softmax(logits)
    n, c = logits.shape
    onehot = np.zeros((n, c))
    if rows is None:
        onehot[np.arange(n), labels] = 1.0
        count = n
    else:
        rows = np.asarray(rows)
        onehot[rows, labels[rows]] = 1.0
        count = len(rows)
    return nx.mul(nx.tensor_sum(nx.mul(logp, Tensor(onehot))), -1.0 / count)


def train_gnn(
    graph: Graph,
    arch: str = "gcn",
    hyper: GnnHyper | None = None,
    seed=0,
    train_mask: np.ndarray | None = None,
) -> GnnModel:
    """Full-batch gradient-descent training with cross-entropy.

    The train mask defaults to a seeded shuffle split (hyper.train_fraction);
    the remainder is the validation set whose accuracy lands in the metadata.
    """
    arch = arch.lower()
    if arch not in ARCHITECTURES:
        raise GnnError(f"unknown architecture {arch!r}")
    hyper = (hyper or GnnHyper()).validate()
    present = np.unique(graph.labels)
    if len(present) < 2:
        raise GnnError("graph must contain at least 2 classes")

    rng = np.random.default_rng(seed)
    if train_mask is None:
        order = rng.permutation(graph.n)
        cut = max(1, int(round(hyper.train_fraction * graph.n)))
        train_nodes = np.sort(order[:cut])
    else:
        train_nodes = np.flatnonzero(np.asarray(train_mask))
    if len(train_nodes) == 0:
        raise GnnError("train mask is empty")
    val_nodes = np.setdiff1d(np.arange(graph.n), train_nodes)

    model = GnnModel(
        arch=arch,
        layers=hyper.layers,
        hidden=hyper.hidden,
        num_classes=graph.num_classes,
        feature_dim=graph.features.shape[1],
        params=init_params(arch, hyper.layers, hyper.hidden,
                           graph.features.shape[1], graph.num_classes, seed=seed),
        dropout=hyper.dropout,
    )
    x = Tensor(graph.features)
    a = Tensor(graph.adjacency)
    named = model.parameter_items()
    curve = []
    try:
        for _ in range(hyper.epochs):
            with nx.Tape() as tape:
                logits = forward_logits(model, x, a, dropout_rng=rng)
                loss = cross_entropy(logits, graph.labels, rows=train_nodes)
            grads = tape.backward(loss)
            for _, tensor in named:
                if tensor in grads:
                    tensor.data -= hyper.learning_rate * grads[tensor].data
            curve.append(loss.item())
    except nx.NonFiniteError as exc:
        raise TrainingDiverged(
            f"non-finite loss after {len(curve)} epochs (last losses: {curve[-3:]})"
        ) from exc

    probs = predict(model, graph)
    pred = probs.argmax(axis=1)
    train_acc = float(np.mean(pred[train_nodes] == graph.labels[train_nodes]))
    val_acc = (
        float(np.mean(pred[val_nodes] == graph.labels[val_nodes]))
        if len(val_nodes)
        else float("nan")
    )
    model.meta = {
        "seed": seed,
        "epochs": hyper.epochs,
        "train_accuracy": train_acc,
        "val_accuracy": val_acc,
        "loss_curve": curve,
        "train_nodes": train_nodes.tolist(),
    }
    return model


def predict(model: GnnModel, graph: Graph) -> np.ndarray:
    """Eval-mode class probabilities (n, C); dropout off, rows sum to 1."""
    if graph.features.shape[1] != model.feature_dim:
        raise GnnError("feature dimension mismatch")
    with nx.no_grad():
        logits = forward_logits(model, Tensor(graph.features), Tensor(graph.adjacency))
        return nx.softmax(logits).data


def loss_and_grad(model: GnnModel, graph: Graph, node: int):
    """Cross-entropy at node's true label and its gradient w.r.t. x_node."""
    if not 0 <= node < graph.n:
        raise GnnError(f"invalid node {node}")
    x = Tensor(graph.features, requires_grad=True)
    with nx.Tape() as tape:
        logits = forward_logits(model, x, Tensor(graph.adjacency))
        loss = cross_entropy(logits, graph.labels, rows=np.array([node]))
    grads = tape.backward(loss)
    grad_x = grads[x].data[node] if x in grads else np.zeros(model.feature_dim)
    return loss.item(), grad_x


def save_model(model: GnnModel, path) -> None:
    manifest = {
        "kind": "gnn",
        "arch": model.arch,
        "layers": model.layers,
        "hidden": model.hidden,
        "num_classes": model.num_classes,
        "feature_dim": model.feature_dim,
        "dropout": model.dropout,
        "meta": {k: v for k, v in model.meta.items() if k != "loss_curve"},
    }
    container.write_container(
        path,
        container.CKPT_HEADER,
        manifest,
        {name: tensor.data for name, tensor in model.params.items()},
    )


def load_model(path) -> GnnModel:
    manifest, arrays = container.read_container(path, container.CKPT_HEADER)
    if manifest.get("kind") != "gnn":
        raise GnnError(f"not a GNN checkpoint: kind={manifest.get('kind')!r}")
    return GnnModel(
        arch=manifest["arch"],
        layers=manifest["layers"],
        hidden=manifest["hidden"],
        num_classes=manifest["num_classes"],
        feature_dim=manifest["feature_dim"],
        params={n: Tensor(a, requires_grad=True) for n, a in arrays.items()},
        dropout=manifest["dropout"],
        meta=manifest.get("meta", {}),
    )
