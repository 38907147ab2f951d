"""Synthetic graph generators, ego-net window sampling, and graph file I/O.

Two generators cover the regimes the attacks care about:

* a stochastic block model with controllable homophily (via p_in/p_out) and
  feature-structure correlation (class means on a sphere; the antipodal
  orientation realises the anti-correlated heterophilic regime), and
* a Chung-Lu power-law graph used for degree-tail and sampling-bias studies.

Graphs serialise to a small JSON format: edges stored once with i < j, the
loader symmetrises.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

GRAPH_FORMAT_VERSION = 1


class GraphError(ValueError):
    """Invalid generator parameters or malformed graph data."""


class GraphFormatError(GraphError):
    """Raised by the loader on files violating the documented format."""


@dataclass
class Graph:
    """Undirected attributed graph: symmetric 0/1 adjacency, features, labels."""

    n: int
    adjacency: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    meta: dict = field(default_factory=dict)

    def validate(self) -> "Graph":
        a = self.adjacency
        if a.shape != (self.n, self.n):
            raise GraphError("adjacency shape does not match n")
        if not np.array_equal(a, a.T):
            raise GraphError("adjacency must be symmetric")
        if np.any(np.diag(a) != 0):
            raise GraphError("adjacency diagonal must be zero")
        if not np.all((a == 0) | (a == 1)):
            raise GraphError("adjacency entries must be 0/1")
        if not np.all(np.isfinite(self.features)):
            raise GraphError("features must be finite")
        if self.labels.shape != (self.n,):
            raise GraphError("labels must be a length-n vector")
        if np.any(self.labels < 0) or np.any(self.labels >= self.num_classes):
            raise GraphError("labels out of range")
        return self

    def num_edges(self) -> int:
        return int(self.adjacency.sum() // 2)

    def neighbors(self, v: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[v])


@dataclass(frozen=True)
class SbmParams:
    """Stochastic block model dials.

    ``mean_radius`` and ``feature_noise`` control feature-structure
    correlation strength; ``orientation`` picks aligned class means (random
    directions) or antipodal ones (two classes at +/- mu), the latter being
    the anti-correlation construction for heterophilic fixtures.
    """

    n: int
    num_classes: int = 2
    p_in: float = 0.3
    p_out: float = 0.02
    mean_radius: float = 2.0
    feature_noise: float = 0.5
    feature_dim: int = 16
    orientation: str = "aligned"

    def validate(self) -> "SbmParams":
        if self.n < 2:
            raise GraphError("need at least 2 nodes")
        if not (0.0 <= self.p_in <= 1.0 and 0.0 <= self.p_out <= 1.0):
            raise GraphError("edge probabilities must lie in [0, 1]")
        if self.mean_radius < 0:
            raise GraphError("mean radius must be non-negative")
        if self.feature_noise <= 0:
            raise GraphError("feature noise must be positive")
        if self.orientation not in ("aligned", "antipodal"):
            raise GraphError(f"unknown orientation {self.orientation!r}")
        if self.orientation == "antipodal" and self.num_classes != 2:
            raise GraphError("antipodal orientation requires 2 classes")
        return self


@dataclass(frozen=True)
class ChungLuParams:
    """Power-law random graph: weights w_i proportional to i^(-1/(beta-1))."""

    n: int
    exponent: float = 1.8
    mean_degree: float = 4.0

    def validate(self) -> "ChungLuParams":
        if self.n < 2:
            raise GraphError("need at least 2 nodes")
        if self.exponent <= 1.0:
            raise GraphError("power-law exponent must exceed 1")
        if self.mean_degree <= 0:
            raise GraphError("mean degree target must be positive")
        return self


@dataclass
class Window:
    """A fixed-size BFS ego-net: the reconstruction unit.

    ``nodes`` is in BFS discovery order (padded if the component ran out);
    ``boundary_edges`` counts parent-graph edges with exactly one endpoint
    inside the window.
    """

    center: int
    nodes: np.ndarray
    adjacency: np.ndarray
    features: np.ndarray
    boundary_edges: int

    @property
    def k(self) -> int:
        return len(self.nodes)

    def adjacency_hash(self) -> str:
        """Duplicate-detection hash over the induced adjacency bits."""
        bits = np.packbits(self.adjacency.astype(np.uint8))
        return hashlib.sha256(bytes([self.k]) + bits.tobytes()).hexdigest()


def _balanced_labels(n: int, num_classes: int) -> np.ndarray:
    # round-robin gives balanced classes up to +/-1 node
    return np.arange(n) % num_classes


def _class_means(params: SbmParams, rng: np.random.Generator) -> np.ndarray:
    if params.orientation == "antipodal":
        direction = rng.normal(size=params.feature_dim)
        direction /= np.linalg.norm(direction)
        mu = params.mean_radius * direction
        return np.stack([mu, -mu])
    means = rng.normal(size=(params.num_classes, params.feature_dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    return params.mean_radius * means


def generate_sbm(params: SbmParams, seed=0) -> Graph:
    """Sample a balanced-class SBM with Gaussian features around class means."""
    params.validate()
    rng = np.random.default_rng(seed)
    labels = _balanced_labels(params.n, params.num_classes)
    same = labels[:, None] == labels[None, :]
    probs = np.where(same, params.p_in, params.p_out)
    upper = np.triu(rng.random((params.n, params.n)) < probs, k=1)
    adjacency = (upper | upper.T).astype(np.float64)

    means = _class_means(params, rng)
    features = means[labels] + params.feature_noise * rng.normal(
        size=(params.n, params.feature_dim)
    )
    return Graph(
        n=params.n,
        adjacency=adjacency,
        features=features,
        labels=labels.astype(np.int64),
        num_classes=params.num_classes,
        meta={"generator": "sbm", "params": params.__dict__.copy(), "seed": seed},
    ).validate()


def expected_sbm_homophily(params: SbmParams) -> float:
    """Closed-form expected homophily of a balanced SBM."""
    counts = np.bincount(_balanced_labels(params.n, params.num_classes))
    intra_pairs = float(np.sum(counts * (counts - 1) / 2))
    total_pairs = params.n * (params.n - 1) / 2
    inter_pairs = total_pairs - intra_pairs
    intra = intra_pairs * params.p_in
    inter = inter_pairs * params.p_out
    if intra + inter == 0:
        raise GraphError("expected edge count is zero")
    return intra / (intra + inter)


def p_out_for_homophily(p_in: float, target_h: float, n: int, num_classes: int) -> float:
    """Invert the balanced-SBM homophily expectation for p_out given p_in."""
    if not 0.0 < target_h < 1.0:
        raise GraphError("target homophily must lie in (0, 1)")
    counts = np.bincount(_balanced_labels(n, num_classes))
    intra_pairs = float(np.sum(counts * (counts - 1) / 2))
    inter_pairs = n * (n - 1) / 2 - intra_pairs
    p_out = intra_pairs * p_in * (1.0 - target_h) / (inter_pairs * target_h)
    if p_out > 1.0:
        raise GraphError("target homophily unreachable at this p_in")
    return p_out


def generate_chunglu(params: ChungLuParams, seed=0) -> Graph:
    """Sample a Chung-Lu graph with expected power-law degrees."""
    params.validate()
    rng = np.random.default_rng(seed)
    raw = np.arange(1, params.n + 1, dtype=np.float64) ** (
        -1.0 / (params.exponent - 1.0)
    )
    if raw.sum() <= 0:
        raise GraphError("degenerate weight sequence")
    # With w = c*raw the edge probability min(1, w_i w_j / sum(w)) reduces to
    # min(1, c * raw_i raw_j / sum(raw)); clipping makes the naive scaling
    # undershoot heavy tails, so solve for c by bisection on the expected
    # mean degree.
    q = np.outer(raw, raw) / raw.sum()
    np.fill_diagonal(q, 0.0)

    def expected_mean_degree(c):
        return np.minimum(1.0, c * q).sum() / params.n

    lo, hi = 1e-9, 1.0
    while expected_mean_degree(hi) < params.mean_degree:
        hi *= 2.0
        if hi > 1e12:
            raise GraphError("mean degree target unreachable")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if expected_mean_degree(mid) < params.mean_degree:
            lo = mid
        else:
            hi = mid
    probs = np.minimum(1.0, hi * q)
    upper = np.triu(rng.random((params.n, params.n)) < probs, k=1)
    adjacency = (upper | upper.T).astype(np.float64)
    features = rng.normal(size=(params.n, 2))
    return Graph(
        n=params.n,
        adjacency=adjacency,
        features=features,
        labels=np.zeros(params.n, dtype=np.int64),
        num_classes=1,
        meta={"generator": "chunglu", "params": params.__dict__.copy(), "seed": seed},
    ).validate()


def hill_tail_exponent(degrees: np.ndarray, top_fraction: float = 0.1) -> float:
    """Hill estimator of the degree-tail power-law exponent."""
    degs = np.sort(np.asarray(degrees, dtype=np.float64))[::-1]
    degs = degs[degs > 0]
    m = max(2, int(np.ceil(top_fraction * len(degs))))
    tail = degs[:m]
    threshold = tail[-1]
    hill = np.mean(np.log(tail / threshold))
    if hill <= 0:
        raise GraphError("degenerate degree tail")
    return 1.0 + 1.0 / hill


def sample_egonet(graph: Graph, center: int, k: int, seed=0) -> Window:
    """BFS window of exactly k nodes around ``center``.

    BFS ties break by ascending node id.  If the component is exhausted
    before k nodes, the window is padded with uniformly sampled unvisited
    nodes (kept at fixed size so the denoiser sees constant shapes).
    """
    if not 0 <= center < graph.n:
        raise GraphError(f"invalid center {center}")
    if k > graph.n:
        raise GraphError("window size exceeds node count")
    visited = {center}
    order = [center]
    queue = deque([center])
    while queue and len(order) < k:
        u = queue.popleft()
        for w in graph.neighbors(u):
            w = int(w)
            if w not in visited:
                visited.add(w)
                order.append(w)
                queue.append(w)
                if len(order) == k:
                    break
    if len(order) < k:
        rng = np.random.default_rng(seed)
        rest = np.setdiff1d(np.arange(graph.n), np.array(order))
        pad = rng.choice(rest, size=k - len(order), replace=False)
        order.extend(int(p) for p in pad)
    nodes = np.array(order[:k], dtype=np.int64)
    sub = graph.adjacency[np.ix_(nodes, nodes)].copy()
    inside = np.zeros(graph.n, dtype=bool)
    inside[nodes] = True
    cross = graph.adjacency[np.ix_(nodes, ~inside)]
    boundary = int(cross.sum())
    return Window(
        center=center,
        nodes=nodes,
        adjacency=sub,
        features=graph.features[nodes].copy(),
        boundary_edges=boundary,
    )


def measure_homophily(graph: Graph) -> float:
    """Fraction of edges joining same-label endpoints."""
    iu, ju = np.triu_indices(graph.n, k=1)
    mask = graph.adjacency[iu, ju] > 0
    if not np.any(mask):
        raise GraphError("graph has no edges")
    same = graph.labels[iu[mask]] == graph.labels[ju[mask]]
    return float(np.mean(same))


def measure_feature_correlation(graph: Graph) -> float:
    """Mean edge inner product of features, normalised by E[||x||^2]."""
    sx2 = float(np.mean(np.sum(graph.features**2, axis=1)))
    if sx2 <= 0:
        raise GraphError("zero features")
    iu, ju = np.triu_indices(graph.n, k=1)
    mask = graph.adjacency[iu, ju] > 0
    if not np.any(mask):
        raise GraphError("graph has no edges")
    inner = np.sum(graph.features[iu[mask]] * graph.features[ju[mask]], axis=1)
    return float(np.mean(inner) / sx2)


def save_graph(graph: Graph, path) -> None:
    """Write the documented JSON format (edges once, i < j)."""
    iu, ju = np.triu_indices(graph.n, k=1)
    mask = graph.adjacency[iu, ju] > 0
    payload = {
        "version": GRAPH_FORMAT_VERSION,
        "n": graph.n,
        "d": int(graph.features.shape[1]),
        "C": graph.num_classes,
        "edges": [[int(i), int(j)] for i, j in zip(iu[mask], ju[mask])],
        "features": graph.features.tolist(),
        "labels": [int(c) for c in graph.labels],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_graph(path) -> Graph:
    """Load and validate a graph file, symmetrising the edge list."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise GraphFormatError(f"cannot parse graph file: {exc}") from exc
    try:
        n = int(payload["n"])
        d = int(payload["d"])
        num_classes = int(payload["C"])
        edges = payload["edges"]
        features = np.asarray(payload["features"], dtype=np.float64)
        labels = np.asarray(payload["labels"], dtype=np.int64)
    except (KeyError, TypeError, ValueError) as exc:
        raise GraphFormatError(f"missing or malformed field: {exc}") from exc
    if features.shape != (n, d):
        raise GraphFormatError("feature matrix shape mismatch")
    adjacency = np.zeros((n, n))
    for edge in edges:
        if len(edge) != 2:
            raise GraphFormatError(f"malformed edge {edge!r}")
        i, j = int(edge[0]), int(edge[1])
        if i == j:
            raise GraphFormatError(f"self-loop edge ({i}, {i}) not allowed")
        if not (0 <= i < n and 0 <= j < n):
            raise GraphFormatError(f"edge endpoint out of range: ({i}, {j})")
        adjacency[i, j] = adjacency[j, i] = 1.0
    graph = Graph(
        n=n,
        adjacency=adjacency,
        features=features,
        labels=labels,
        num_classes=num_classes,
    )
    try:
        return graph.validate()
    except GraphError as exc:
        raise GraphFormatError(str(exc)) from exc


def rounded_observation_size(n: int, rho: float) -> int:
    """round(rho*n) with a warning when rho*n is not integral."""
    exact = rho * n
    size = int(round(exact))
    if abs(exact - size) > 1e-9:
        warnings.warn(
            f"rho*n = {exact:.3f} is not integral; rounding to {size}",
            stacklevel=2,
        )
    return size
