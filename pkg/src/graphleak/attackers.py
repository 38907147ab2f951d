"""Baseline reconstruction attacks and the ranking metrics shared by all attacks.

The similarity attack (cosine over signal rows) is the heuristic the diffusion
attack is compared against; the threshold attack is the analytical attacker
whose TPR the closed-form bounds certify.  AUC is the Mann-Whitney statistic
with average-rank tie handling; AP is the step-interpolated area under
precision-recall with ties broken by stable index order (documented because
AP is tie-sensitive).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MetricError(ValueError):
    """Degenerate label sets or invalid attack parameters."""


@dataclass
class ReconResult:
    """Score matrix plus ranking metrics for one reconstruction attack."""

    scores: np.ndarray
    attack: str
    auc: float
    ap: float
    partition_aucs: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)


def similarity_attack(rows: np.ndarray, kind: str = "cosine") -> np.ndarray:
    """Pairwise cosine of signal rows mapped to [0, 1]; zero rows score 0.5."""
    if kind != "cosine":
        raise MetricError(f"unknown similarity kind {kind!r}")
    rows = np.asarray(rows, dtype=np.float64)
    if rows.shape[0] < 2:
        raise MetricError("need at least 2 rows")
    norms = np.linalg.norm(rows, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = rows / safe[:, None]
    cos = unit @ unit.T
    zero = norms == 0
    cos[zero, :] = 0.0
    cos[:, zero] = 0.0
    scores = 0.5 * (1.0 + np.clip(cos, -1.0, 1.0))
    scores = 0.5 * (scores + scores.T)
    np.fill_diagonal(scores, 0.0)
    return scores


def threshold_attack(rows: np.ndarray, tau: float, direction: str = "above") -> np.ndarray:
    """Inner-product threshold attacker.

    direction="above" predicts an edge when <row_i, row_j> > tau (the
    homophilic / feature-correlation rule); direction="below" predicts an
    edge when <row_i, row_j> <= -tau, the negated-threshold rule of the
    heterophilic anti-correlation attacker (tau passed as a magnitude).
    """
    if not np.isfinite(tau):
        if direction == "above" and tau > 0:
            n = len(rows)
            out = np.zeros((n, n))
            return out
        raise MetricError("tau must be finite (except +inf with direction=above)")
    if direction not in ("above", "below"):
        raise MetricError(f"unknown direction {direction!r}")
    rows = np.asarray(rows, dtype=np.float64)
    gram = rows @ rows.T
    est = (gram > tau) if direction == "above" else (gram <= -tau)
    est = est.astype(np.float64)
    est = np.maximum(est, est.T)  # symmetry; gram is symmetric anyway
    np.fill_diagonal(est, 0.0)
    return est


def _pair_scores_labels(scores: np.ndarray, adjacency: np.ndarray):
    scores = np.asarray(scores, dtype=np.float64)
    adjacency = np.asarray(adjacency)
    iu, ju = np.triu_indices(scores.shape[0], k=1)
    return scores[iu, ju], (adjacency[iu, ju] > 0).astype(np.int64)


def _rank_average_ties(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc_from_pairs(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUC with average-rank ties on flat score/label vectors."""
    labels = np.asarray(labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs at least one positive and one negative")
    ranks = _rank_average_ties(np.asarray(scores, dtype=np.float64))
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc(scores: np.ndarray, adjacency: np.ndarray) -> float:
    """AUC of a score matrix against true adjacency over i<j pairs."""
    s, y = _pair_scores_labels(scores, adjacency)
    return auc_from_pairs(s, y)


def average_precision_from_pairs(scores: np.ndarray, labels: np.ndarray) -> float:
    """Step-interpolated AP: sum (R_k - R_{k-1}) P_k in descending score order.

    Ties break by stable index order (lower pair index ranked first).
    """
    labels = np.asarray(labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise MetricError("AP needs at least one positive")
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    hits = labels[order] == 1
    tp = np.cumsum(hits)
    ranks = np.arange(1, len(labels) + 1)
    precision = tp / ranks
    return float(precision[hits].sum() / n_pos)


def average_precision(scores: np.ndarray, adjacency: np.ndarray) -> float:
    s, y = _pair_scores_labels(scores, adjacency)
    return average_precision_from_pairs(s, y)


def evaluate_scores(
    scores: np.ndarray,
    adjacency: np.ndarray,
    attack: str,
    observed: np.ndarray | None = None,
) -> ReconResult:
    """Package scores with AUC/AP and, when an observed node set is supplied,
    partition-stratified AUCs (SS / SU / UU by endpoint membership)."""
    result = ReconResult(
        scores=scores,
        attack=attack,
        auc=auc(scores, adjacency),
        ap=average_precision(scores, adjacency),
    )
    if observed is not None:
        n = scores.shape[0]
        inside = np.zeros(n, dtype=bool)
        inside[np.asarray(observed, dtype=np.int64)] = True
        iu, ju = np.triu_indices(n, k=1)
        s = np.asarray(scores)[iu, ju]
        y = (np.asarray(adjacency)[iu, ju] > 0).astype(np.int64)
        count = inside[iu].astype(int) + inside[ju].astype(int)
        for name, want in (("ss", 2), ("su", 1), ("uu", 0)):
            mask = count == want
            try:
                result.partition_aucs[name] = auc_from_pairs(s[mask], y[mask])
            except MetricError:
                result.partition_aucs[name] = float("nan")
        result.notes["tie_count"] = int(len(s) - len(np.unique(s)))
    return result
