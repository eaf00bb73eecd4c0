"""Training objectives: task cross-entropy, KL routing alignment,
curvature-aware InfoNCE with hard negatives, and their weighted sum."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .gating import unnormalized_targets

EUCLID, HYPER, SPHERE = 0, 1, 2


@dataclass(frozen=True)
class ContrastiveConfig:
    K: int = 4
    tau: float = 0.5
    theta: float = 1e-4

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("K must be >= 2")
        if not self.tau > 0:
            raise ValueError("contrastive temperature must be positive")


@dataclass(frozen=True)
class LossBreakdown:
    task: float
    align: float
    contrastive: float
    total: float
    mi_lower_bound: float


def cross_entropy(logits: ad.Tensor, labels, mask) -> ad.Tensor:
    """Mean softmax cross-entropy over the masked rows."""
    idx = np.flatnonzero(np.asarray(mask, dtype=bool))
    if len(idx) == 0:
        raise ValueError("empty mask")
    rows = ad.gather_rows(logits, idx)
    logp = ad.row_log_softmax(rows)
    picked = ad.take_per_row(logp, np.asarray(labels)[idx])
    return ad.scalar_mul(ad.mean_all(picked), -1.0)


def task_loss(h_fused: ad.Tensor, W, b, labels, mask) -> ad.Tensor:
    return cross_entropy(ad.add(ad.matmul(h_fused, W), b), labels, mask)


def align_loss(target: np.ndarray, gate: ad.Tensor) -> ad.Tensor:
    """Mean over nodes of KL(target || gate); targets are constants."""
    target = np.asarray(target, dtype=np.float64)
    if target.shape != gate.shape:
        raise ValueError(f"target {target.shape} and gate {gate.shape} differ")
    entropy_part = np.sum(target * np.log(target + ad.LOG_FLOOR), axis=1, keepdims=True)
    cross = ad.row_sum(ad.mul(ad.Tensor(target), ad.log(gate)))
    return ad.mean_all(ad.sub(ad.Tensor(entropy_part), cross))


def region_index(node_curvature, theta: float) -> np.ndarray:
    """0 where |k| <= theta, 1 where k < -theta, 2 where k > theta."""
    k = np.asarray(node_curvature, dtype=np.float64)
    out = np.full(len(k), EUCLID, dtype=np.int64)
    out[k < -theta] = HYPER
    out[k > theta] = SPHERE
    return out


def positive_choice(node_curvature, theta: float, enabled: Sequence[int] = (0, 1, 2), eta: float = 0.05) -> np.ndarray:
    """Column (within ``enabled``) of each node's positive expert.

    With all experts enabled this is the region rule. When the region's
    expert is disabled, the enabled expert with the largest raw target
    weight stands in.
    """
    enabled = list(enabled)
    region = region_index(node_curvature, theta)
    raw = unnormalized_targets(node_curvature, theta, eta)[:, enabled]
    pos = {e: i for i, e in enumerate(enabled)}
    fallback = np.argmax(raw, axis=1)
    return np.array([pos.get(int(r), int(f)) for r, f in zip(region, fallback)], dtype=np.int64)


def select_rows(tangents: Sequence[ad.Tensor], choice: np.ndarray) -> ad.Tensor:
    out = None
    for m, t in enumerate(tangents):
        mask = (choice == m).astype(np.float64)[:, None]
        if not mask.any():
            continue
        term = ad.mul(ad.Tensor(mask), t)
        out = term if out is None else ad.add(out, term)
    if out is None:
        out = ad.Tensor(np.zeros(tangents[0].shape))
    return out


def select_positive(node_curvature, theta: float, tangents: Sequence[ad.Tensor], enabled=(0, 1, 2)) -> ad.Tensor:
    """Per node, the tangent row of the curvature-matched expert."""
    return select_rows(tangents, positive_choice(node_curvature, theta, enabled))


def intra_negatives(choice: np.ndarray, tangents: Sequence[ad.Tensor]) -> list[ad.Tensor]:
    """The non-selected experts' tangent rows, one tensor per slot."""
    k = len(tangents)
    out = []
    for slot in range(k - 1):
        # slot-th expert in ascending order after skipping the chosen one
        col = np.array([[m for m in range(k) if m != c][slot] for c in choice], dtype=np.int64)
        out.append(select_rows(tangents, col))
    return out


def mine_negatives(positives: np.ndarray, fused: np.ndarray, n_inter: int) -> np.ndarray:
    """Indices of the ``n_inter`` other nodes whose fused rows are most
    cosine-similar to each node's positive; ties go to the smaller id."""
    n = fused.shape[0]
    if n_inter > n - 1:
        warnings.warn(f"only {n - 1} other nodes available; mining {n - 1} hard negatives instead of {n_inter}")
        n_inter = n - 1
    if n_inter <= 0:
        return np.zeros((n, 0), dtype=np.int64)
    p = _unit_rows(positives)
    f = _unit_rows(fused)
    sim = p @ f.T
    np.fill_diagonal(sim, -np.inf)
    order = np.argsort(-sim, axis=1, kind="stable")
    return order[:, :n_inter]


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.where(norms > 1e-12, x / np.where(norms > 1e-12, norms, 1.0), 0.0)


def contrastive_loss(
    h_fused: ad.Tensor,
    positives: ad.Tensor,
    negatives: Sequence[ad.Tensor],
    tau: float,
    inter_index: np.ndarray | None = None,
) -> ad.Tensor:
    """InfoNCE over cosine similarities.

    ``negatives`` are N x d tensors aligned with the nodes; ``inter_index``
    (N x J) adds rows of ``h_fused`` itself as further negatives.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    fn = ad.row_l2_normalize(h_fused)
    sims = [ad.row_sum(ad.mul(fn, ad.row_l2_normalize(positives)))]
    for neg in negatives:
        sims.append(ad.row_sum(ad.mul(fn, ad.row_l2_normalize(neg))))
    if inter_index is not None:
        for j in range(inter_index.shape[1]):
            sims.append(ad.row_sum(ad.mul(fn, ad.gather_rows(fn, inter_index[:, j]))))
    logits = ad.scalar_mul(ad.concat_cols(sims), 1.0 / tau)
    lse = ad.row_logsumexp(logits)
    return ad.mean_all(ad.sub(lse, ad.select_cols(logits, [0])))


def total_loss(task, align, contrastive, alpha: float, beta: float, gamma: float) -> ad.Tensor:
    if min(alpha, beta, gamma) < 0:
        raise ValueError("loss weights must be non-negative")
    out = ad.scalar_mul(task, alpha)
    if align is not None:
        out = ad.add(out, ad.scalar_mul(align, beta))
    if contrastive is not None:
        out = ad.add(out, ad.scalar_mul(contrastive, gamma))
    return out


def mi_lower_bound(contrastive: float, K: int) -> float:
    if K < 1:
        raise ValueError("K must be >= 1")
    return math.log(K + 1) - contrastive
