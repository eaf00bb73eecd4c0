"""Graph-aware gate, curvature-derived routing targets and tangent fusion."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import _sigmoid
from .experts import ExpertOutput, glorot


@dataclass(frozen=True, eq=False)
class GateParams:
    W_gcn: object
    W_hidden: object
    b_hidden: object
    W_out: object
    b_out: object
    temperature: float = 1.0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("gate temperature must be positive")

    def as_dict(self) -> dict:
        return {
            "W_gcn": self.W_gcn,
            "W_hidden": self.W_hidden,
            "b_hidden": self.b_hidden,
            "W_out": self.W_out,
            "b_out": self.b_out,
        }

    def bind(self, tape, prefix: str = "gate.") -> "GateParams":
        return replace(self, **{k: tape.param(prefix + k, v) for k, v in self.as_dict().items()})


def init_gate(seed: int, d: int, h_g: int = 16, temperature: float = 1.0) -> GateParams:
    rng = np.random.default_rng(seed)
    return GateParams(
        glorot(rng, d, h_g),
        glorot(rng, h_g, h_g),
        np.zeros((1, h_g)),
        glorot(rng, h_g, 3),
        np.zeros((1, 3)),
        temperature,
    )


def gate_logits(params: GateParams, adj, X) -> ad.Tensor:
    X = X if isinstance(X, ad.Tensor) else ad.Tensor(X)
    x_agg = ad.sparse_matmul(adj, ad.matmul(X, params.W_gcn))
    hidden = ad.relu(ad.add(ad.matmul(x_agg, params.W_hidden), params.b_hidden))
    return ad.add(ad.matmul(hidden, params.W_out), params.b_out)


def gate_forward(params: GateParams, adj, X, experts: Sequence[int] = (0, 1, 2)) -> ad.Tensor:
    """Routing weights over the given expert columns (E=0, H=1, S=2)."""
    logits = gate_logits(params, adj, X)
    if tuple(experts) != (0, 1, 2):
        logits = ad.select_cols(logits, list(experts))
    return ad.row_softmax(logits, params.temperature)


def unnormalized_targets(node_curvature, theta: float, eta: float) -> np.ndarray:
    k = np.asarray(node_curvature, dtype=np.float64).reshape(-1, 1)
    return np.concatenate(
        [
            _sigmoid((theta - np.abs(k)) / eta),
            _sigmoid((-k - theta) / eta),
            _sigmoid((k - theta) / eta),
        ],
        axis=1,
    )


def target_weights(node_curvature, theta: float, eta: float) -> np.ndarray:
    """Row-normalized (E, H, S) routing targets from node curvature."""
    if not theta > 0 or not eta > 0:
        raise ValueError("theta and eta must be positive")
    raw = unnormalized_targets(node_curvature, theta, eta)
    return raw / raw.sum(axis=1, keepdims=True)


def fuse(gate: ad.Tensor, experts: Sequence[ExpertOutput]) -> ad.Tensor:
    """Gate-weighted sum of the experts' tangent fields."""
    if gate.shape[1] != len(experts):
        raise ValueError(f"gate has {gate.shape[1]} columns for {len(experts)} experts")
    fused = None
    for m, out in enumerate(experts):
        if out.tangent.shape[0] != gate.shape[0]:
            raise ValueError("expert and gate row counts differ")
        term = ad.mul(ad.select_cols(gate, [m]), out.tangent)
        fused = term if fused is None else ad.add(fused, term)
    return fused

