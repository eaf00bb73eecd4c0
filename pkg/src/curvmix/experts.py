"""Two-layer tangent-space graph convolution experts, one per geometry."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .manifolds import ManifoldSpec, POINCARE, SPHERE, EUCLIDEAN, project_to_manifold

EXPERT_KEYS = ("E", "H", "S")
DEFAULT_MANIFOLDS = {"E": EUCLIDEAN, "H": POINCARE, "S": SPHERE}

SPHERE_MARGIN = 1e-3
# tanh(6) is 1 - 1.2e-5 from the ball boundary; beyond that log(exp(v))
# loses more than 1e-9 to rounding.
BALL_TANGENT_LIMIT = 6.0


@dataclass(frozen=True, eq=False)
class ExpertParams:
    """Weights are ndarrays at rest and Tensors once bound to a tape."""

    W1: object
    b1: object
    W2: object
    b2: object
    manifold: ManifoldSpec = EUCLIDEAN

    def as_dict(self) -> dict:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def bind(self, tape, prefix: str) -> "ExpertParams":
        return replace(self, **{k: tape.param(prefix + k, v) for k, v in self.as_dict().items()})


@dataclass(frozen=True, eq=False)
class ExpertOutput:
    tangent: ad.Tensor
    on_manifold: ad.Tensor
    manifold: ManifoldSpec


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(seed: int, d: int, h: int, h_out: int, manifold: ManifoldSpec = EUCLIDEAN) -> ExpertParams:
    if min(d, h, h_out) < 1:
        raise ValueError("dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    W1 = glorot(rng, d, h)
    W2 = glorot(rng, h, h_out)
    return ExpertParams(W1, np.zeros((1, h)), W2, np.zeros((1, h_out)), manifold)


def _tangent_limit(spec: ManifoldSpec):
    if spec.kind == "spherical":
        return np.pi * spec.radius - SPHERE_MARGIN
    if spec.kind == "hyperbolic":
        return BALL_TANGENT_LIMIT / np.sqrt(spec.c)
    return None


def expert_forward(params: ExpertParams, adj, X) -> ExpertOutput:
    """Z = A relu(A X W1 + b1) W2 + b2, mapped onto the expert's manifold.

    The returned tangent field is ``log_o(exp_o(Z))`` after norm clipping,
    so gradients pass through both maps.
    """
    X = X if isinstance(X, ad.Tensor) else ad.Tensor(X)
    if X.shape[1] != np.shape(_value(params.W1))[0]:
        raise ValueError(f"feature width {X.shape[1]} does not match W1 {np.shape(_value(params.W1))}")
    hidden = ad.relu(ad.add(ad.sparse_matmul(adj, ad.matmul(X, params.W1)), params.b1))
    z = ad.add(ad.sparse_matmul(adj, ad.matmul(hidden, params.W2)), params.b2)
    spec = params.manifold
    if spec.kind == "euclidean":
        return ExpertOutput(z, z, spec)
    z = ad.clip_row_norm(z, _tangent_limit(spec))
    point = ad.exp_origin(spec, z)
    return ExpertOutput(ad.log_origin(spec, point), point, spec)


def _value(x):
    return x.value if isinstance(x, ad.Tensor) else x


def audit_membership(out: ExpertOutput) -> bool:
    """True when every on-manifold row satisfies the manifold's constraint."""
    x = out.on_manifold.value
    return bool(np.all(out.manifold.contains(x)))


def projected(out: ExpertOutput) -> np.ndarray:
    return project_to_manifold(out.manifold, out.on_manifold.value)
