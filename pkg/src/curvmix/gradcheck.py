"""Central finite-difference audit of every differentiable op.

Each probe builds a scalar ``sum(R * f(inputs))`` with a fixed random
weighting ``R``, differentiates it on a tape and compares against central
differences of the same scalar. The relative error of a probe is
``|g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8)`` in the Frobenius norm.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .manifolds import ManifoldSpec, exp_origin as np_exp

DEFAULT_TOL = 1e-4
FD_STEP = 1e-6


@dataclass(frozen=True)
class ProbeResult:
    op: str
    shape: tuple
    rel_error: float
    passed: bool


@dataclass(frozen=True)
class GradcheckReport:
    probes: list
    seconds: float
    tol: float

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.probes)

    @property
    def failures(self) -> list:
        return [p for p in self.probes if not p.passed]

    def worst(self) -> ProbeResult:
        return max(self.probes, key=lambda p: p.rel_error)

    def summary(self) -> str:
        w = self.worst()
        ops = sorted({p.op for p in self.probes})
        status = "PASS" if self.passed else f"FAIL ({len(self.failures)} probes)"
        return (
            f"gradcheck {status}: {len(self.probes)} probes over {len(ops)} ops in {self.seconds:.2f}s; "
            f"worst {w.op} {w.shape} rel_error={w.rel_error:.2e} (tol {self.tol:g})"
        )


def check(f: Callable, inputs: Sequence[np.ndarray], rng: np.random.Generator, h: float = FD_STEP) -> float:
    """Relative error between taped and finite-difference gradients of
    ``sum(R * f(*inputs))`` with respect to every input."""
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    tape = ad.Tape()
    ts = [tape.param(f"x{i}", x) for i, x in enumerate(inputs)]
    out = f(*ts)
    weight = rng.standard_normal(out.shape)
    loss = ad.sum_all(ad.mul(out, ad.Tensor(weight)))
    grads = tape.backward(loss)

    def scalar(xs):
        return float(np.sum(weight * f(*[ad.Tensor(x) for x in xs]).value))

    num, den = 0.0, 0.0
    for i, x in enumerate(inputs):
        fd = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            plus = [y.copy() for y in inputs]
            minus = [y.copy() for y in inputs]
            plus[i][idx] += h
            minus[i][idx] -= h
            fd[idx] = (scalar(plus) - scalar(minus)) / (2 * h)
        g = grads[f"x{i}"]
        num += float(np.sum((g - fd) ** 2))
        den = max(den, float(np.sum(g * g)), float(np.sum(fd * fd)))
    return float(np.sqrt(num) / max(np.sqrt(den), 1e-8))


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin + x, x)


def _random_adjacency(rng, n):
    a = (rng.random((n, n)) < 0.4).astype(np.float64)
    a = np.triu(a, 1)
    a = a + a.T + np.eye(n)
    deg = a.sum(axis=1)
    return sp.csr_matrix(a / np.sqrt(np.outer(deg, deg)))


def _probe_builders() -> list:
    """(name, builder) pairs; ``builder(rng, n, d)`` returns (f, inputs)."""
    ball = ManifoldSpec("hyperbolic", c=1.0)
    ball2 = ManifoldSpec("hyperbolic", c=2.0)
    sphere = ManifoldSpec("spherical", c=1.0)
    sphere2 = ManifoldSpec("spherical", c=0.5)

    def tangent(rng, n, d, scale):
        v = rng.standard_normal((n, d))
        r = rng.uniform(0.2, scale, size=(n, 1))
        return v / np.linalg.norm(v, axis=1, keepdims=True) * r

    def clip_input(rng, n, d):
        # keep norms clear of the clip radius so the FD stencil stays on one branch
        v = tangent(rng, n, d, 1.0)
        v[::2] *= 3.0
        return v

    b = [
        ("add", lambda r, n, d: (ad.add, [r.standard_normal((n, d)), r.standard_normal((n, d))])),
        ("add_rowbroadcast", lambda r, n, d: (ad.add, [r.standard_normal((n, d)), r.standard_normal((1, d))])),
        ("sub", lambda r, n, d: (ad.sub, [r.standard_normal((n, d)), r.standard_normal((n, d))])),
        ("hadamard", lambda r, n, d: (ad.mul, [r.standard_normal((n, d)), r.standard_normal((n, d))])),
        ("hadamard_colbroadcast", lambda r, n, d: (ad.mul, [r.standard_normal((n, 1)), r.standard_normal((n, d))])),
        ("scalar_mul", lambda r, n, d: (lambda a: ad.scalar_mul(a, -1.7), [r.standard_normal((n, d))])),
        ("matmul", lambda r, n, d: (ad.matmul, [r.standard_normal((n, d)), r.standard_normal((d, 3))])),
        ("sparse_matmul", lambda r, n, d: ((lambda A: (lambda a: ad.sparse_matmul(A, a)))(_random_adjacency(r, n)), [r.standard_normal((n, d))])),
        ("relu", lambda r, n, d: (ad.relu, [_away_from_zero(r, (n, d))])),
        ("tanh", lambda r, n, d: (ad.tanh, [r.standard_normal((n, d))])),
        ("sigmoid", lambda r, n, d: (ad.sigmoid, [2 * r.standard_normal((n, d))])),
        ("exp", lambda r, n, d: (ad.exp, [r.standard_normal((n, d))])),
        ("log", lambda r, n, d: (ad.log, [r.uniform(0.3, 3.0, (n, d))])),
        ("row_sum", lambda r, n, d: (ad.row_sum, [r.standard_normal((n, d))])),
        ("sum_all", lambda r, n, d: (ad.sum_all, [r.standard_normal((n, d))])),
        ("mean_all", lambda r, n, d: (ad.mean_all, [r.standard_normal((n, d))])),
        ("row_softmax", lambda r, n, d: (lambda a: ad.row_softmax(a, 0.7), [r.standard_normal((n, d))])),
        ("row_logsumexp", lambda r, n, d: (ad.row_logsumexp, [r.standard_normal((n, d))])),
        ("row_log_softmax", lambda r, n, d: (ad.row_log_softmax, [r.standard_normal((n, d))])),
        ("row_l2_normalize", lambda r, n, d: (ad.row_l2_normalize, [r.standard_normal((n, d))])),
        ("cosine_similarity_rows", lambda r, n, d: (ad.cosine_similarity_rows, [r.standard_normal((n, d)), r.standard_normal((n, d))])),
        ("clip_row_norm", lambda r, n, d: (lambda a: ad.clip_row_norm(a, 1.5), [clip_input(r, n, d)])),
        ("gather_rows", lambda r, n, d: ((lambda idx: (lambda a: ad.gather_rows(a, idx)))(r.integers(0, n, size=n + 2)), [r.standard_normal((n, d))])),
        ("select_cols", lambda r, n, d: (lambda a: ad.select_cols(a, [d - 1, 0, d - 1]), [r.standard_normal((n, d))])),
        ("take_per_row", lambda r, n, d: ((lambda cols: (lambda a: ad.take_per_row(a, cols)))(r.integers(0, d, size=n)), [r.standard_normal((n, d))])),
        ("concat_cols", lambda r, n, d: (lambda a, c: ad.concat_cols([a, c, a]), [r.standard_normal((n, d)), r.standard_normal((n, 2))])),
        ("exp_origin_ball", lambda r, n, d: (lambda a: ad.exp_origin(ball, a), [tangent(r, n, d, 3.0)])),
        ("exp_origin_ball_c2", lambda r, n, d: (lambda a: ad.exp_origin(ball2, a), [tangent(r, n, d, 2.0)])),
        ("log_origin_ball", lambda r, n, d: (lambda a: ad.log_origin(ball, a), [np_exp(ball, tangent(r, n, d, 2.5))])),
        ("exp_origin_sphere", lambda r, n, d: (lambda a: ad.exp_origin(sphere, a), [tangent(r, n, d, 3.0)])),
        ("exp_origin_sphere_r2", lambda r, n, d: (lambda a: ad.exp_origin(sphere2, a), [tangent(r, n, d, 4.0)])),
        ("log_origin_sphere", lambda r, n, d: (lambda a: ad.log_origin(sphere, a), [np_exp(sphere, tangent(r, n, d, 2.8))])),
        ("exp_origin_sphere_small", lambda r, n, d: (lambda a: ad.exp_origin(sphere, a), [1e-3 * r.standard_normal((n, d))])),
        ("log_exp_sphere", lambda r, n, d: (lambda a: ad.log_origin(sphere, ad.exp_origin(sphere, a)), [tangent(r, n, d, 2.5)])),
        ("log_exp_ball", lambda r, n, d: (lambda a: ad.log_origin(ball, ad.exp_origin(ball, a)), [tangent(r, n, d, 3.0)])),
    ]
    return b


def op_names() -> list[str]:
    return [name for name, _ in _probe_builders()]


def run_gradcheck(seed: int = 0, repeats: int = 3, tol: float = DEFAULT_TOL) -> GradcheckReport:
    """Run every probe ``repeats`` times on varying shapes."""
    rng = np.random.default_rng(seed)
    shapes = [(4, 3), (5, 2), (3, 4)]
    results = []
    start = time.perf_counter()
    for name, build in _probe_builders():
        for k in range(repeats):
            n, d = shapes[k % len(shapes)]
            f, inputs = build(rng, n, d)
            err = check(f, inputs, rng)
            results.append(ProbeResult(name, (n, d), err, bool(err <= tol)))
    return GradcheckReport(results, time.perf_counter() - start, tol)
