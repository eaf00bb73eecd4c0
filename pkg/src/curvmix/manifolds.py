"""Origin-anchored exponential/logarithmic maps, geodesic distances and
projections on Euclidean space, the Poincare ball and the sphere.

Spherical points live in R^(d+1) with basepoint ``o = r e_0``; their
tangent vectors are the d coordinates along ``e_1 .. e_d``, so every
geometry exchanges N x d tangent batches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("euclidean", "hyperbolic", "spherical")
_SERIES_CUTOFF = 1e-2


class ManifoldDomainError(ValueError):
    pass


@dataclass(frozen=True)
class ManifoldSpec:
    kind: str = "euclidean"
    c: float = 1.0
    tol: float = 1e-7

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown manifold kind {self.kind!r}")
        if self.kind != "euclidean" and not self.c > 0:
            raise ValueError("curvature magnitude must be positive")

    @property
    def radius(self) -> float:
        return 1.0 / np.sqrt(self.c)

    def ambient_dim(self, d: int) -> int:
        return d + 1 if self.kind == "spherical" else d

    def origin(self, n: int, d: int) -> np.ndarray:
        out = np.zeros((n, self.ambient_dim(d)))
        if self.kind == "spherical":
            out[:, 0] = self.radius
        return out

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        norms = np.linalg.norm(x, axis=1)
        if self.kind == "hyperbolic":
            return norms < self.radius
        if self.kind == "spherical":
            return np.abs(norms - self.radius) <= self.tol
        return np.all(np.isfinite(x), axis=1)


EUCLIDEAN = ManifoldSpec("euclidean")
POINCARE = ManifoldSpec("hyperbolic", 1.0)
SPHERE = ManifoldSpec("spherical", 1.0)


def _finite(x: np.ndarray, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{what} must be a 2-D batch")
    if not np.all(np.isfinite(x)):
        raise ManifoldDomainError(f"non-finite {what}")
    return x


# Scalar helpers evaluated with short Taylor series near zero, where the
# closed forms cancel catastrophically.


def _tanh_ratio(z):
    """tanh(z)/z and (d/dz[tanh(z)/z])/z."""
    z = np.asarray(z, dtype=np.float64)
    small = z < _SERIES_CUTOFF
    zs = np.where(small, 1.0, z)
    t = np.tanh(zs)
    f = np.where(small, 1 - z**2 / 3 + 2 * z**4 / 15, t / zs)
    df = np.where(small, -2 / 3 + 8 * z**2 / 15 - 34 * z**4 / 105, (zs * (1 - t**2) - t) / zs**3)
    return f, df


def _artanh_ratio(z):
    """artanh(z)/z and (d/dz[artanh(z)/z])/z."""
    z = np.asarray(z, dtype=np.float64)
    small = z < _SERIES_CUTOFF
    zs = np.where(small, 0.5, z)
    a = np.arctanh(zs)
    f = np.where(small, 1 + z**2 / 3 + z**4 / 5, a / zs)
    df = np.where(small, 2 / 3 + 4 * z**2 / 5 + 6 * z**4 / 7, (zs / (1 - zs**2) - a) / zs**3)
    return f, df


def _sinc(z):
    """sin(z)/z and (d/dz[sin(z)/z])/z."""
    z = np.asarray(z, dtype=np.float64)
    small = z < _SERIES_CUTOFF
    zs = np.where(small, 1.0, z)
    s, c = np.sin(zs), np.cos(zs)
    f = np.where(small, 1 - z**2 / 6 + z**4 / 120, s / zs)
    df = np.where(small, -1 / 3 + z**2 / 30 - z**4 / 840, (zs * c - s) / zs**3)
    return f, df


def exp_origin(spec: ManifoldSpec, v) -> np.ndarray:
    v = _finite(v, "tangent batch")
    if spec.kind == "euclidean":
        return v.copy()
    n = np.linalg.norm(v, axis=1, keepdims=True)
    if spec.kind == "hyperbolic":
        s = np.sqrt(spec.c)
        f, _ = _tanh_ratio(s * n)
        return f * v
    r = spec.radius
    z = n / r
    f, _ = _sinc(z)
    return np.concatenate([r * np.cos(z), f * v], axis=1)


def log_origin(spec: ManifoldSpec, x) -> np.ndarray:
    x = _finite(x, "point batch")
    if spec.kind == "euclidean":
        return x.copy()
    if spec.kind == "hyperbolic":
        s = np.sqrt(spec.c)
        n = np.linalg.norm(x, axis=1, keepdims=True)
        if np.any(s * n >= 1.0):
            raise ManifoldDomainError("point outside ball")
        f, _ = _artanh_ratio(s * n)
        return f * x
    r = spec.radius
    x0, y = x[:, :1], x[:, 1:]
    rho = np.linalg.norm(y, axis=1, keepdims=True)
    if np.any((x0 < 0) & (rho <= 1e-12 * r)):
        raise ManifoldDomainError("log undefined at cut locus")
    theta = np.arctan2(rho, x0)
    q = _theta_over_rho(x0, rho, theta)
    return r * q * y


def _theta_over_rho(x0, rho, theta):
    small = (rho < _SERIES_CUTOFF * np.abs(x0)) & (x0 > 0)
    x0s = np.where(small, x0, 1.0)
    rs = np.where(small, 1.0, rho)
    t = rho / x0s
    series = (1 - t**2 / 3 + t**4 / 5) / x0s
    return np.where(small, series, theta / rs)


def _d_theta_over_rho(x0, rho, theta):
    """(d/drho[theta/rho]) / rho with theta = atan2(rho, x0)."""
    small = (rho < _SERIES_CUTOFF * np.abs(x0)) & (x0 > 0)
    x0s = np.where(small, x0, 1.0)
    rs = np.where(small, 1.0, rho)
    series = -2 / (3 * x0s**3) + 4 * rho**2 / (5 * x0s**5)
    closed = (x0 * rs / (x0**2 + rs**2) - theta) / rs**3
    return np.where(small, series, closed)


def vjp_exp_origin(spec: ManifoldSpec, v, g) -> np.ndarray:
    """Cotangent of ``exp_origin`` at tangent ``v`` for upstream ``g``."""
    v = _finite(v, "tangent batch")
    g = np.asarray(g, dtype=np.float64)
    if spec.kind == "euclidean":
        return g.copy()
    n = np.linalg.norm(v, axis=1, keepdims=True)
    if spec.kind == "hyperbolic":
        s = np.sqrt(spec.c)
        f, df = _tanh_ratio(s * n)
        # d/dv[f(s|v|) v] = f I + s^2 (f'(z)/z) v v^T
        return f * g + s**2 * df * np.sum(v * g, axis=1, keepdims=True) * v
    r = spec.radius
    z = n / r
    f, df = _sinc(z)
    g0, gy = g[:, :1], g[:, 1:]
    # x0 = r cos(|v|/r): dx0/dv = -sinc(z) v / r
    return -g0 * f * v / r + f * gy + df / r**2 * np.sum(v * gy, axis=1, keepdims=True) * v


def vjp_log_origin(spec: ManifoldSpec, x, g) -> np.ndarray:
    """Cotangent of ``log_origin`` at point ``x`` for upstream ``g``."""
    x = _finite(x, "point batch")
    g = np.asarray(g, dtype=np.float64)
    if spec.kind == "euclidean":
        return g.copy()
    if spec.kind == "hyperbolic":
        s = np.sqrt(spec.c)
        n = np.linalg.norm(x, axis=1, keepdims=True)
        if np.any(s * n >= 1.0):
            raise ManifoldDomainError("point outside ball")
        f, df = _artanh_ratio(s * n)
        return f * g + s**2 * df * np.sum(x * g, axis=1, keepdims=True) * x
    r = spec.radius
    x0, y = x[:, :1], x[:, 1:]
    rho = np.linalg.norm(y, axis=1, keepdims=True)
    if np.any((x0 < 0) & (rho <= 1e-6 * r)):
        raise ManifoldDomainError("log undefined at cut locus")
    theta = np.arctan2(rho, x0)
    q = _theta_over_rho(x0, rho, theta)
    dq = _d_theta_over_rho(x0, rho, theta)
    w = np.sum(y * g, axis=1, keepdims=True)
    # theta depends on x0 through d theta / d x0 = -rho / (x0^2 + rho^2)
    g0 = -r * w / (x0**2 + rho**2)
    gy = r * q * g + r * dq * w * y
    return np.concatenate([g0, gy], axis=1)


def mobius_add(x: np.ndarray, y: np.ndarray, c: float) -> np.ndarray:
    xy = np.sum(x * y, axis=1, keepdims=True)
    x2 = np.sum(x * x, axis=1, keepdims=True)
    y2 = np.sum(y * y, axis=1, keepdims=True)
    num = (1 + 2 * c * xy + c * y2) * x + (1 - c * x2) * y
    den = 1 + 2 * c * xy + c**2 * x2 * y2
    return num / den


def geodesic_distance(spec: ManifoldSpec, x, y) -> np.ndarray:
    x = _finite(x, "point batch")
    y = _finite(y, "point batch")
    if spec.kind == "euclidean":
        return np.linalg.norm(x - y, axis=1)
    if spec.kind == "hyperbolic":
        s = np.sqrt(spec.c)
        diff = mobius_add(-x, y, spec.c)
        z = np.clip(s * np.linalg.norm(diff, axis=1), 0.0, 1.0 - 1e-16)
        return 2.0 / s * np.arctanh(z)
    r = spec.radius
    # atan2 form is better conditioned than arccos for nearby points
    cross = np.linalg.norm(x[:, :, None] * y[:, None, :] - y[:, :, None] * x[:, None, :], axis=(1, 2)) / np.sqrt(2)
    dot = np.sum(x * y, axis=1)
    return r * np.arctan2(cross, dot)


def project_to_manifold(spec: ManifoldSpec, x) -> np.ndarray:
    x = _finite(x, "raw batch")
    if spec.kind == "euclidean":
        return x.copy()
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if spec.kind == "hyperbolic":
        shell = (1.0 - 1e-5) * spec.radius
        scale = np.where(norms >= shell, shell / np.where(norms > 0, norms, 1.0), 1.0)
        return x * scale
    out = np.where(norms > 0, x * spec.radius / np.where(norms > 0, norms, 1.0), 0.0)
    zero = norms[:, 0] == 0
    out[zero] = spec.origin(int(zero.sum()), x.shape[1] - 1)
    return out
