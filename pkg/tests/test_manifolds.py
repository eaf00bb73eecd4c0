import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from curvmix.manifolds import (
    EUCLIDEAN,
    POINCARE,
    SPHERE,
    ManifoldDomainError,
    ManifoldSpec,
    exp_origin,
    geodesic_distance,
    log_origin,
    project_to_manifold,
    vjp_exp_origin,
    vjp_log_origin,
)

GEOMETRIES = [EUCLIDEAN, POINCARE, SPHERE, ManifoldSpec("hyperbolic", 2.5), ManifoldSpec("spherical", 0.25)]


def tangents(rng, n, d, max_norm):
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True) * rng.uniform(0, max_norm, (n, 1))


def injective_radius(spec):
    if spec.kind == "hyperbolic":
        return 1.0 / math.sqrt(spec.c)
    if spec.kind == "spherical":
        return (math.pi - 0.1) * spec.radius
    return 5.0


class TestExpLog:
    def test_zero_maps_to_origin(self):
        z = np.zeros((2, 3))
        assert np.array_equal(exp_origin(POINCARE, z), z)
        assert np.array_equal(exp_origin(SPHERE, z), SPHERE.origin(2, 3))

    def test_ball_norm_closed_form(self):
        v = np.array([[0.3, 0.4]])
        assert abs(np.linalg.norm(exp_origin(POINCARE, v)) - 0.46212) < 1e-5

    def test_sphere_half_circle_is_antipode(self):
        x = exp_origin(SPHERE, np.array([[math.pi, 0.0]]))
        assert np.allclose(x, [[-1.0, 0.0, 0.0]], atol=1e-15)

    def test_log_of_origin_is_zero(self):
        assert np.array_equal(log_origin(POINCARE, np.zeros((1, 3))), np.zeros((1, 3)))
        assert np.array_equal(log_origin(SPHERE, SPHERE.origin(1, 3)), np.zeros((1, 3)))

    def test_euclidean_identity(self, rng):
        v = rng.standard_normal((4, 3))
        assert np.array_equal(exp_origin(EUCLIDEAN, v), v)
        assert np.array_equal(log_origin(EUCLIDEAN, v), v)

    @pytest.mark.parametrize("spec", GEOMETRIES, ids=lambda s: f"{s.kind}-{s.c}")
    def test_round_trip_1000(self, spec, rng):
        r = injective_radius(spec)
        max_norm = 1.0 if spec.kind == "hyperbolic" else r
        v = tangents(rng, 1000, 4, max_norm)
        assert np.max(np.abs(log_origin(spec, exp_origin(spec, v)) - v)) < 1e-9
        x = exp_origin(spec, v)
        assert np.all(spec.contains(x))
        assert np.max(np.abs(exp_origin(spec, log_origin(spec, x)) - x)) < 1e-9

    def test_sphere_cut_locus(self):
        with pytest.raises(ManifoldDomainError, match="cut locus"):
            log_origin(SPHERE, np.array([[-1.0, 0.0]]))

    def test_outside_ball(self):
        with pytest.raises(ManifoldDomainError, match="outside ball"):
            log_origin(POINCARE, np.array([[1.0, 0.0]]))

    def test_non_finite_rejected(self):
        with pytest.raises(ManifoldDomainError):
            exp_origin(POINCARE, np.array([[np.nan, 0.0]]))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 4), elements=st.floats(-1e-6, 1e-6)))
    def test_tiny_tangents_stable(self, v):
        for spec in (POINCARE, SPHERE):
            assert np.allclose(log_origin(spec, exp_origin(spec, v)), v, atol=1e-20, rtol=1e-9)


class TestDistance:
    def test_zero_self_distance(self, rng):
        for spec in GEOMETRIES:
            x = exp_origin(spec, tangents(rng, 20, 3, 1.0))
            assert np.allclose(geodesic_distance(spec, x, x), 0.0, atol=1e-12)

    def test_ball_from_origin(self):
        d = geodesic_distance(POINCARE, np.zeros((1, 2)), np.array([[0.5, 0.0]]))
        assert abs(d[0] - 1.09861) < 1e-5

    def test_sphere_quarter(self):
        d = geodesic_distance(SPHERE, np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
        assert abs(d[0] - math.pi / 2) < 1e-15

    @pytest.mark.parametrize("spec", GEOMETRIES, ids=lambda s: f"{s.kind}-{s.c}")
    def test_axioms_1000_triples(self, spec, rng):
        r = injective_radius(spec)
        pts = [exp_origin(spec, tangents(rng, 1000, 3, 0.9 * r)) for _ in range(3)]
        x, y, z = pts
        dxy = geodesic_distance(spec, x, y)
        assert np.allclose(dxy, geodesic_distance(spec, y, x), rtol=0, atol=1e-12)
        assert np.all(dxy >= 0)
        assert np.all(geodesic_distance(spec, x, z) <= dxy + geodesic_distance(spec, y, z) + 1e-9)

    @pytest.mark.parametrize("spec", [POINCARE, SPHERE, ManifoldSpec("spherical", 4.0)], ids=str)
    def test_log_norm_is_distance_to_origin(self, spec, rng):
        x = exp_origin(spec, tangents(rng, 200, 3, 0.9 * injective_radius(spec)))
        o = spec.origin(200, 3)
        # the ball metric has conformal factor 2 at the origin, so tangent norms are half the distance
        scale = 2.0 if spec.kind == "hyperbolic" else 1.0
        assert np.allclose(scale * np.linalg.norm(log_origin(spec, x), axis=1), geodesic_distance(spec, o, x), atol=1e-9)

    def test_small_curvature_limit(self):
        rng = np.random.default_rng(3)
        v, w = tangents(rng, 10, 3, 0.5), tangents(rng, 10, 3, 0.5)
        euclid = np.linalg.norm(v - w, axis=1)
        for kind in ("hyperbolic", "spherical"):
            errs = []
            for c in (1e-2, 1e-4):
                spec = ManifoldSpec(kind, c)
                d = geodesic_distance(spec, exp_origin(spec, v), exp_origin(spec, w))
                errs.append(np.max(np.abs(d - euclid)))
            assert errs[1] < errs[0]


class TestProjection:
    def test_ball_clamp(self):
        x = project_to_manifold(POINCARE, np.array([[2.0, 0.0]]))
        assert abs(np.linalg.norm(x) - (1 - 1e-5)) < 1e-15

    def test_sphere_normalize(self):
        assert np.array_equal(project_to_manifold(SPHERE, np.array([[2.0, 0.0, 0.0]])), [[1.0, 0.0, 0.0]])

    def test_zero_sphere_row_to_origin(self):
        assert np.array_equal(project_to_manifold(SPHERE, np.zeros((1, 3))), SPHERE.origin(1, 2))

    def test_in_domain_unchanged(self):
        x = np.array([[0.1, 0.2]])
        assert np.array_equal(project_to_manifold(POINCARE, x), x)


def fd_vjp(f, x, g, h=1e-5):
    out = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        out[idx] = np.sum(g * (f(xp) - f(xm))) / (2 * h)
    return out


class TestVJP:
    def test_euclidean_pass_through(self, rng):
        g = rng.standard_normal((3, 2))
        assert np.array_equal(vjp_exp_origin(EUCLIDEAN, g, g), g)

    def test_ball_identity_at_zero(self, rng):
        g = rng.standard_normal((3, 2))
        assert np.allclose(vjp_exp_origin(POINCARE, np.zeros((3, 2)), g), g)
        assert np.allclose(vjp_log_origin(POINCARE, np.zeros((3, 2)), g), g)

    @pytest.mark.parametrize("spec", [POINCARE, SPHERE, ManifoldSpec("hyperbolic", 3.0), ManifoldSpec("spherical", 0.5)], ids=str)
    def test_fd_agreement_100_probes(self, spec, rng):
        r = injective_radius(spec)
        for _ in range(100):
            v = tangents(rng, 1, 3, 0.95 * r if spec.kind == "spherical" else 2.0 * r)
            g_out = rng.standard_normal((1, spec.ambient_dim(3)))
            a = vjp_exp_origin(spec, v, g_out)
            n = fd_vjp(lambda t: exp_origin(spec, t), v, g_out)
            assert np.linalg.norm(a - n) <= 1e-4 * max(np.linalg.norm(n), 1e-8)
            x = exp_origin(spec, tangents(rng, 1, 3, 0.9 * r))
            g_in = rng.standard_normal((1, 3))
            a = vjp_log_origin(spec, x, g_in)
            n = fd_vjp(lambda p: log_origin(spec, p), x, g_in, h=1e-7)
            assert np.linalg.norm(a - n) <= 1e-4 * max(np.linalg.norm(n), 1e-8)
