import numpy as np
import pytest

from curvmix.optim import ParamStore, adam_step


def _store(rng):
    return ParamStore({"w": rng.standard_normal((3, 2)), "b": rng.standard_normal(2)})


class TestParamStore:
    def test_vectors_become_rows(self, rng):
        assert _store(rng)["b"].shape == (1, 2)

    def test_duplicate_rejected(self):
        s = ParamStore({"a": np.zeros((1, 1))})
        with pytest.raises(ValueError):
            s.add("a", np.zeros((1, 1)))

    def test_snapshot_is_a_copy(self, rng):
        s = _store(rng)
        snap = s.snapshot()
        s["w"][0, 0] += 1.0
        assert snap["w"][0, 0] != s["w"][0, 0]
        s.load_snapshot(snap)
        assert np.array_equal(s["w"], snap["w"])

    def test_save_load_round_trip(self, rng, tmp_path):
        s = _store(rng)
        adam_step(s, {"w": np.ones((3, 2)), "b": np.ones((1, 2))}, lr=0.1)
        s.save(tmp_path / "p.npz")
        t = ParamStore.load(tmp_path / "p.npz")
        assert t.step == 1
        for name in s.names():
            assert np.array_equal(s[name], t[name])
            assert np.array_equal(s.m[name], t.m[name])
            assert np.array_equal(s.v[name], t.v[name])


class TestAdam:
    def test_zero_gradient_leaves_parameters(self, rng):
        s = _store(rng)
        before = s.snapshot()
        adam_step(s, {k: np.zeros_like(v) for k, v in before.items()}, lr=0.01)
        for k in before:
            assert np.array_equal(before[k], s[k])

    def test_first_step_magnitude_is_lr(self, rng):
        s = _store(rng)
        before = s.snapshot()
        g = {k: rng.standard_normal(v.shape) for k, v in before.items()}
        adam_step(s, g, lr=0.01)
        for k in before:
            step = before[k] - s[k]
            assert np.allclose(np.abs(step), 0.01, rtol=1e-5)
            assert np.all(np.sign(step) == np.sign(g[k]))

    def test_weight_decay_is_decoupled(self):
        s = ParamStore({"a": np.array([[2.0]])})
        adam_step(s, {"a": np.zeros((1, 1))}, lr=0.1, weight_decay=0.5)
        # no gradient contribution, so only the multiplicative shrink applies
        assert s["a"][0, 0] == pytest.approx(2.0 * (1 - 0.1 * 0.5))

    def test_minimises_a_quadratic(self):
        s = ParamStore({"x": np.array([[5.0, -3.0]])})
        for _ in range(2000):
            adam_step(s, {"x": 2 * s["x"]}, lr=0.05)
        assert np.max(np.abs(s["x"])) < 1e-2

    def test_deterministic(self, rng):
        seq = [np.random.default_rng(i).standard_normal((3, 2)) for i in range(5)]
        out = []
        for _ in range(2):
            s = ParamStore({"w": np.ones((3, 2))})
            for g in seq:
                adam_step(s, {"w": g}, lr=0.01, weight_decay=1e-3)
            out.append(s["w"].copy())
        assert np.array_equal(out[0], out[1])

    def test_shape_mismatch(self):
        s = ParamStore({"a": np.zeros((2, 2))})
        with pytest.raises(ValueError):
            adam_step(s, {"a": np.zeros((1, 2))}, lr=0.1)

    def test_non_positive_lr(self):
        with pytest.raises(ValueError):
            adam_step(ParamStore(), {}, lr=0.0)
