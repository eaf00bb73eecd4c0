"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py`` (the lines are printed in the
terminal summary) or directly with ``python3 tests/test_acceptance.py``.
Thresholds and time budgets are checked exactly as stated; a criterion that
misses its target fails.
"""

import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import complete_graph, path_graph, random_connected_graph  # noqa: E402
from oracles import lp_transport_cost, orc_oracle  # noqa: E402
from curvmix.curvature import CurvatureConfig, compute_all, edge_orc, jaccard_curvature, jost_liu_bound  # noqa: E402
from curvmix.gating import target_weights  # noqa: E402
from curvmix.gradcheck import run_gradcheck  # noqa: E402
from curvmix.graph import SyntheticSpec, generate_synthetic  # noqa: E402
from curvmix.manifolds import EUCLIDEAN, POINCARE, SPHERE, exp_origin, geodesic_distance, log_origin  # noqa: E402
from curvmix.transport import wasserstein_exact  # noqa: E402
from curvmix.trainer import (  # noqa: E402
    ABLATION_VARIANTS,
    TrainConfig,
    ablate,
    gating_consistency_report,
    summarize_ablation,
    train,
)

RESULTS: dict = {}

# Mixed grid + tree + clique-ring graph (299 nodes). The default noise level
# of 0.5 puts every variant at 100% test accuracy, so the trend experiments
# use sigma = 1.0. The graph is fixed; seeds vary parameter initialization.
ACCEPTANCE_GRAPH = SyntheticSpec(kind="mixed", feature_noise_sigma=1.0, seed=0)
SEEDS = [0, 1, 2, 3, 4]


def record(n: int, passed: bool, detail: str) -> None:
    RESULTS[n] = (bool(passed), detail)
    print(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


def report_lines() -> list:
    return [f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {d}" for n, (ok, d) in sorted(RESULTS.items())]


def rational_measure(rng, size):
    w = rng.integers(1, 13, size)
    return w / w.sum()


def binary_tree(depth):
    return generate_synthetic(SyntheticSpec(kind="tree", tree_branching=2, tree_depth=depth))


@pytest.fixture(scope="module")
def mixed():
    g = generate_synthetic(ACCEPTANCE_GRAPH)
    return g, compute_all(g, CurvatureConfig())


@pytest.fixture(scope="module")
def ablation(mixed):
    g, cm = mixed
    start = time.perf_counter()
    rows = ablate(g, TrainConfig(), SEEDS, tuple(ABLATION_VARIANTS), cm)
    return rows, summarize_ablation(rows), time.perf_counter() - start


def test_c01_ot_oracle_equivalence():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        n, m = rng.integers(1, 7, 2)
        a, b = rational_measure(rng, n), rational_measure(rng, m)
        c = rng.integers(0, 6, (n, m))
        worst = max(worst, abs(wasserstein_exact(a, b, c).cost - lp_transport_cost(a, b, c)))
    secs = time.perf_counter() - start
    ok = worst <= 1e-9 and secs < 10
    record(1, ok, f"200 pairs, max |exact - LP| = {worst:.2e} (tol 1e-9), {secs:.2f}s (< 10s)")
    assert ok


def test_c02_canonical_curvature():
    start = time.perf_counter()
    tree = binary_tree(3)
    # node 1 is a child of the root with one parent and two children: degree 3
    inner = next(int(v) for v in tree.neighbors(1) if v != 0 and tree.degree(int(v)) == 3)
    cases = [
        ("K3 edge", complete_graph(3), 0, 1, 0.5),
        ("P5 interior", path_graph(5), 1, 2, 0.0),
        ("tree deg-3/deg-3", tree, 1, inner, -2.0 / 3.0),
    ]
    parts, ok = [], True
    for name, g, u, v, want in cases:
        got = edge_orc(g, u, v)
        ref = orc_oracle(g.node_count, [tuple(map(int, e)) for e in g.edges()], u, v)
        good = abs(got - want) < 1e-12 and abs(ref - want) < 1e-9
        ok &= good
        parts.append(f"{name}={got:+.6f}")
    secs = time.perf_counter() - start
    ok = ok and secs < 1
    record(2, ok, f"{', '.join(parts)} (oracle agrees), {secs:.2f}s (< 1s)")
    assert ok


def test_c03_approximation_ladder():
    rng = np.random.default_rng(3)
    sink = CurvatureConfig(solver="sinkhorn", sinkhorn_epsilon=0.01, sinkhorn_iters=200)
    start = time.perf_counter()
    violations, worst_sink, t_exact, t_jac, edges = 0, 0.0, [], [], 0
    for _ in range(50):
        g, _ = random_connected_graph(rng, int(rng.integers(5, 41)))
        for u, v in g.edges():
            u, v = int(u), int(v)
            t0 = time.perf_counter()
            exact = edge_orc(g, u, v)
            t1 = time.perf_counter()
            jaccard_curvature(g, u, v)
            t2 = time.perf_counter()
            t_exact.append(t1 - t0)
            t_jac.append(t2 - t1)
            if jost_liu_bound(g, u, v) > exact + 1e-12:
                violations += 1
            worst_sink = max(worst_sink, abs(edge_orc(g, u, v, sink) - exact))
            edges += 1
    secs = time.perf_counter() - start
    speedup = float(np.median(t_exact) / np.median(t_jac))
    ok = violations == 0 and worst_sink <= 0.05 and speedup >= 10 and secs < 120
    record(
        3,
        ok,
        f"{edges} edges: Jost-Liu violations {violations}, max |Sinkhorn - exact| = {worst_sink:.2e} (<= 0.05), "
        f"Jaccard median speedup {speedup:.0f}x (>= 10x), {secs:.1f}s (< 120s)",
    )
    assert ok


def test_c04_target_monotonicity():
    start = time.perf_counter()
    theta, eta = 0.1, 0.05
    k = np.linspace(-1, 1, 2001)
    t = target_weights(k, theta, eta)
    s_region = k >= theta - 1e-12
    h_region = k <= -theta + 1e-12
    e_region = np.abs(k) <= theta + 1e-12
    bad = int(np.sum(np.diff(t[s_region, 2]) <= 0))
    bad += int(np.sum(np.diff(t[h_region, 1]) >= 0))
    # E must fall as |k| grows: check both halves of [-theta, theta] walking outwards
    ke, te = k[e_region], t[e_region, 0]
    right = ke >= 0
    left = ke <= 0
    bad += int(np.sum(np.diff(te[right]) >= 0)) + int(np.sum(np.diff(te[left][::-1]) >= 0))
    secs = time.perf_counter() - start
    ok = bad == 0 and secs < 1
    record(4, ok, f"2001-point grid, {bad} monotonicity violations, {secs:.3f}s (< 1s)")
    assert ok


def test_c05_gradient_integrity():
    report = run_gradcheck(seed=0, repeats=3, tol=1e-4)
    ok = report.passed and len(report.probes) >= 100 and report.seconds < 60
    w = report.worst()
    record(5, ok, f"{len(report.probes)} probes, worst {w.op} rel error {w.rel_error:.1e} (tol 1e-4), {report.seconds:.2f}s (< 60s)")
    assert ok


def test_c06_manifold_round_trips():
    rng = np.random.default_rng(6)
    start = time.perf_counter()
    worst, axioms_ok = 0.0, True
    limits = {"euclidean": 5.0, "hyperbolic": 3.0, "spherical": math.pi - 0.1}
    for spec in (EUCLIDEAN, POINCARE, SPHERE):
        v = rng.standard_normal((1000, 4))
        v *= rng.uniform(0, limits[spec.kind], (1000, 1)) / np.linalg.norm(v, axis=1, keepdims=True)
        x = exp_origin(spec, v)
        worst = max(worst, np.max(np.abs(log_origin(spec, x) - v)), np.max(np.abs(exp_origin(spec, log_origin(spec, x)) - x)))
        y = exp_origin(spec, v[rng.permutation(1000)])
        z = exp_origin(spec, v[rng.permutation(1000)])
        dxy, dyx = geodesic_distance(spec, x, y), geodesic_distance(spec, y, x)
        axioms_ok &= bool(np.all(dxy >= 0) and np.allclose(dxy, dyx, rtol=1e-10, atol=1e-12))
        axioms_ok &= bool(np.all(np.abs(geodesic_distance(spec, x, x)) < 1e-6))
        axioms_ok &= bool(np.all(geodesic_distance(spec, x, z) <= dxy + geodesic_distance(spec, y, z) + 1e-9))
    secs = time.perf_counter() - start
    ok = worst <= 1e-9 and axioms_ok and secs < 5
    record(6, ok, f"3 geometries x 1000 probes, max round-trip error {worst:.1e} (<= 1e-9), axioms {'hold' if axioms_ok else 'FAIL'}, {secs:.2f}s (< 5s)")
    assert ok


def test_c07_mi_estimator(mixed, ablation):
    g, cm = mixed
    start = time.perf_counter()
    state = train(g, TrainConfig(gamma=0.5, seed=0), cm)
    secs = time.perf_counter() - start
    cap = math.log(TrainConfig().K + 1)
    capped = all(r["mi_bound"] <= cap + 1e-12 for r in state.log)
    # the bound is also capped in every run of the ablation grid; rerun the
    # multi-expert variants of one seed to inspect their logs
    for name, delta in ABLATION_VARIANTS.items():
        if len(delta["enabled_experts"]) > 1:
            st = train(g, replace(TrainConfig(seed=1), **delta), cm)
            capped &= all(r["mi_bound"] <= cap + 1e-12 for r in st.log)
    gain = state.log[state.best_epoch]["mi_bound"] - state.log[0]["mi_bound"]
    ok = capped and gain >= 0.1 and secs < 120
    record(
        7,
        ok,
        f"bound <= log(K+1) every epoch: {capped}; epoch 0 -> best epoch {state.best_epoch}: "
        f"{state.log[0]['mi_bound']:+.3f} -> {state.log[state.best_epoch]['mi_bound']:+.3f} nats (gain {gain:.3f} >= 0.1), {secs:.1f}s (< 120s)",
    )
    assert ok


def _table(summary):
    return "; ".join(f"{k}={100 * s['acc_mean']:.2f}+-{100 * s['acc_std']:.2f}" for k, s in summary.items())


def test_c08_synergy_trend(ablation):
    rows, summary, secs = ablation
    full = summary["full"]["acc_mean"]
    gaps = {k: 100 * (full - summary[k]["acc_mean"]) for k in "abc"}
    ok = all(gap >= 2.0 for gap in gaps.values()) and secs < 15 * 60
    gap_text = ", ".join(f"vs {k} {gap:+.2f}" for k, gap in gaps.items())
    record(8, ok, f"full {100 * full:.2f}% over 5 seeds; gaps {gap_text} (each >= +2.00), {secs:.0f}s")
    assert ok


def test_c09_ablation_trend(ablation):
    rows, summary, secs = ablation
    full = summary["full"]["acc_mean"]
    # accuracies are multiples of 1/|test|, so equal means may differ by round-off only
    beaten = [k for k in "ghi" if summary[k]["acc_mean"] > full + 1e-12]
    ok = not beaten and not any(r.error for r in rows) and secs < 45 * 60
    record(9, ok, f"full >= g, h, i: {'yes' if not beaten else 'no, beaten by ' + ','.join(beaten)}; table: {_table(summary)}; {secs:.0f}s (< 2700s)")
    assert ok


def test_c10_gate_curvature_consistency(mixed):
    g, cm = mixed
    start = time.perf_counter()
    state = train(g, TrainConfig(beta=0.5, seed=0), cm)
    rep = gating_consistency_report(state, g, cm)
    secs = time.perf_counter() - start
    c = rep.correlations
    rs = c.get("rho_S_kappa", (float("nan"), 0))[0]
    rh = c.get("rho_H_kappa", (float("nan"), 0))[0]
    re = c["rho_E_abs_kappa_overall"][0]
    ok = rs > 0.5 and rh < -0.5 and re < 0 and secs < 300
    record(10, ok, f"rho(wS,k) = {rs:+.3f} (> 0.5), rho(wH,k) = {rh:+.3f} (< -0.5), rho(wE,|k|) = {re:+.3f} (< 0), {secs:.1f}s (< 300s)")
    assert ok


def test_c11_determinism(mixed):
    g, cm = mixed
    start = time.perf_counter()
    cfg = TrainConfig(seed=7)
    a = train(g, cfg, cm).log_csv().encode()
    b = train(g, cfg, cm).log_csv().encode()
    secs = time.perf_counter() - start
    ok = a == b and secs < 300
    record(11, ok, f"two runs give {'byte-identical' if a == b else 'DIFFERENT'} logs ({len(a)} bytes), {secs:.1f}s (< 300s)")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
