"""Exact and entropic optimal transport between small discrete measures.

The exact solver runs successive shortest paths on the bipartite
transportation network with integer supplies, so optimal costs come out as
exact rationals. Sinkhorn iterations are carried out in the log domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

MASS_TOL = 1e-12
_MAX_DENOMINATOR = 10**6
# epsilon is halved per warm-started stage in wasserstein_sinkhorn
EPS_SCALING = 0.5


class TransportError(ValueError):
    pass


@dataclass(frozen=True)
class TransportPlan:
    rows: np.ndarray
    cols: np.ndarray
    flow: np.ndarray
    cost: float
    exact_cost: Fraction | None = None

    def dense(self, n_rows: int, n_cols: int) -> np.ndarray:
        out = np.zeros((n_rows, n_cols))
        np.add.at(out, (self.rows, self.cols), self.flow)
        return out


def to_integer_masses(*masses) -> tuple[list[list[int]], int]:
    """Scale probability vectors to integers over a common denominator.

    Each mass is replaced by the nearest fraction with denominator at most
    1e6 (masses of the form k/deg or p are reproduced exactly); a mass that
    no such fraction matches to 1e-12 is rejected, since the solver could
    then no longer claim an exact optimum. Rounding drift is pushed onto
    the largest entry so every vector sums to the common denominator.
    """
    fracs = [[Fraction(float(m)).limit_denominator(_MAX_DENOMINATOR) for m in vec] for vec in masses]
    for vec, fvec in zip(masses, fracs):
        for m, f in zip(vec, fvec):
            if abs(float(f) - float(m)) > MASS_TOL:
                raise TransportError(f"mass {float(m)!r} is not a fraction with denominator <= {_MAX_DENOMINATOR}")
    denom = 1
    for vec in fracs:
        for f in vec:
            denom = denom * f.denominator // math.gcd(denom, f.denominator)
    ints = []
    for vec in fracs:
        iv = [int(f * denom) for f in vec]
        drift = denom - sum(iv)
        if drift:
            iv[int(np.argmax(iv))] += drift
        if min(iv) < 0:
            raise TransportError("measure not normalized")
        ints.append(iv)
    return ints, denom


def _check_measure(mass: np.ndarray, name: str) -> None:
    if np.any(mass < 0) or abs(float(np.sum(mass)) - 1.0) > 1e-9:
        raise TransportError(f"{name} is not a probability vector (sum={np.sum(mass)!r})")


def min_cost_transport(supply: list[int], demand: list[int], cost: np.ndarray) -> tuple[dict, int]:
    """Integer transportation problem via successive shortest paths.

    ``cost`` must hold non-negative integers. Returns the flow on each used
    (i, j) arc and the total integer cost. Optimality is certified at the
    end by checking that the residual network carries no negative cycle.
    """
    ns, nt = len(supply), len(demand)
    if sum(supply) != sum(demand):
        raise TransportError("supply and demand totals differ")
    c = [[int(x) for x in row] for row in np.asarray(cost)]
    flow: dict[tuple[int, int], int] = {}
    sup = list(supply)
    dem = list(demand)
    inf = float("inf")
    while any(sup):
        # Bellman-Ford from a virtual root attached to every source with
        # remaining supply. Node ids: sources 0..ns-1, sinks ns..ns+nt-1.
        dist = [0 if sup[i] > 0 else inf for i in range(ns)] + [inf] * nt
        pred: list = [None] * (ns + nt)
        for _ in range(ns + nt):
            changed = False
            for i in range(ns):
                di = dist[i]
                if di == inf:
                    continue
                ci = c[i]
                for j in range(nt):
                    nd = di + ci[j]
                    if nd < dist[ns + j]:
                        dist[ns + j] = nd
                        pred[ns + j] = i
                        changed = True
            for (i, j), f in flow.items():
                dj = dist[ns + j]
                if f > 0 and dj != inf and dj - c[i][j] < dist[i]:
                    dist[i] = dj - c[i][j]
                    pred[i] = ns + j
                    changed = True
            if not changed:
                break
        best = None
        for j in range(nt):
            if dem[j] > 0 and dist[ns + j] != inf and (best is None or dist[ns + j] < dist[ns + best]):
                best = j
        if best is None:
            raise TransportError("no augmenting path")
        # walk back to the origin source, collecting the bottleneck
        path = []
        node = ns + best
        amount = dem[best]
        while True:
            p = pred[node]
            if p is None:
                break
            if node >= ns:
                path.append(("fwd", p, node - ns))
            else:
                path.append(("bwd", node, p - ns))
                amount = min(amount, flow[(node, p - ns)])
            node = p
        amount = min(amount, sup[node])
        for kind, i, j in path:
            if kind == "fwd":
                flow[(i, j)] = flow.get((i, j), 0) + amount
            else:
                flow[(i, j)] -= amount
                if flow[(i, j)] == 0:
                    del flow[(i, j)]
        sup[node] -= amount
        dem[best] -= amount
    if not _residual_is_optimal(flow, c, ns, nt):
        raise TransportError("optimality certificate failed")
    total = sum(f * c[i][j] for (i, j), f in flow.items())
    return flow, total


def _residual_is_optimal(flow, c, ns, nt) -> bool:
    """No negative cycle in the residual network <=> the flow is optimal."""
    dist = [0] * (ns + nt)
    for _ in range(ns + nt + 1):
        changed = False
        for i in range(ns):
            for j in range(nt):
                if dist[i] + c[i][j] < dist[ns + j]:
                    dist[ns + j] = dist[i] + c[i][j]
                    changed = True
        for (i, j), f in flow.items():
            if f > 0 and dist[ns + j] - c[i][j] < dist[i]:
                dist[i] = dist[ns + j] - c[i][j]
                changed = True
        if not changed:
            return True
    return False


def wasserstein_exact(mu_mass, nu_mass, cost) -> TransportPlan:
    """Exact W1 between two probability vectors under an integer cost matrix.

    Parameters
    ----------
    mu_mass, nu_mass : array_like
        Source and target masses; each must sum to one.
    cost : (len(mu), len(nu)) array_like
        Integer ground distances (hop counts).
    """
    mu_mass = np.asarray(mu_mass, dtype=np.float64)
    nu_mass = np.asarray(nu_mass, dtype=np.float64)
    cost = np.asarray(cost)
    _check_measure(mu_mass, "source measure")
    _check_measure(nu_mass, "target measure")
    if cost.shape != (len(mu_mass), len(nu_mass)):
        raise TransportError(f"cost shape {cost.shape} does not match supports")
    if np.any(cost != np.round(cost)) or np.any(cost < 0):
        raise TransportError("exact solver needs non-negative integer costs")
    (a, b), denom = to_integer_masses(mu_mass, nu_mass)
    flow, total = min_cost_transport(a, b, cost)
    keys = sorted(flow)
    rows = np.array([k[0] for k in keys], dtype=np.int64)
    cols = np.array([k[1] for k in keys], dtype=np.int64)
    vals = np.array([flow[k] / denom for k in keys], dtype=np.float64)
    exact = Fraction(total, denom)
    return TransportPlan(rows, cols, vals, float(exact), exact)


def _lse_rows(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=1)
    return m + np.log(np.exp(x - m[:, None]).sum(axis=1))


def _sinkhorn_sweeps(log_a, log_b, C, eps, iters, tol, f, g, history):
    a = np.exp(log_a)
    for _ in range(iters):
        f = eps * (log_a - _lse_rows((g[None, :] - C) / eps))
        g = eps * (log_b - _lse_rows(((f[:, None] - C) / eps).T))
        plan = np.exp((f[:, None] + g[None, :] - C) / eps)
        err = float(np.abs(plan.sum(axis=1) - a).sum())
        history.append(err)
        if err < tol:
            break
    return f, g, plan


def sinkhorn_plan(mu_mass, nu_mass, cost, epsilon: float, iters: int, tol: float = 1e-9, scaling: float | None = None):
    """Log-domain Sinkhorn scaling.

    Returns the plan after the last sweep and the list of L1 row-marginal
    violations measured after each sweep (columns are exact after a sweep).

    With ``scaling`` in (0, 1) the regularization is annealed: a run starts
    at ``max(cost)`` and multiplies epsilon by ``scaling`` until it reaches
    ``epsilon``, warm-starting each stage from the previous potentials. Each
    stage gets up to ``iters`` sweeps, so ``history`` then spans all stages.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if scaling is not None and not 0 < scaling < 1:
        raise ValueError("scaling must lie in (0, 1)")
    a = np.asarray(mu_mass, dtype=np.float64)
    b = np.asarray(nu_mass, dtype=np.float64)
    C = np.asarray(cost, dtype=np.float64)
    _check_measure(a, "source measure")
    _check_measure(b, "target measure")
    schedule = [epsilon]
    if scaling is not None:
        eps = float(C.max())
        schedule = []
        while eps > epsilon:
            schedule.append(eps)
            eps *= scaling
        schedule.append(epsilon)
    log_a, log_b = np.log(a), np.log(b)
    f = np.zeros(len(a))
    g = np.zeros(len(b))
    history: list = []
    for k, eps in enumerate(schedule):
        last = k == len(schedule) - 1
        f, g, plan = _sinkhorn_sweeps(log_a, log_b, C, eps, iters, tol if last else max(tol, 1e-6), f, g, history)
    return plan, history


def wasserstein_sinkhorn(mu_mass, nu_mass, cost, epsilon: float = 0.05, iters: int = 200, scaling: float | None = EPS_SCALING) -> float:
    """Transport cost of the entropic plan, annealed in epsilon by default."""
    plan, _ = sinkhorn_plan(mu_mass, nu_mass, cost, epsilon, iters, scaling=scaling)
    return float(np.sum(plan * np.asarray(cost, dtype=np.float64)))
