"""Full-batch training loop, evaluation, ablations and the routing/curvature
consistency report."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.stats import spearmanr

from . import autodiff as ad
from .curvature import CurvatureConfig, CurvatureMap, compute_all
from .experts import DEFAULT_MANIFOLDS, EXPERT_KEYS, ExpertOutput, ExpertParams, audit_membership, expert_forward, init_params
from .gating import GateParams, fuse, gate_forward, init_gate, target_weights
from .graph import Graph, normalize_adjacency
from .manifolds import ManifoldSpec
from .losses import (
    LossBreakdown,
    align_loss,
    contrastive_loss,
    cross_entropy,
    intra_negatives,
    mi_lower_bound,
    mine_negatives,
    positive_choice,
    select_rows,
    total_loss,
)
from .optim import ParamStore, adam_step

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "task", "align", "contr", "total", "mi_bound", "train_acc", "val_acc")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    lr: float = 0.01
    weight_decay: float = 5e-4
    alpha: float = 1.0
    beta: float = 0.5
    gamma: float = 0.5
    theta: float = 1e-4
    eta: float = 0.05
    tau_g: float = 1.0
    tau_c: float = 0.5
    K: int = 4
    enabled_experts: tuple = ("E", "H", "S")
    enable_align: bool = True
    enable_contrastive: bool = True
    patience: int = 50
    seed: int = 0
    hidden: int = 16
    out_dim: int = 16
    gate_hidden: int = 16
    # curvature magnitudes of the hyperbolic and spherical experts
    ball_c: float = 1.0
    sphere_c: float = 1.0
    curvature: CurvatureConfig = field(default_factory=CurvatureConfig)

    def validate(self) -> None:
        if not self.enabled_experts:
            raise ValueError("enabled_experts must be non-empty")
        bad = set(self.enabled_experts) - set(EXPERT_KEYS)
        if bad:
            raise ValueError(f"unknown experts {sorted(bad)}")
        if len(set(self.enabled_experts)) != len(self.enabled_experts):
            raise ValueError("duplicate experts")
        if self.epochs < 1 or not 1 <= self.patience <= self.epochs:
            raise ValueError("need epochs >= 1 and 1 <= patience <= epochs")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if min(self.alpha, self.beta, self.gamma, self.weight_decay) < 0:
            raise ValueError("loss weights and weight decay must be non-negative")
        if self.theta <= 0 or self.eta <= 0 or self.tau_g <= 0 or self.tau_c <= 0:
            raise ValueError("theta, eta, tau_g and tau_c must be positive")
        if self.K < 2:
            raise ValueError("K must be >= 2")
        if self.ball_c <= 0 or self.sphere_c <= 0:
            raise ValueError("ball_c and sphere_c must be positive")
        self.curvature.validate()

    def manifold(self, key: str) -> ManifoldSpec:
        if key == "H":
            return ManifoldSpec("hyperbolic", self.ball_c)
        if key == "S":
            return ManifoldSpec("spherical", self.sphere_c)
        return DEFAULT_MANIFOLDS[key]

    @property
    def expert_columns(self) -> list[int]:
        """Enabled experts as columns in the fixed (E, H, S) order."""
        return [EXPERT_KEYS.index(k) for k in EXPERT_KEYS if k in self.enabled_experts]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["enabled_experts"] = list(self.enabled_experts)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys {sorted(unknown)}")
        if "curvature" in d and isinstance(d["curvature"], dict):
            ck = set(d["curvature"]) - set(CurvatureConfig.__dataclass_fields__)
            if ck:
                raise ValueError(f"unknown curvature config keys {sorted(ck)}")
            d["curvature"] = CurvatureConfig(**d["curvature"])
        if "enabled_experts" in d:
            d["enabled_experts"] = tuple(d["enabled_experts"])
        return cls(**d)


@dataclass
class Metrics:
    accuracy: float
    macro_f1: float
    precision: dict
    recall: dict


def classification_metrics(y_true, y_pred) -> Metrics:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) == 0:
        raise ValueError("empty mask")
    classes = np.union1d(y_true, y_pred)
    precision, recall, f1s = {}, {}, []
    for c in classes:
        tp = int(np.sum((y_pred == c) & (y_true == c)))
        fp = int(np.sum((y_pred == c) & (y_true != c)))
        fn = int(np.sum((y_pred != c) & (y_true == c)))
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        precision[int(c)] = p
        recall[int(c)] = r
        f1s.append(2 * p * r / (p + r) if p + r else 0.0)
    return Metrics(float(np.mean(y_true == y_pred)), float(np.mean(f1s)), precision, recall)


# ---------------------------------------------------------------------------
# Model


def init_store(cfg: TrainConfig, d: int, n_classes: int) -> ParamStore:
    seeds = np.random.SeedSequence(cfg.seed).generate_state(5)
    store = ParamStore()
    for i, key in enumerate(EXPERT_KEYS):
        if key not in cfg.enabled_experts:
            continue
        p = init_params(int(seeds[i]), d, cfg.hidden, cfg.out_dim, cfg.manifold(key))
        for name, value in p.as_dict().items():
            store.add(f"expert.{key}.{name}", value)
    if len(cfg.enabled_experts) > 1:
        gp = init_gate(int(seeds[3]), d, cfg.gate_hidden, cfg.tau_g)
        for name, value in gp.as_dict().items():
            store.add(f"gate.{name}", value)
    rng = np.random.default_rng(int(seeds[4]))
    bound = math.sqrt(6.0 / (cfg.out_dim + n_classes))
    store.add("classifier.W", rng.uniform(-bound, bound, size=(cfg.out_dim, n_classes)))
    store.add("classifier.b", np.zeros((1, n_classes)))
    return store


@dataclass
class ForwardResult:
    experts: list
    gate: ad.Tensor
    fused: ad.Tensor
    logits: ad.Tensor
    task: ad.Tensor
    align: Optional[ad.Tensor]
    contrastive: Optional[ad.Tensor]
    total: ad.Tensor
    n_negatives: int


def _params(store: ParamStore, tape: Optional[ad.Tape], prefix: str) -> dict:
    if tape is None:
        return {k[len(prefix):]: v for k, v in store.params.items() if k.startswith(prefix)}
    return store.bind(tape, prefix)


def forward(
    store: ParamStore,
    cfg: TrainConfig,
    g: Graph,
    adj,
    node_curvature: np.ndarray,
    tape: Optional[ad.Tape] = None,
    mask=None,
) -> ForwardResult:
    """One pass of experts, gate, fusion, classifier and all loss terms.

    With ``tape=None`` parameters enter as constants (evaluation mode).
    """
    X = ad.Tensor(g.features)
    cols = cfg.expert_columns
    outs: list[ExpertOutput] = []
    for c in cols:
        key = EXPERT_KEYS[c]
        p = _params(store, tape, f"expert.{key}.")
        outs.append(expert_forward(ExpertParams(manifold=cfg.manifold(key), **p), adj, X))
    n = g.node_count
    if len(cols) > 1:
        gp = GateParams(temperature=cfg.tau_g, **_params(store, tape, "gate."))
        gate = gate_forward(gp, adj, X, cols)
        fused = fuse(gate, outs)
    else:
        gate = ad.Tensor(np.ones((n, 1)))
        fused = outs[0].tangent
    cp = _params(store, tape, "classifier.")
    logits = ad.add(ad.matmul(fused, cp["W"]), cp["b"])
    task = cross_entropy(logits, g.labels, g.masks.train if mask is None else mask)

    align = None
    if len(cols) > 1:
        target = target_weights(node_curvature, cfg.theta, cfg.eta)[:, cols]
        target = target / target.sum(axis=1, keepdims=True)
        align = align_loss(target, gate)

    contr, n_neg = None, 0
    if len(cols) > 1:
        choice = positive_choice(node_curvature, cfg.theta, cols, cfg.eta)
        tangents = [o.tangent for o in outs]
        positive = select_rows(tangents, choice)
        intra = intra_negatives(choice, tangents)
        inter = mine_negatives(positive.value, fused.value, cfg.K - 2)
        contr = contrastive_loss(fused, positive, intra, cfg.tau_c, inter)
        n_neg = len(intra) + inter.shape[1]

    use_align = align if cfg.enable_align else None
    use_contr = contr if cfg.enable_contrastive else None
    total = total_loss(task, use_align, use_contr, cfg.alpha, cfg.beta, cfg.gamma)
    return ForwardResult(outs, gate, fused, logits, task, align, contr, total, n_neg)


@dataclass
class TrainState:
    store: ParamStore
    best: dict
    best_epoch: int
    epoch: int
    config: TrainConfig
    node_curvature: np.ndarray
    log: list = field(default_factory=list)

    def best_store(self) -> ParamStore:
        s = ParamStore()
        for k, v in self.best.items():
            s.add(k, v)
        return s

    def log_csv(self) -> str:
        return log_to_csv(self.log)


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def log_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    buf.write(",".join(LOG_FIELDS) + "\n")
    for r in rows:
        buf.write(",".join(_fmt(r.get(k)) for k in LOG_FIELDS) + "\n")
    return buf.getvalue()


def _accuracy(pred, labels, mask) -> float:
    idx = np.asarray(mask, dtype=bool)
    return float(np.mean(pred[idx] == labels[idx])) if idx.any() else float("nan")


def train(
    g: Graph,
    cfg: TrainConfig,
    curvature: Optional[CurvatureMap] = None,
    store: Optional[ParamStore] = None,
) -> TrainState:
    """Train to ``cfg.epochs`` or until validation accuracy stalls.

    Model selection uses the validation mask only: the snapshot kept is the
    parameter set with the best validation accuracy (ties: lower validation
    loss), taken before that epoch's update.
    """
    cfg.validate()
    if g.labels is None:
        raise ValueError("training needs node labels")
    if not g.masks.train.any() or not g.masks.val.any():
        raise ValueError("training needs non-empty train and validation masks")
    if curvature is None:
        curvature = compute_all(g, cfg.curvature)
    kappa = np.asarray(curvature.node_curvature, dtype=np.float64)
    adj = normalize_adjacency(g)
    if store is None:
        store = init_store(cfg, g.feature_dim, g.num_classes)
    labels = np.asarray(g.labels)
    val_idx = np.flatnonzero(g.masks.val)

    best_key = None
    best = store.snapshot()
    best_epoch = 0
    stale = 0
    rows = []
    for epoch in range(cfg.epochs):
        tape = ad.Tape()
        res = forward(store, cfg, g, adj, kappa, tape)
        for out in res.experts:
            if not audit_membership(out):
                raise TrainingDiverged(f"epoch {epoch}: {out.manifold.kind} expert left its manifold")
        total = res.total.item()
        if not math.isfinite(total):
            raise TrainingDiverged(f"epoch {epoch}: non-finite loss {total}")
        logits = res.logits.value
        pred = np.argmax(logits, axis=1)
        lp = logits[val_idx] - logits[val_idx].max(axis=1, keepdims=True)
        lp = lp - np.log(np.exp(lp).sum(axis=1, keepdims=True))
        val_loss = float(-np.mean(lp[np.arange(len(val_idx)), labels[val_idx]]))
        contr = res.contrastive.item() if res.contrastive is not None else None
        row = {
            "epoch": epoch,
            "task": res.task.item(),
            "align": res.align.item() if res.align is not None else None,
            "contr": contr,
            "total": total,
            "mi_bound": mi_lower_bound(contr, res.n_negatives) if contr is not None else None,
            "train_acc": _accuracy(pred, labels, g.masks.train),
            "val_acc": _accuracy(pred, labels, g.masks.val),
            "val_loss": val_loss,
        }
        rows.append(row)
        key = (row["val_acc"], -val_loss)
        if best_key is None or key > best_key:
            best_key, best, best_epoch, stale = key, store.snapshot(), epoch, 0
        else:
            stale += 1
        if stale >= cfg.patience:
            log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
            break
        grads = tape.backward(res.total)
        adam_step(store, grads, cfg.lr, weight_decay=cfg.weight_decay)
    return TrainState(store, best, best_epoch, len(rows), cfg, kappa, rows)


def predict(state: TrainState, g: Graph, store: Optional[ParamStore] = None) -> ForwardResult:
    store = store or state.best_store()
    adj = normalize_adjacency(g)
    return forward(store, state.config, g, adj, state.node_curvature, None)


def evaluate(state: TrainState, g: Graph, mask) -> Metrics:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty mask")
    res = predict(state, g)
    pred = np.argmax(res.logits.value, axis=1)
    return classification_metrics(np.asarray(g.labels)[mask], pred[mask])


# ---------------------------------------------------------------------------
# Ablations


ABLATION_VARIANTS = {
    "a": dict(enabled_experts=("E",), enable_align=False, enable_contrastive=False),
    "b": dict(enabled_experts=("H",), enable_align=False, enable_contrastive=False),
    "c": dict(enabled_experts=("S",), enable_align=False, enable_contrastive=False),
    "d": dict(enabled_experts=("E", "H"), enable_align=True, enable_contrastive=True),
    "e": dict(enabled_experts=("E", "S"), enable_align=True, enable_contrastive=True),
    "f": dict(enabled_experts=("H", "S"), enable_align=True, enable_contrastive=True),
    "g": dict(enabled_experts=("E", "H", "S"), enable_align=False, enable_contrastive=False),
    "h": dict(enabled_experts=("E", "H", "S"), enable_align=True, enable_contrastive=False),
    "i": dict(enabled_experts=("E", "H", "S"), enable_align=False, enable_contrastive=True),
    "full": dict(enabled_experts=("E", "H", "S"), enable_align=True, enable_contrastive=True),
}


def variant_config(base: TrainConfig, name: str) -> TrainConfig:
    return replace(base, **ABLATION_VARIANTS[name])


@dataclass
class AblationRow:
    variant: str
    seed: int
    accuracy: float
    macro_f1: float
    error: str = ""


def ablate(
    g: Graph,
    base: TrainConfig,
    seeds: Sequence[int],
    variants: Sequence[str] = tuple(ABLATION_VARIANTS),
    curvature: Optional[CurvatureMap] = None,
    graph_for_seed=None,
) -> list[AblationRow]:
    """Train every (variant, seed) pair and score it on the test mask.

    ``graph_for_seed`` optionally maps a seed to its own graph (e.g. fresh
    feature noise and splits per seed); topology and curvature are shared.
    """
    if len(seeds) < 3:
        raise ValueError("ablation needs at least 3 seeds")
    if curvature is None:
        curvature = compute_all(g, base.curvature)
    rows = []
    for name in variants:
        for seed in seeds:
            gs = graph_for_seed(seed) if graph_for_seed else g
            cfg = replace(variant_config(base, name), seed=seed)
            try:
                state = train(gs, cfg, curvature)
                m = evaluate(state, gs, gs.masks.test)
                rows.append(AblationRow(name, seed, m.accuracy, m.macro_f1))
            except Exception as exc:  # recorded per run, the grid continues
                log.warning("variant %s seed %s failed: %s", name, seed, exc)
                rows.append(AblationRow(name, seed, float("nan"), float("nan"), str(exc)))
    return rows


def summarize_ablation(rows: Sequence[AblationRow]) -> dict:
    out = {}
    for name in dict.fromkeys(r.variant for r in rows):
        acc = np.array([r.accuracy for r in rows if r.variant == name])
        f1 = np.array([r.macro_f1 for r in rows if r.variant == name])
        out[name] = {
            "acc_mean": float(np.mean(acc)),
            "acc_std": float(np.std(acc)),
            "f1_mean": float(np.mean(f1)),
            "f1_std": float(np.std(f1)),
            "runs": len(acc),
        }
    return out


def ablation_csv(rows: Sequence[AblationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "seed", "accuracy", "macro_f1", "error"])
    for r in rows:
        w.writerow([r.variant, r.seed, repr(r.accuracy), repr(r.macro_f1), r.error])
    w.writerow([])
    w.writerow(["variant", "E", "H", "S", "align", "contr", "acc_mean", "acc_std", "f1_mean", "f1_std"])
    for name, s in summarize_ablation(rows).items():
        v = ABLATION_VARIANTS[name]
        marks = ["x" if k in v["enabled_experts"] else "" for k in EXPERT_KEYS]
        marks += ["x" if v["enable_align"] else "", "x" if v["enable_contrastive"] else ""]
        w.writerow([name, *marks, f"{s['acc_mean']:.4f}", f"{s['acc_std']:.4f}", f"{s['f1_mean']:.4f}", f"{s['f1_std']:.4f}"])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Gate / curvature consistency


def spearman(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0
    return float(spearmanr(x, y).statistic)


@dataclass
class ConsistencyReport:
    bins: list
    correlations: dict
    notes: list

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_low", "bin_high", "count", "mean_wE", "mean_wH", "mean_wS"])
        for b in self.bins:
            w.writerow([repr(b["low"]), repr(b["high"]), b["count"], *(_fmt(b[k]) for k in ("wE", "wH", "wS"))])
        w.writerow([])
        w.writerow(["correlation", "value", "nodes"])
        for name, (value, n) in self.correlations.items():
            w.writerow([name, _fmt(value), n])
        for note in self.notes:
            w.writerow(["note", note, ""])
        return buf.getvalue()


def consistency_from_weights(weights: np.ndarray, kappa: np.ndarray, theta: float, n_bins: int = 20, min_nodes: int = 5) -> ConsistencyReport:
    """Per-bin mean routing weights and region-wise Spearman correlations.

    ``weights`` is N x 3 in (E, H, S) order.
    """
    kappa = np.asarray(kappa, dtype=np.float64)
    lo, hi = float(kappa.min()), float(kappa.max())
    edges = np.linspace(lo, hi if hi > lo else lo + 1.0, n_bins + 1)
    which = np.clip(np.searchsorted(edges, kappa, side="right") - 1, 0, n_bins - 1)
    bins = []
    for b in range(n_bins):
        sel = which == b
        row = {"low": float(edges[b]), "high": float(edges[b + 1]), "count": int(sel.sum())}
        for m, k in enumerate(("wE", "wH", "wS")):
            row[k] = float(weights[sel, m].mean()) if sel.any() else None
        bins.append(row)
    corr, notes = {}, []
    regions = {
        "rho_S_kappa": (kappa >= theta, weights[:, 2], kappa),
        "rho_H_kappa": (kappa <= -theta, weights[:, 1], kappa),
        "rho_E_abs_kappa": (np.abs(kappa) <= theta, weights[:, 0], np.abs(kappa)),
    }
    for name, (sel, w, k) in regions.items():
        if name == "rho_E_abs_kappa" and not sel.any():
            sel = np.ones_like(sel)
        if sel.sum() < min_nodes:
            notes.append(f"{name} omitted: only {int(sel.sum())} nodes in region")
            continue
        corr[name] = (spearman(w[sel], k[sel]), int(sel.sum()))
    corr["rho_E_abs_kappa_overall"] = (spearman(weights[:, 0], np.abs(kappa)), len(kappa))
    return ConsistencyReport(bins, corr, notes)


def gate_weights(state: TrainState, g: Graph) -> np.ndarray:
    """N x 3 routing weights in (E, H, S) order; disabled experts get 0."""
    res = predict(state, g)
    out = np.zeros((g.node_count, 3))
    out[:, state.config.expert_columns] = res.gate.value
    return out


def gating_consistency_report(state: TrainState, g: Graph, curvature: Optional[CurvatureMap] = None, n_bins: int = 20) -> ConsistencyReport:
    kappa = state.node_curvature if curvature is None else curvature.node_curvature
    return consistency_from_weights(gate_weights(state, g), kappa, state.config.theta, n_bins)
