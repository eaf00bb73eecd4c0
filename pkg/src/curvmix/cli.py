"""Command-line entry point: ``curvmix <subcommand> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 configuration or input error,
3 gradient check failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config, write_resolved
from .curvature import SOLVERS, CurvatureConfig, compute_all
from .gating import target_weights
from .gradcheck import run_gradcheck
from .graph import Graph, GraphFormatError, SyntheticSpec, generate_synthetic, load_edge_list, save_graph
from .optim import ParamStore
from .report import (
    consistency_svg,
    parse_consistency_csv,
    parse_sweep_csv,
    sweep,
    sweep_csv,
    sweep_svg,
)
from .trainer import (
    TrainState,
    ablate,
    ablation_csv,
    evaluate,
    gate_weights,
    gating_consistency_report,
    summarize_ablation,
    train,
)

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_GRADCHECK = 0, 1, 2, 3

log = logging.getLogger("curvmix")


class InputError(Exception):
    """Missing or unreadable input (exit code 2)."""


# ---------------------------------------------------------------------------
# Helpers


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config).with_overrides(seed=args.seed, output_dir=args.out)
    if getattr(args, "graph", None):
        cfg = replace(cfg, graph=str(args.graph))
    return cfg


def _graph_from_path(path) -> Graph:
    """Load ``stem.edges`` plus any ``stem.{features,labels,masks}.csv`` beside it."""
    p = Path(path)
    if not p.is_file():
        raise InputError(f"graph file not found: {p}")
    stem = p.name[: -len(".edges")] if p.name.endswith(".edges") else p.stem

    def side(kind):
        q = p.with_name(f"{stem}.{kind}.csv")
        return q if q.is_file() else None

    try:
        return load_edge_list(p, side("features"), side("labels"), side("masks"))
    except GraphFormatError as exc:
        raise InputError(str(exc)) from None


def _graph_for(cfg: RunConfig, seed=None) -> Graph:
    if cfg.graph:
        return _graph_from_path(cfg.graph)
    spec = cfg.synthetic if seed is None else replace(cfg.synthetic, seed=seed)
    return generate_synthetic(spec)


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def _node_report_csv(state: TrainState, g: Graph) -> str:
    w = gate_weights(state, g)
    t = target_weights(state.node_curvature, state.config.theta, state.config.eta)
    lines = ["node,kappa,w_E,w_H,w_S,target_E,target_H,target_S"]
    for v in range(g.node_count):
        vals = [state.node_curvature[v], *w[v], *t[v]]
        lines.append(f"{v}," + ",".join(repr(float(x)) for x in vals))
    return "\n".join(lines) + "\n"


def _metrics_json(metrics) -> str:
    d = asdict(metrics)
    return json.dumps(d, indent=2, sort_keys=True, default=float) + "\n"


# ---------------------------------------------------------------------------
# Subcommands


def cmd_generate(args) -> int:
    cfg = _resolve(args)
    spec = cfg.synthetic
    if args.spec:
        text = args.spec
        p = Path(text)
        if p.is_file():
            text = p.read_text(encoding="utf-8")
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--spec is neither a JSON file nor JSON text ({exc})") from None
        cfg = RunConfig.from_dict({**cfg.to_dict(), "synthetic": {**cfg.to_dict()["synthetic"], **data}})
        cfg = cfg.with_overrides(seed=args.seed)
        spec = cfg.synthetic
    try:
        g = generate_synthetic(spec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(cfg.output_dir)
    paths = save_graph(g, out, args.stem)
    manifest = {
        "nodes": g.node_count,
        "edges": g.edge_count,
        "classes": g.num_classes,
        "files": {k: p.name for k, p in paths.items()},
        "spec": asdict(spec),
    }
    _write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    write_resolved(cfg)
    print(f"wrote {g.node_count} nodes, {g.edge_count} edges to {out}")
    return EXIT_OK


def cmd_curvature(args) -> int:
    cfg = load_config(args.config).with_overrides(seed=args.seed)
    curv = cfg.curvature
    if args.solver is not None:
        curv = replace(curv, solver=args.solver)
    if args.p is not None:
        curv = replace(curv, idleness=args.p)
    try:
        curv.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out_csv = Path(args.out) if args.out else Path(cfg.output_dir) / "curvature.csv"
    if out_csv.suffix != ".csv":
        out_csv = out_csv / "curvature.csv"
    cfg = replace(cfg, curvature=curv, output_dir=str(out_csv.parent), graph=str(args.graph) if args.graph else cfg.graph)
    g = _graph_for(cfg)
    cmap = compute_all(g, curv, workers=args.workers)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    cmap.to_csv(out_csv)
    if args.compare:
        exact = compute_all(g, replace(curv, solver="exact"), workers=args.workers) if curv.solver != "exact" else cmap
        lines = [f"u,v,{curv.solver},exact,difference"]
        for (u, v), k in sorted(cmap.edge_curvature.items()):
            e = exact.edge_curvature[(u, v)]
            lines.append(f"{u},{v},{k!r},{e!r},{k - e!r}")
        _write(out_csv.with_name(out_csv.stem + ".compare.csv"), "\n".join(lines) + "\n")
    write_resolved(cfg)
    print(f"wrote curvature of {len(cmap.edge_curvature)} edges ({curv.solver}) to {out_csv}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve(args)
    write_resolved(cfg)
    out = Path(cfg.output_dir)
    g = _graph_for(cfg)
    tcfg = cfg.train_config()
    cmap = compute_all(g, tcfg.curvature)
    state = train(g, tcfg, cmap)
    state.best_store().save(out / "checkpoint.npz")
    _write(out / "train_log.csv", state.log_csv())
    _write(out / "node_report.csv", _node_report_csv(state, g))
    cmap.to_csv(out / "curvature.csv")
    m = evaluate(state, g, g.masks.test)
    _write(out / "metrics.json", _metrics_json(m))
    print(f"best epoch {state.best_epoch} of {state.epoch}; test accuracy {m.accuracy:.4f}, macro-F1 {m.macro_f1:.4f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _resolve(args)
    if args.seeds is not None:
        cfg = replace(cfg, seeds=args.seeds)
    cfg.validate()
    write_resolved(cfg)
    base = cfg.train_config()
    g = _graph_for(cfg)
    cmap = compute_all(g, base.curvature)
    seeds = [base.seed + i for i in range(cfg.seeds)]
    per_seed = None if cfg.graph else (lambda s: _graph_for(cfg, seed=s))
    rows = ablate(g, base, seeds, cfg.variants, cmap, graph_for_seed=per_seed)
    path = _write(Path(cfg.output_dir) / "ablation.csv", ablation_csv(rows))
    for name, s in summarize_ablation(rows).items():
        print(f"{name:>5}  acc {100 * s['acc_mean']:6.2f} +- {100 * s['acc_std']:5.2f}")
    print(f"wrote {path}")
    return EXIT_RUNTIME if any(r.error for r in rows) else EXIT_OK


def cmd_gradcheck(args) -> int:
    seed = 0 if args.seed is None else args.seed
    report = run_gradcheck(seed=seed, repeats=args.repeats)
    if args.out:
        lines = ["op,rows,cols,rel_error,passed"]
        lines += [f"{p.op},{p.shape[0]},{p.shape[1]},{p.rel_error!r},{int(p.passed)}" for p in report.probes]
        _write(Path(args.out) / "gradcheck.csv", "\n".join(lines) + "\n")
    print(report.summary())
    for p in report.failures:
        print(f"  FAIL {p.op} {p.shape} rel_error={p.rel_error:.3e}")
    return EXIT_OK if report.passed else EXIT_GRADCHECK


def cmd_report(args) -> int:
    if args.from_csv:
        src = Path(args.from_csv)
        if not src.is_file():
            raise InputError(f"CSV not found: {src}")
        text = src.read_text(encoding="utf-8")
        if text.startswith("bin_low"):
            svg = consistency_svg(parse_consistency_csv(text))
        else:
            svg = sweep_svg(*parse_sweep_csv(text))
        target = Path(args.out) if args.out else src.with_suffix(".svg")
        if target.suffix != ".svg":
            target = target / (src.stem + ".svg")
        _write(target, svg)
        print(f"wrote {target}")
        return EXIT_OK

    cfg = _resolve(args)
    write_resolved(cfg)
    out = Path(cfg.output_dir)
    g = _graph_for(cfg)
    tcfg = cfg.train_config()
    cmap = compute_all(g, tcfg.curvature)
    if args.checkpoint:
        ck = Path(args.checkpoint)
        if not ck.is_file():
            raise InputError(f"checkpoint not found: {ck}")
        store = ParamStore.load(ck)
        kappa = np.asarray(cmap.node_curvature)
        state = TrainState(store, store.snapshot(), -1, 0, tcfg, kappa)
    else:
        state = train(g, tcfg, cmap)
    rep = gating_consistency_report(state, g, cmap, n_bins=cfg.bins)
    text = rep.to_csv()
    _write(out / "consistency.csv", text)
    _write(out / "consistency.svg", consistency_svg(parse_consistency_csv(text)))
    for name, (value, n) in rep.correlations.items():
        print(f"{name} = {value:+.3f} over {n} nodes")
    for note in rep.notes:
        print(f"note: {note}")
    for param in args.sweep or []:
        values = cfg.theta_values if param == "theta" else cfg.K_values
        points = sweep(g, tcfg, cmap, param, values)
        stext = sweep_csv(param, points)
        _write(out / f"sweep_{param}.csv", stext)
        _write(out / f"sweep_{param}.svg", sweep_svg(*parse_sweep_csv(stext)))
        for v, acc in points:
            print(f"{param}={v:g}: test accuracy {acc:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run config JSON file (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="overrides the training and synthetic seeds")
    p.add_argument("--out", help="output directory (curvature: CSV path)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="curvmix", description="Curvature-routed mixture of geometric graph experts.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic graph")
    _common(p)
    p.add_argument("--spec", help="synthetic spec as a JSON file or JSON text")
    p.add_argument("--stem", default="graph")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("curvature", help="compute edge and node curvature")
    _common(p)
    p.add_argument("--graph", help="edge-list file (synthetic graph when omitted)")
    p.add_argument("--solver", choices=SOLVERS)
    p.add_argument("--p", type=float, help="idleness of the neighbor measure")
    p.add_argument("--compare", action="store_true", help="also write the solver against the exact curvature")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_curvature)

    p = sub.add_parser("train", help="train one model")
    _common(p)
    p.add_argument("--graph", help="edge-list file (synthetic graph when omitted)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="train the ablation grid over several seeds")
    _common(p)
    p.add_argument("--graph", help="edge-list file (synthetic graph when omitted)")
    p.add_argument("--seeds", type=int, help="number of consecutive seeds from --seed")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference audit of every op")
    _common(p)
    p.add_argument("--repeats", type=int, default=3, help="probes per op")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="gate/curvature consistency and sweeps")
    _common(p)
    p.add_argument("--graph", help="edge-list file (synthetic graph when omitted)")
    p.add_argument("--checkpoint", help="use a saved checkpoint instead of training")
    p.add_argument("--sweep", action="append", choices=("theta", "K"), help="add a sweep chart (repeatable)")
    p.add_argument("--from-csv", help="only render the SVG for an existing report CSV")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
