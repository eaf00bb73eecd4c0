"""JSON run configuration shared by every CLI subcommand.

Layout::

    {
      "output_dir": "runs/default",
      "graph": null,                      # edge-list path, or null for synthetic
      "synthetic": {...SyntheticSpec fields...},
      "curvature": {...CurvatureConfig fields...},
      "train": {...TrainConfig fields except curvature...},
      "seeds": 5,
      "variants": ["a", ..., "full"],
      "bins": 20,
      "theta_values": [1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
      "K_values": [2, 4, 8, 12, 16, 20]
    }

Every key is optional; unknown keys raise :class:`ConfigError`.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .curvature import CurvatureConfig
from .graph import SyntheticSpec
from .trainer import ABLATION_VARIANTS, TrainConfig


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration (CLI exit code 2)."""


@dataclass(frozen=True)
class RunConfig:
    output_dir: str = "runs/default"
    graph: Optional[str] = None
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    curvature: CurvatureConfig = field(default_factory=CurvatureConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: int = 5
    variants: tuple = tuple(ABLATION_VARIANTS)
    bins: int = 20
    theta_values: tuple = (1e-5, 1e-4, 1e-3, 1e-2, 1e-1)
    K_values: tuple = (2, 4, 8, 12, 16, 20)

    def validate(self) -> None:
        try:
            self.synthetic.validate()
            self.curvature.validate()
            self.train.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.seeds < 1:
            raise ConfigError("seeds must be >= 1")
        unknown = set(self.variants) - set(ABLATION_VARIANTS)
        if unknown:
            raise ConfigError(f"unknown ablation variants {sorted(unknown)}")
        if self.bins < 1:
            raise ConfigError("bins must be >= 1")
        if not self.theta_values or min(self.theta_values) <= 0:
            raise ConfigError("theta_values must be non-empty and positive")
        if not self.K_values or min(self.K_values) < 2:
            raise ConfigError("K_values must be non-empty and >= 2")

    def train_config(self) -> TrainConfig:
        """The training config with the run's curvature settings attached."""
        return replace(self.train, curvature=self.curvature)

    def with_overrides(self, seed: Optional[int] = None, output_dir: Optional[str] = None) -> "RunConfig":
        out = self
        if seed is not None:
            out = replace(out, train=replace(out.train, seed=seed), synthetic=replace(out.synthetic, seed=seed))
        if output_dir is not None:
            out = replace(out, output_dir=str(output_dir))
        return out

    def to_dict(self) -> dict:
        train = self.train.to_dict()
        train.pop("curvature")
        return {
            "output_dir": self.output_dir,
            "graph": self.graph,
            "synthetic": asdict(self.synthetic),
            "curvature": asdict(self.curvature),
            "train": train,
            "seeds": self.seeds,
            "variants": list(self.variants),
            "bins": self.bins,
            "theta_values": list(self.theta_values),
            "K_values": list(self.K_values),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("run config must be a JSON object")
        _reject_unknown("run config", d, {f.name for f in fields(cls)})
        kw = {}
        for key in ("output_dir", "graph", "seeds", "bins"):
            if key in d:
                kw[key] = d[key]
        for key in ("variants", "theta_values", "K_values"):
            if key in d:
                if not isinstance(d[key], list):
                    raise ConfigError(f"{key} must be a list")
                kw[key] = tuple(d[key])
        if "synthetic" in d:
            kw["synthetic"] = _build(SyntheticSpec, "synthetic", d["synthetic"])
        if "curvature" in d:
            kw["curvature"] = _build(CurvatureConfig, "curvature", d["curvature"])
        if "train" in d:
            if not isinstance(d["train"], dict):
                raise ConfigError("train must be an object")
            if "curvature" in d["train"]:
                raise ConfigError("put curvature settings under the top-level 'curvature' key")
            try:
                kw["train"] = TrainConfig.from_dict(d["train"])
            except (TypeError, ValueError) as exc:
                raise ConfigError(str(exc)) from None
        try:
            cfg = cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg


def _reject_unknown(what: str, d: dict, known: set) -> None:
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown {what} keys {sorted(unknown)}")


def _build(cls, what: str, d):
    if not isinstance(d, dict):
        raise ConfigError(f"{what} must be an object")
    _reject_unknown(what, d, {f.name for f in fields(cls)})
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: {exc}") from None


def load_config(path=None) -> RunConfig:
    """Read a run config file; ``None`` gives the defaults."""
    if path is None:
        cfg = RunConfig()
        cfg.validate()
        return cfg
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    return RunConfig.from_dict(data)


def write_resolved(cfg: RunConfig) -> Path:
    """Echo the fully resolved config to ``output_dir/config.resolved.json``."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.resolved.json"
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
