"""Named parameter storage with Adam moments and decoupled weight decay."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import numpy as np


class ParamStore:
    def __init__(self, params: Mapping[str, np.ndarray] | None = None):
        self.params: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> None:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=np.float64)
        if value.ndim == 1:
            value = value.reshape(1, -1)
        self.params[name] = value
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def bind(self, tape, prefix: str = "") -> dict:
        """Put every parameter under ``prefix`` on ``tape``; keys lose the prefix."""
        return {
            name[len(prefix):]: tape.param(name, value)
            for name, value in self.params.items()
            if name.startswith(prefix)
        }

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load_snapshot(self, snap: Mapping[str, np.ndarray]) -> None:
        for k, v in snap.items():
            self.params[k] = v.copy()

    def save(self, path) -> None:
        arrays = {}
        for name in self.params:
            arrays[f"param/{name}"] = self.params[name]
            arrays[f"m/{name}"] = self.m[name]
            arrays[f"v/{name}"] = self.v[name]
        arrays["step"] = np.array(self.step)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "ParamStore":
        store = cls()
        with np.load(Path(path)) as data:
            for key in data.files:
                if key.startswith("param/"):
                    name = key[len("param/"):]
                    store.params[name] = data[key].copy()
                    store.m[name] = data[f"m/{name}"].copy()
                    store.v[name] = data[f"v/{name}"].copy()
            store.step = int(data["step"])
        return store


def adam_step(
    store: ParamStore,
    grads: Mapping[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> ParamStore:
    """One bias-corrected Adam update with decoupled weight decay, in place."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, g in grads.items():
        p = store.params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name!r} {p.shape}")
        if weight_decay:
            p -= lr * weight_decay * p
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return store
