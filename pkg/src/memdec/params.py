"""Named parameter tensors with init tags, optimizer accumulators, and checkpoints.

Checkpoints are JSON so they round-trip bitwise at double precision (Python
float repr is exact) and diff cleanly; keys are sorted so identical runs
produce identical bytes.
"""

from __future__ import annotations

import json

import numpy as np

from .autodiff import Tensor

CHECKPOINT_VERSION = 1
INIT_SCHEMES = ("orthogonal", "gaussian", "zero")


class ParameterStore:
    """Ordered map name -> trainable Tensor, with per-name metadata."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._init_tags: dict[str, str] = {}
        self.acc_grad_sq: dict[str, np.ndarray] = {}
        self.acc_update_sq: dict[str, np.ndarray] = {}

    def add(self, name: str, values: np.ndarray, init_tag: str) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        if init_tag not in INIT_SCHEMES:
            raise ValueError(f"unknown init scheme {init_tag!r}")
        tensor = Tensor(np.asarray(values, dtype=np.float64), requires_grad=True, op=f"param:{name}")
        self._params[name] = tensor
        self._init_tags[name] = init_tag
        self.acc_grad_sq[name] = np.zeros_like(tensor.data)
        self.acc_update_sq[name] = np.zeros_like(tensor.data)
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def init_tag(self, name: str) -> str:
        return self._init_tags[name]

    def param_count(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def gradients(self) -> dict[str, np.ndarray]:
        """Current gradient per parameter; zeros for parameters backward never touched."""
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in self._params.items()
        }

    def clone(self) -> "ParameterStore":
        other = ParameterStore()
        for name, t in self._params.items():
            other.add(name, t.data.copy(), self._init_tags[name])
            other.acc_grad_sq[name] = self.acc_grad_sq[name].copy()
            other.acc_update_sq[name] = self.acc_update_sq[name].copy()
        return other


def save_checkpoint(path, store: ParameterStore, meta: dict) -> None:
    """Write store + metadata as sorted-key JSON; values stay exact float64."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "meta": meta,
        "params": {
            name: {
                "shape": list(t.data.shape),
                "init": store.init_tag(name),
                "values": t.data.ravel().tolist(),
                "acc_grad_sq": store.acc_grad_sq[name].ravel().tolist(),
                "acc_update_sq": store.acc_update_sq[name].ravel().tolist(),
            }
            for name, t in store.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))


def load_checkpoint(path):
    """Read a checkpoint back; returns (store, meta)."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    store = ParameterStore()
    for name in sorted(payload["params"]):
        entry = payload["params"][name]
        shape = tuple(entry["shape"])
        store.add(name, np.asarray(entry["values"], dtype=np.float64).reshape(shape), entry["init"])
        store.acc_grad_sq[name] = np.asarray(entry["acc_grad_sq"], dtype=np.float64).reshape(shape)
        store.acc_update_sq[name] = np.asarray(entry["acc_update_sq"], dtype=np.float64).reshape(shape)
    return store, payload["meta"]
