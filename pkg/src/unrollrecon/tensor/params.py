"""Named parameter storage, the Adam update, and checkpoint directories."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import serialize
from .core import Tensor


class ParamStore:
    """Ordered name -> parameter map with Adam moment buffers.

    Each entry holds a leaf :class:`Tensor` (its ``.grad`` is the gradient
    slot) and first/second moment arrays of the same shape.
    """

    def __init__(self):
        self.entries = {}
        self.adam_m = {}
        self.adam_v = {}
        self.step_count = 0

    def add(self, name, value, dtype=None):
        if name in self.entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        arr = np.array(value, dtype=dtype)
        t = Tensor(arr, requires_grad=True, name=name)
        self.entries[name] = t
        self.adam_m[name] = np.zeros_like(arr)
        self.adam_v[name] = np.zeros_like(arr)
        return t

    def __getitem__(self, name):
        return self.entries[name]

    def __contains__(self, name):
        return name in self.entries

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def items(self):
        return self.entries.items()

    def num_values(self):
        return int(sum(t.data.size for t in self.entries.values()))

    def zero_grad(self):
        for t in self.entries.values():
            t.grad = None

    def astype(self, dtype):
        """Cast values and moments in place (f32 training, f64 checking)."""
        for name, t in self.entries.items():
            t.data = t.data.astype(dtype)
            self.adam_m[name] = self.adam_m[name].astype(dtype)
            self.adam_v[name] = self.adam_v[name].astype(dtype)
        return self

    def state(self):
        return {name: t.data.copy() for name, t in self.entries.items()}

    def load_state(self, state):
        for name, arr in state.items():
            t = self.entries[name]
            if t.shape != arr.shape:
                raise ValueError(f"{name}: shape {arr.shape} does not match {t.shape}")
            t.data = np.array(arr, dtype=t.dtype)


def adam_step(store, lr, beta1=0.9, beta2=0.999, eps=1e-8, frozen=()):
    """One bias-corrected Adam update; zeroes gradients afterwards.

    Every non-frozen entry must hold a gradient. Frozen entries are skipped.
    """
    names = [n for n in store.entries if n not in frozen]
    missing = [n for n in names if store.entries[n].grad is None]
    if missing:
        raise ValueError(f"missing gradient for {', '.join(missing)}")
    store.step_count += 1
    t = store.step_count
    c1 = 1 - beta1**t
    c2 = 1 - beta2**t
    for n in names:
        p = store.entries[n]
        g = p.grad
        m = store.adam_m[n] = beta1 * store.adam_m[n] + (1 - beta1) * g
        v = store.adam_v[n] = beta2 * store.adam_v[n] + (1 - beta2) * g * g
        p.data = (p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)
    store.zero_grad()
    return store


def save_checkpoint(store, directory, meta=None):
    """One URTN file per parameter plus ``index.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {"step_count": store.step_count, "params": {}}
    for i, (name, t) in enumerate(store.entries.items()):
        fname = f"p{i:03d}.urtn"
        serialize.save(directory / fname, t.data)
        index["params"][name] = {"file": fname, "shape": list(t.shape)}
    if meta:
        index["meta"] = meta
    (directory / "index.json").write_text(json.dumps(index, indent=2))


def load_checkpoint(directory, store=None):
    """Read a checkpoint; fills ``store`` if given, else builds a fresh one.

    Returns ``(store, meta)``.
    """
    directory = Path(directory)
    idx_path = directory / "index.json"
    if not idx_path.exists():
        raise FileNotFoundError(f"no checkpoint index at {idx_path}")
    index = json.loads(idx_path.read_text())
    if store is None:
        store = ParamStore()
        for name, e in index["params"].items():
            store.add(name, serialize.load(directory / e["file"]))
    else:
        state = {}
        for name, e in index["params"].items():
            arr = serialize.load(directory / e["file"])
            if list(arr.shape) != e["shape"]:
                raise ValueError(f"{name}: file shape {arr.shape} disagrees with index {e['shape']}")
            state[name] = arr
        if set(state) != set(store.entries):
            raise ValueError("checkpoint parameter names do not match the model")
        store.load_state(state)
    store.step_count = index["step_count"]
    return store, index.get("meta", {})
