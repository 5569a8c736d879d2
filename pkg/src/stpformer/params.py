"""Parameter containers and initializers.

Each model component keeps its learnable tensors in a small dataclass; the
:class:`ParameterStore` flattens a tree of them into dotted names
(``"blocks.0.w_o"``) for optimizers and checkpoints.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from .tensor import Tensor


def xavier(rng, fan_in, fan_out, shape=None):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape or (fan_in, fan_out)), requires_grad=True)


def normal(rng, shape, std=0.02):
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def const(shape, value=0.0):
    return Tensor(np.full(shape, float(value)), requires_grad=True)


def named_tensors(obj, prefix=""):
    """Yield (dotted_name, Tensor) pairs from nested dataclasses/lists/dicts."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            sub = f"{prefix}.{f.name}" if prefix else f.name
            yield from named_tensors(getattr(obj, f.name), sub)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_tensors(item, f"{prefix}.{i}" if prefix else str(i))
    elif isinstance(obj, dict):
        for key in sorted(obj):
            yield from named_tensors(obj[key], f"{prefix}.{key}" if prefix else key)


def zero_like(obj):
    """Deep copy of a parameter tree with every tensor zeroed."""
    out = clone(obj)
    for _, t in named_tensors(out):
        t.data[...] = 0.0
    return out


def clone(obj):
    if isinstance(obj, Tensor):
        return Tensor(obj.data.copy(), requires_grad=obj.requires_grad, name=obj.name)
    if dataclasses.is_dataclass(obj):
        return dataclasses.replace(obj, **{f.name: clone(getattr(obj, f.name)) for f in dataclasses.fields(obj)})
    if isinstance(obj, list):
        return [clone(x) for x in obj]
    if isinstance(obj, tuple):
        return tuple(clone(x) for x in obj)
    if isinstance(obj, dict):
        return {k: clone(v) for k, v in obj.items()}
    return obj


class ParameterStore:
    """Ordered name -> Tensor view over a parameter tree."""

    def __init__(self, tree):
        self.tree = tree
        self._named = dict(named_tensors(tree))

    def __getitem__(self, name):
        return self._named[name]

    def __contains__(self, name):
        return name in self._named

    def __iter__(self):
        return iter(self._named)

    def __len__(self):
        return len(self._named)

    def items(self):
        return self._named.items()

    def names(self):
        return list(self._named)

    def tensors(self):
        return list(self._named.values())

    def n_parameters(self):
        return sum(t.size for t in self._named.values())

    def zero_grad(self):
        for t in self._named.values():
            t.zero_grad()

    def state(self):
        """Copies of all parameter arrays keyed by name."""
        return {k: t.data.copy() for k, t in self._named.items()}

    def load_state(self, state):
        missing = set(self._named) - set(state)
        extra = set(state) - set(self._named)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing={sorted(missing)}, unexpected={sorted(extra)}")
        for k, t in self._named.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {t.shape}")
            t.data[...] = arr
