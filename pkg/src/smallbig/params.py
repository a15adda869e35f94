"""Named parameter storage with explicit share groups."""

from __future__ import annotations

import hashlib

import numpy as np

from .autograd import Var
from .tensor_ops import BNState


class ParamStore:
    """Map from parameter name to a trainable tensor.

    An alias name resolves to the same ``Var`` as its canonical name, so a
    shared filter has one storage and one gradient slot that sums every use
    site.  Batch-norm running statistics live in ``bn_states`` and are not
    parameters.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Var] = {}
        self.aliases: dict[str, str] = {}
        self.bn_states: dict[str, BNState] = {}
        self.decay: dict[str, bool] = {}
        self.init: dict[str, str] = {}

    def add(self, name: str, shape, decay: bool = False, init: str = "he") -> Var:
        if name in self.params or name in self.aliases:
            raise KeyError(f"duplicate parameter {name!r}")
        v = Var(np.zeros(shape, dtype=self.dtype), requires_grad=True, name=name)
        self.params[name] = v
        self.decay[name] = decay
        self.init[name] = init
        return v

    def alias(self, name: str, target: str) -> Var:
        canonical = self.canonical(target)
        if name in self.params or name in self.aliases:
            raise KeyError(f"duplicate parameter {name!r}")
        self.aliases[name] = canonical
        return self.params[canonical]

    def add_bn_state(self, name: str, channels: int) -> BNState:
        st = BNState.fresh(channels, self.dtype)
        self.bn_states[name] = st
        return st

    def canonical(self, name: str) -> str:
        return self.aliases.get(name, name)

    def __getitem__(self, name: str) -> Var:
        return self.params[self.canonical(name)]

    def __contains__(self, name: str) -> bool:
        return name in self.params or name in self.aliases

    def __len__(self):
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def share_groups(self) -> list[set[str]]:
        groups: dict[str, set[str]] = {}
        for alias, canon in self.aliases.items():
            groups.setdefault(canon, {canon}).add(alias)
        return [groups[k] for k in sorted(groups)]

    def num_params(self) -> int:
        return sum(v.data.size for v in self.params.values())

    def zero_grad(self):
        for v in self.params.values():
            v.grad = None

    def astype(self, dtype) -> "ParamStore":
        """Deep copy with every tensor cast to ``dtype`` (share groups kept)."""
        out = ParamStore(dtype)
        for name, v in self.params.items():
            out.add(name, v.shape, self.decay[name], self.init[name]).data[...] = v.data
        out.aliases = dict(self.aliases)
        for name, st in self.bn_states.items():
            out.bn_states[name] = BNState(
                st.running_mean.astype(dtype), st.running_var.astype(dtype), st.eps, st.momentum
            )
        return out

    def copy(self) -> "ParamStore":
        return self.astype(self.dtype)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in self.params:
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name].data).tobytes())
        for name in self.bn_states:
            st = self.bn_states[name]
            h.update(name.encode())
            h.update(st.running_mean.tobytes())
            h.update(st.running_var.tobytes())
        return h.hexdigest()
