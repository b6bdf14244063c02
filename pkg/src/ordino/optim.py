"""Adaptive-moment optimizer over named parameter groups.

Parameters are numpy arrays updated in place, so the model objects that own
them observe every step. Each group carries its own learning rate (mutable,
for schedules) and its own step counter for bias correction, since stages
update disjoint group subsets.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError


class Adam:
    def __init__(
        self,
        groups: dict[str, dict[str, np.ndarray]],
        lrs: dict[str, float],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if set(groups) != set(lrs):
            raise ConfigError(f"group/lr name mismatch: {set(groups) ^ set(lrs)}")
        if not 0 <= beta1 < 1 or not 0 <= beta2 < 1 or eps <= 0:
            raise ConfigError("need 0 <= beta < 1 and eps > 0")
        for name, lr in lrs.items():
            if lr <= 0:
                raise ConfigError(f"learning rate for group {name!r} must be positive")
        self.groups = groups
        self.lrs = dict(lrs)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m = {
            g: {k: np.zeros_like(p) for k, p in params.items()} for g, params in groups.items()
        }
        self._v = {
            g: {k: np.zeros_like(p) for k, p in params.items()} for g, params in groups.items()
        }
        self._t = {g: 0 for g in groups}

    def set_lr(self, group: str, lr: float) -> None:
        if group not in self.lrs:
            raise ConfigError(f"unknown parameter group {group!r}")
        if lr <= 0:
            raise ConfigError("learning rate must be positive")
        self.lrs[group] = float(lr)

    def step(self, grads: dict[str, dict[str, np.ndarray]]) -> None:
        """Apply one update to every group present in ``grads``."""
        for gname, gparams in grads.items():
            if gname not in self.groups:
                raise ConfigError(f"unknown parameter group {gname!r}")
            params = self.groups[gname]
            if set(gparams) != set(params):
                raise ShapeError(
                    f"group {gname!r}: gradient keys {sorted(gparams)} != "
                    f"parameter keys {sorted(params)}"
                )
            self._t[gname] += 1
            t = self._t[gname]
            lr = self.lrs[gname]
            bc1 = 1.0 - self.beta1**t
            bc2 = 1.0 - self.beta2**t
            for pname, grad in gparams.items():
                p = params[pname]
                if grad.shape != p.shape:
                    raise ShapeError(
                        f"{gname}.{pname}: gradient shape {grad.shape} != {p.shape}"
                    )
                m = self._m[gname][pname]
                v = self._v[gname][pname]
                m *= self.beta1
                m += (1.0 - self.beta1) * grad
                v *= self.beta2
                v += (1.0 - self.beta2) * grad * grad
                p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
