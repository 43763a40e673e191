"""Parameter update rules and learning-rate schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

VARIANTS = ("sgd", "adam", "rmsprop", "adagrad", "nadam")


@dataclass
class OptimizerState:
    variant: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    rho: float = 0.9
    momentum: float = 0.0
    weight_decay: float = 0.0
    t: int = 0
    # slot name -> {param name -> array}
    slots: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown optimizer {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and 0 <= self.rho < 1):
            raise ValueError("beta1, beta2 and rho must lie in [0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.weight_decay < 0 or self.momentum < 0:
            raise ValueError("weight decay and momentum must be non-negative")

    def hyper(self):
        return {k: getattr(self, k) for k in ("variant", "lr", "beta1", "beta2", "eps", "rho", "momentum", "weight_decay")}

    def _slot(self, slot, name, like):
        store = self.slots.setdefault(slot, {})
        if name not in store:
            store[name] = np.zeros_like(like)
        elif store[name].shape != like.shape:
            raise ShapeError(f"optimizer slot {slot}/{name} has shape {store[name].shape}, parameter {like.shape}")
        return store[name]

    def step(self, params, grads, lr_t=None):
        """Update ``params`` in place from ``grads`` (dicts keyed by name)."""
        lr = self.lr if lr_t is None else lr_t
        if not lr > 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.t += 1
        t = self.t
        wd = self.weight_decay
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
            v = self.variant
            if v == "sgd":
                d = g + wd * p if wd else g
                if self.momentum:
                    buf = self._slot("momentum", name, p)
                    buf *= self.momentum
                    buf += d
                    d = buf
                p -= lr * d
                continue
            if wd:
                p -= lr * wd * p
            if v == "adagrad":
                acc = self._slot("acc", name, p)
                acc += g * g
                p -= lr * g / (np.sqrt(acc) + self.eps)
            elif v == "rmsprop":
                sq = self._slot("v", name, p)
                sq *= self.rho
                sq += (1 - self.rho) * g * g
                p -= lr * g / (np.sqrt(sq) + self.eps)
            else:
                m = self._slot("m", name, p)
                sq = self._slot("v", name, p)
                b1, b2 = self.beta1, self.beta2
                m *= b1
                m += (1 - b1) * g
                sq *= b2
                sq += (1 - b2) * g * g
                v_hat = sq / (1 - b2 ** t)
                if v == "adam":
                    m_hat = m / (1 - b1 ** t)
                else:
                    # Nesterov lookahead: blend the next-step momentum with the current gradient
                    m_hat = b1 * m / (1 - b1 ** (t + 1)) + (1 - b1) * g / (1 - b1 ** t)
                p -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return params


@dataclass(frozen=True)
class Schedule:
    kind: str = "constant"
    lr_max: float = 1e-3
    lr_min: float = 0.0
    T: int = 1

    def __post_init__(self):
        if self.kind not in ("constant", "cosine_annealing"):
            raise ValueError(f"unknown schedule {self.kind!r}")
        if self.lr_min > self.lr_max:
            raise ValueError("lr_min exceeds lr_max")
        if self.T < 1:
            raise ValueError("schedule period must be at least 1")

    def rate(self, epoch):
        if self.kind == "constant":
            return self.lr_max
        return cosine_annealing_lr(self, epoch)


def cosine_annealing_lr(sched, t):
    """Half-cosine decay from ``lr_max`` at t=0 to ``lr_min`` at t=T; clamps past T."""
    if t >= sched.T:
        return sched.lr_min
    t = max(t, 0)
    return sched.lr_min + 0.5 * (sched.lr_max - sched.lr_min) * (1.0 + math.cos(math.pi * t / sched.T))
