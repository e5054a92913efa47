"""AdamW with the AMSGrad second-moment maximum, the one-cycle learning-rate
schedule, and metric-based early stopping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .tensor import Parameter


@dataclass
class AdamW:
    """Decoupled weight decay Adam, AMSGrad variant.

    State is kept per parameter name; parameters that do not require grad
    (frozen) are skipped entirely, so their moments and step counts stay put.
    """

    params: List[Tuple[str, Parameter]]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    v_max: Dict[str, np.ndarray] = field(default_factory=dict)
    t: Dict[str, int] = field(default_factory=dict)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self, lr: Optional[float] = None) -> None:
        lr = self.lr if lr is None else lr
        for name, p in self.params:
            if not p.requires_grad:
                continue
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
                self.v_max[name] = np.zeros_like(p.data)
                self.t[name] = 0
            self.t[name] += 1
            t = self.t[name]
            m, v, v_max = self.m[name], self.v[name], self.v_max[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            np.maximum(v_max, v, out=v_max)
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v_max / (1.0 - self.beta2**t)
            update = m_hat / (np.sqrt(v_hat) + self.eps)
            # decoupled decay uses the pre-step weights
            p.data *= 1.0 - lr * self.weight_decay
            p.data -= lr * update

    def state_arrays(self) -> Dict[str, np.ndarray]:
        out = {}
        # registry order, so the layout does not depend on how the state was filled
        for name in (n for n, _ in self.params if n in self.m):
            out[f"optim.m.{name}"] = self.m[name]
            out[f"optim.v.{name}"] = self.v[name]
            out[f"optim.v_max.{name}"] = self.v_max[name]
        return out

    def load_state(self, arrays: Dict[str, np.ndarray], steps: Dict[str, int]) -> None:
        for name, count in steps.items():
            self.m[name] = np.array(arrays[f"optim.m.{name}"])
            self.v[name] = np.array(arrays[f"optim.v.{name}"])
            self.v_max[name] = np.array(arrays[f"optim.v_max.{name}"])
            self.t[name] = int(count)


@dataclass(frozen=True)
class OneCycleSpec:
    max_lr: float = 1e-3
    total_steps: int = 1000
    pct_start: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4

    @property
    def initial_lr(self) -> float:
        return self.max_lr / self.div_factor

    @property
    def min_lr(self) -> float:
        return self.initial_lr / self.final_div_factor


def _cos_interp(start: float, end: float, frac: float) -> float:
    return end + (start - end) / 2.0 * (1.0 + math.cos(math.pi * frac))


def onecycle_lr(spec: OneCycleSpec, step: float) -> float:
    """Cosine warm-up to ``max_lr`` over ``pct_start`` of the run, then cosine decay."""
    if spec.total_steps <= 0:
        raise ValueError("total_steps must be positive")
    step = min(max(step, 0.0), spec.total_steps)
    peak = spec.pct_start * spec.total_steps
    if step <= peak and peak > 0:
        return _cos_interp(spec.initial_lr, spec.max_lr, step / peak)
    return _cos_interp(spec.max_lr, spec.min_lr, (step - peak) / (spec.total_steps - peak))


@dataclass
class EarlyStopping:
    """Stops after ``patience`` epochs with no improvement above ``min_delta`` (maximising)."""

    patience: int = 10
    min_delta: float = 1e-4
    best: Optional[float] = None
    bad_epochs: int = 0

    def update(self, value: float) -> bool:
        if self.best is None or value > self.best + self.min_delta:
            self.best = value
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def early_stopping(history: Sequence[float], patience: int = 10, min_delta: float = 1e-4) -> bool:
    """Whether training should have stopped by the end of ``history``."""
    es = EarlyStopping(patience, min_delta)
    return any(es.update(v) for v in history)
