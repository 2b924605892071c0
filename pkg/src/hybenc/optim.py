"""Adam with decoupled weight decay and a linear warmup/decay schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

# parameter leaf names excluded from weight decay (LN params and biases)
_NO_DECAY = ("gamma", "beta", "b", "bias", "b_c", "b_delta")


@dataclass
class TrainConfig:
    peak_lr: float = 3e-4
    total_steps: int = 2000
    warmup_steps: int | None = None  # default: 5% of total
    batch_size: int = 16
    mlm_prob: float = 0.15
    replace_split: tuple = (0.8, 0.1, 0.1)
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-6
    weight_decay: float = 0.01
    seed: int = 0
    checkpoint_every: int = 0  # 0: final checkpoint only
    # optional two-phase length schedule: cap sequence length at
    # max_len_phase1 for the first phase_split of steps, then max_len_phase2
    max_len_phase1: int | None = None
    max_len_phase2: int | None = None
    phase_split: float = 0.9

    def __post_init__(self):
        if self.warmup_steps is None:
            self.warmup_steps = max(1, int(0.05 * self.total_steps))
        if self.total_steps > 0 and self.warmup_steps >= self.total_steps:
            raise ConfigError("warmup_steps must be < total_steps")
        if abs(sum(self.replace_split) - 1.0) > 1e-9:
            raise ConfigError("replacement split must sum to 1")


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to peak, then linear decay to 0 at total_steps."""
    if step <= cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    span = cfg.total_steps - cfg.warmup_steps
    return cfg.peak_lr * max(0.0, (cfg.total_steps - step) / span)


def decays(name: str) -> bool:
    return name.rsplit(".", 1)[-1] not in _NO_DECAY


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def ensure(self, name: str, like: np.ndarray) -> None:
        if name not in self.m:
            self.m[name] = np.zeros_like(like)
            self.v[name] = np.zeros_like(like)


def adam_step(named_params: dict, grads: dict, state: AdamState, step: int, cfg: TrainConfig) -> float:
    """One bias-corrected Adam update with decoupled weight decay.

    Decay is applied to the parameter before the Adam delta; LN parameters
    and biases are exempt. Returns the learning rate used.
    """
    lr = lr_at(step, cfg)
    bc1 = 1.0 - cfg.beta1**step
    bc2 = 1.0 - cfg.beta2**step
    for name, p in named_params.items():
        g = grads[name]
        if not isinstance(g, np.ndarray):
            g = g.data  # autograd tensor
        g = np.asarray(g)
        state.ensure(name, p.data)
        if cfg.weight_decay > 0.0 and decays(name):
            p.data = p.data * (1.0 - lr * cfg.weight_decay)
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
    return lr
