"""AdamW with decoupled weight decay, a one-cycle LR policy, and weight EMA."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ParamStore


@dataclass
class OneCycleSchedule:
    """Cosine one-cycle policy: ramp to max_lr, then anneal to a small floor.

    lr(0) = max_lr / div_factor, lr peaks at max_lr when
    t = pct_start * total_steps, and lr(total_steps) = max_lr / final_div_factor.
    """

    max_lr: float
    total_steps: int
    pct_start: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4

    def __post_init__(self):
        if self.max_lr <= 0:
            raise ValueError(f"max_lr must be positive, got {self.max_lr}")
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")
        if not 0.0 < self.pct_start < 1.0:
            raise ValueError(f"pct_start must be in (0, 1), got {self.pct_start}")
        if self.div_factor <= 1 or self.final_div_factor <= 1:
            raise ValueError("div factors must exceed 1")


def onecycle_lr(sched: OneCycleSchedule, t) -> float:
    """Learning rate at step t, 0 <= t <= total_steps."""
    if not 0 <= t <= sched.total_steps:
        raise ValueError(f"step {t} outside [0, {sched.total_steps}]")
    peak = sched.pct_start * sched.total_steps
    initial = sched.max_lr / sched.div_factor
    floor = sched.max_lr / sched.final_div_factor
    if t <= peak:
        pct = t / peak
        return float(initial + (sched.max_lr - initial) * 0.5 * (1.0 - np.cos(np.pi * pct)))
    pct = (t - peak) / (sched.total_steps - peak)
    return float(floor + (sched.max_lr - floor) * 0.5 * (1.0 + np.cos(np.pi * pct)))


class AdamWState:
    """Per-parameter moment estimates plus the shared step counter."""

    def __init__(
        self,
        params: ParamStore,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ValueError(f"betas must be in [0, 1), got {beta1}, {beta2}")
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}


def adamw_step(params: ParamStore, state: AdamWState, lr: float) -> None:
    """One decoupled-weight-decay Adam update with bias correction.

    Parameters with grad None are treated as zero-gradient (decay still
    applies, matching the decoupled formulation).
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    # non-finite intermediates surface through assert_finite below
    with np.errstate(invalid="ignore", over="ignore"):
        for name, p in params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = state.m[name]
            v = state.v[name]
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p.data -= lr * (m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * p.data)
    params.assert_finite(f"after optimizer step {t}")


class EmaState:
    """Exponential moving average of tracked parameter arrays.

    shadow <- decay * shadow + (1 - decay) * param after every optimizer
    step. decay=0 degenerates to tracking the raw weights exactly.
    """

    def __init__(self, shadow: dict[str, np.ndarray], decay: float):
        if not 0.0 <= decay < 1.0:
            raise ValueError(f"decay must be in [0, 1), got {decay}")
        self.decay = decay
        self.shadow = {name: np.array(a, copy=True) for name, a in shadow.items()}

    @classmethod
    def from_params(cls, params: ParamStore, decay: float) -> "EmaState":
        return cls({name: t.data for name, t in params.items()}, decay)

    @classmethod
    def zeros_like(cls, params: ParamStore, decay: float) -> "EmaState":
        return cls({name: np.zeros_like(t.data) for name, t in params.items()}, decay)

    def as_param_store(self) -> ParamStore:
        from .autodiff import Tensor

        return ParamStore({name: Tensor(a.copy()) for name, a in self.shadow.items()})


def ema_update(ema: EmaState, params: ParamStore) -> None:
    """Pull every shadow array toward its parameter by (1 - decay)."""
    d = ema.decay
    for name, p in params.items():
        shadow = ema.shadow[name]
        if shadow.shape != p.data.shape:
            raise ValueError(
                f"shadow shape {shadow.shape} != param shape {p.data.shape} for {name!r}"
            )
        shadow *= d
        shadow += (1.0 - d) * p.data
