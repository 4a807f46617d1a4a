import math
from typing import Dict, List, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from volumae.config import OptimizerConfig
from volumae.exceptions import NonFiniteGradientError
from volumae.numerics import Tensor


def learning_rate(step: int, config: OptimizerConfig, total_steps: int) -> float:
    """
    Linear warmup from 0 over `warmup_steps`, then cosine annealing from
    `base_lr` down to 0 at `total_steps`.
    """

    base = config.base_lr
    warmup = config.warmup_steps
    if step < warmup:
        return base * step / warmup

    progress = (step - warmup) / max(1, total_steps - warmup)
    progress = min(progress, 1.0)
    return 0.5 * base * (1.0 + math.cos(math.pi * progress))


class AdamState(BaseModel):
    """First and second moments of every parameter, keyed by parameter name"""

    step: int = 0
    """Number of updates applied so far"""
    first: Dict[str, np.ndarray] = Field(default_factory=dict)
    second: Dict[str, np.ndarray] = Field(default_factory=dict)

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @classmethod
    def zeros(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls(
            first={p.name: np.zeros_like(p.data) for p in params},
            second={p.name: np.zeros_like(p.data) for p in params},
        )


def gradient_norm(params: Sequence[Tensor]) -> float:
    total = 0.0
    for param in params:
        if param.grad is not None:
            total += float(np.sum(param.grad * param.grad))
    return math.sqrt(total)


def adamw_step(
    params: Sequence[Tensor],
    state: AdamState,
    lr: float,
    config: OptimizerConfig,
) -> AdamState:
    """
    One AdamW update of `params` in place using their accumulated `grad`,
    with the weight decay decoupled from the adaptive step.

    Raises:
        NonFiniteGradientError: a gradient holds NaN or inf; nothing is updated
    """

    grads: List[np.ndarray] = []
    for param in params:
        grad = param.grad if param.grad is not None else np.zeros_like(param.data)
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError(state.step, param.name or "?")
        grads.append(grad)

    beta1, beta2 = config.betas
    t = state.step + 1
    bias_correction1 = 1.0 - beta1**t
    bias_correction2 = 1.0 - beta2**t

    for param, grad in zip(params, grads):
        m = state.first[param.name]
        v = state.second[param.name]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad

        if config.weight_decay:
            param.data *= 1.0 - lr * config.weight_decay

        m_hat = m / bias_correction1
        v_hat = v / bias_correction2
        param.data -= lr * m_hat / (np.sqrt(v_hat) + config.eps)

    state.step = t
    return state
