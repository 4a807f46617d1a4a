"""Losses and the optimizer against direct evaluations of their definitions"""
import math

import numpy as np

from volumae.config import OptimizerConfig, RunConfig
from volumae.model.reconstruct import (
    PatchPrediction,
    chamfer_loss,
    image_loss,
    occupancy_loss,
    total_loss,
    voxel_loss,
)
from volumae.numerics import Tensor
from volumae.schemas import CheckResult
from volumae.training.optimizer import AdamState, adamw_step


CHAMFER_PAIRS = 200
CHAMFER_TOLERANCE = 1e-12
BCE_TOLERANCE = 1e-10
LITERAL_TOLERANCE = 1e-12
ADAMW_TOLERANCE = 1e-12


def brute_force_chamfer(a: np.ndarray, b: np.ndarray) -> float:
    def directed(source, target):
        total = 0.0
        for p in source:
            total += min(sum((p[k] - q[k]) ** 2 for k in range(3)) for q in target)
        return total / len(source)

    return directed(a, b) + directed(b, a)


def check_chamfer_oracle(config: RunConfig) -> CheckResult:
    rng = np.random.default_rng(config.seed)
    error = 0.0
    for _ in range(CHAMFER_PAIRS):
        a = rng.normal(size=(rng.integers(1, 33), 3))
        b = rng.normal(size=(rng.integers(1, 33), 3))
        expected = brute_force_chamfer(a, b)
        error = max(error, abs(chamfer_loss(a, b).item() - expected) / max(expected, 1.0))
    return CheckResult.at_most("chamfer_brute_force", error, CHAMFER_TOLERANCE)


def check_bce_oracle(config: RunConfig) -> CheckResult:
    rng = np.random.default_rng(config.seed)
    error = 0.0
    for _ in range(50):
        logits = rng.normal(scale=2.0, size=20)
        labels = (rng.uniform(size=20) < 0.5).astype(np.float64)
        sigmoid = 1.0 / (1.0 + np.exp(-logits))
        direct = -np.mean(labels * np.log(sigmoid) + (1 - labels) * np.log(1 - sigmoid))
        error = max(error, abs(occupancy_loss(logits, labels).item() - direct))

    error = max(error, abs(occupancy_loss(np.zeros(4), np.ones(4)).item() - math.log(2.0)))
    error = max(error, occupancy_loss(np.full(3, 1e3), np.ones(3)).item())
    return CheckResult.at_most("bce_oracle", error, BCE_TOLERANCE)


def check_loss_literals(config: RunConfig) -> CheckResult:
    """The loss combinations and the image loss on hand-evaluated inputs"""

    rng = np.random.default_rng(config.seed)
    targets = rng.uniform(size=(5, 12))
    mask = np.array([True, False, True, False, True])
    shifted = targets + 0.1
    shifted[~mask] += rng.normal(size=(2, 12))

    errors = [
        abs(voxel_loss(1.5, 0.5).item() - 2.0),
        abs(total_loss(2.0, 0.5).item() - 2.5),
        abs(total_loss(2.0, 0.5, (1.0, 0.0)).item() - 2.0),
        abs(chamfer_loss([[0.0, 0.0, 0.0]], [[1.0, 0.0, 0.0]]).item() - 2.0),
        abs(image_loss(PatchPrediction(pixels=Tensor(shifted)), targets, mask).item() - 0.01),
    ]
    return CheckResult.at_most("loss_literals", max(errors), LITERAL_TOLERANCE)


def check_adamw_recurrence(config: RunConfig) -> CheckResult:
    """A scalar parameter after two steps against the update written out by hand"""

    optimizer = OptimizerConfig(weight_decay=0.01)
    beta1, beta2 = optimizer.betas
    grads = (0.5, -0.25)
    rates = (0.1, 0.05)

    param = Tensor(np.array([1.0]), requires_grad=True, name="w")
    state = AdamState.zeros([param])

    expected, m, v = 1.0, 0.0, 0.0
    for t, (grad, lr) in enumerate(zip(grads, rates), start=1):
        param.grad = np.array([grad])
        adamw_step([param], state, lr, optimizer)

        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad * grad
        expected *= 1 - lr * optimizer.weight_decay
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        expected -= lr * m_hat / (math.sqrt(v_hat) + optimizer.eps)

    return CheckResult.at_most(
        "adamw_recurrence", abs(param.data[0] - expected), ADAMW_TOLERANCE
    )
