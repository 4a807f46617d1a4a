from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from volumae.exceptions import NonFiniteError
from volumae.numerics.tensor import Tensor, backward, no_grad


# Entries whose exact gradient cancels to zero (e.g. shifts absorbed by a
# layer norm) are only resolved by central differences down to roundoff,
# so the denominator never drops below this fraction of the largest entry.
RELATIVE_FLOOR_FRACTION = 1e-3
ABSOLUTE_FLOOR = 1e-8


def finite_difference_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """
    Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.

    `x` is perturbed in place and restored before returning.
    """

    if h <= 0:
        raise ValueError("The finite difference step must be positive")

    x = x.data if isinstance(x, Tensor) else x
    grad = np.zeros_like(x, dtype=np.float64)
    flat_x = x.reshape(-1)
    flat_grad = grad.reshape(-1)

    for i in range(flat_x.size):
        original = flat_x[i]
        flat_x[i] = original + h
        f_plus = float(f(x))
        flat_x[i] = original - h
        f_minus = float(f(x))
        flat_x[i] = original

        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteError("finite_difference_grad")

        flat_grad[i] = (f_plus - f_minus) / (2 * h)

    return grad


def relative_error(
    analytic: np.ndarray,
    numeric: np.ndarray,
    floor_fraction: float = RELATIVE_FLOOR_FRACTION,
) -> float:
    """
    Largest elementwise |a - n| / max(|a|, |n|, floor) with
    floor = max(1e-8, floor_fraction * max|n|).

    The plain form max(|a|, |n|, 1e-8) is `floor_fraction=0`. The default is
    more forgiving on entries far below the scale of their tensor: one whose
    true gradient cancels to zero is measured against the largest numeric
    entry, not against its own roundoff.
    """

    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    scale = np.max(np.abs(numeric)) if numeric.size else 0.0
    floor = max(ABSOLUTE_FLOOR, floor_fraction * scale)
    denominator = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denominator))


@dataclass
class GradCheckReport:
    errors: Dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def passed(self, tolerance: float) -> bool:
        return self.max_error <= tolerance


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> GradCheckReport:
    """
    Compare `backward()` against central differences for every tensor in `params`.

    `loss_fn` rebuilds the graph from the current parameter values. With
    `max_entries`, only that many randomly chosen coordinates of each
    parameter are differentiated numerically.
    """

    for param in params:
        param.grad = None
    loss = loss_fn()
    analytic_grads: List[np.ndarray] = [
        g.copy() for g in backward(loss, inputs=list(params))
    ]

    rng = np.random.default_rng(seed)
    report = GradCheckReport()

    for position, (param, analytic) in enumerate(zip(params, analytic_grads)):
        flat = param.data.reshape(-1)
        coordinates = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            coordinates = np.sort(rng.choice(flat.size, size=max_entries, replace=False))

        numeric = np.zeros(coordinates.size)
        for slot, i in enumerate(coordinates):
            coordinate = np.zeros(1)

            def f(value: np.ndarray, i=i) -> float:
                original = flat[i]
                flat[i] = value[0]
                try:
                    with no_grad():
                        return loss_fn().item()
                finally:
                    flat[i] = original

            coordinate[0] = flat[i]
            numeric[slot] = finite_difference_grad(f, coordinate, h)[0]

        name = param.name or f"param_{position}"
        report.errors[name] = relative_error(analytic.reshape(-1)[coordinates], numeric)

    return report
