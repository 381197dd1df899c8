from typing import Callable, Optional

import numpy as np

from src.autograd.tensor import Tensor, no_grad
from src.utils.errors import ContractError


def _scalar_value(out) -> float:

    if not isinstance(out, Tensor) or out.data.size != 1:
        shape = out.shape if isinstance(out, Tensor) else type(out).__name__
        raise ContractError(f"finite_diff_check needs a scalar-valued function, got {shape}")
    return float(out.data.reshape(-1)[0])


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    step: float = 1e-5,
    max_coords: Optional[int] = None,
    seed: int = 0
) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    ``max_coords`` checks a seeded random subset of coordinates instead of all
    of them, for parameter tensors too large to sweep.
    """

    if step <= 0:
        raise ContractError(f"step must be positive, got {step}")

    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)

    leaf = Tensor(base, requires_grad=True)
    out = f(leaf)
    _scalar_value(out)
    out.backward()

    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(base)
    analytic = analytic.reshape(-1)

    flat = base.reshape(-1)
    if max_coords is not None and max_coords < flat.size:
        rng = np.random.default_rng(seed)
        coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
    else:
        coords = np.arange(flat.size)

    worst = 0.0
    with no_grad():
        for index in coords:
            plus = flat.copy()
            minus = flat.copy()
            plus[index] += step
            minus[index] -= step

            f_plus = _scalar_value(f(Tensor(plus.reshape(base.shape))))
            f_minus = _scalar_value(f(Tensor(minus.reshape(base.shape))))
            numeric = (f_plus - f_minus) / (plus[index] - minus[index])

            error = abs(analytic[index] - numeric) / max(1.0, abs(analytic[index]))
            worst = max(worst, error)

    return worst
