"""Finite-difference gradient checking.

Every differentiable operation in the package is validated against central
differences through :func:`gradcheck`. The function under test may return a
tensor of any shape; it is reduced to a scalar by a fixed random projection so
that the whole Jacobian (not just its column sums) is exercised.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, mul, sum_


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_input: list[float] = field(default_factory=list)
    checked_elements: int = 0

    def passed(self, rtol: float = 1e-4) -> bool:
        return self.max_rel_error < rtol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, tiny: float = 1e-12) -> float:
    """||a - n|| / max(||a||, ||n||); a pair with both norms below ``tiny`` counts as exact."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    diff = np.linalg.norm(analytic - numeric)
    if scale < tiny:
        return 0.0
    return float(diff / scale)


def gradcheck(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    max_samples: int | None = None,
    seed: int = 0,
) -> GradCheckResult:
    """Compare tape gradients of ``fn(*inputs)`` with central differences.

    ``inputs`` must be float64 tensors with ``requires_grad=True``; they are
    perturbed in place and restored. With ``max_samples`` only that many
    randomly chosen elements per input are differenced (the analytic
    gradient is still computed in full).
    """
    rng = np.random.default_rng(seed)
    probe = fn(*inputs)
    weights = Tensor(rng.standard_normal(probe.shape))

    def scalar():
        return sum_(mul(fn(*inputs), weights))

    with Tape() as tape:
        loss = scalar()
    grads = tape.backward(loss)
    # rounding noise of one central difference; gradients below it on both sides count as zero
    noise = 100 * np.finfo(np.float64).eps * (abs(loss.item()) + 1.0) / eps

    per_input, total = [], 0
    for t in inputs:
        analytic = grads.get(t, np.zeros_like(t.data)).reshape(-1)
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_samples is not None and flat.size > max_samples:
            idx = rng.choice(flat.size, size=max_samples, replace=False)
        numeric = np.empty(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            up = scalar().item()
            flat[i] = orig - eps
            down = scalar().item()
            flat[i] = orig
            numeric[j] = (up - down) / (2 * eps)
        per_input.append(relative_error(analytic[idx], numeric, tiny=noise * np.sqrt(idx.size)))
        total += idx.size
    return GradCheckResult(max(per_input, default=0.0), per_input, total)
