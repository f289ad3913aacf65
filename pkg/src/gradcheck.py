"""
Finite-difference oracles for the analytic gradients in trojanforge.

Centered differences are taken one parameter at a time on a copy of the
model; agreement is measured as the norm of the difference relative to the
larger of the two gradient norms.
"""

from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

try:
    from .errors import InvalidArgumentError
    from .nn_core import Gradients, Model
except ImportError:
    from errors import InvalidArgumentError
    from nn_core import Gradients, Model


def central_difference(func: Callable[[float], float], x: float, h: float) -> float:
    """(f(x + h) - f(x - h)) / 2h"""
    if not h > 0:
        raise InvalidArgumentError(f"step must be positive, got {h}")
    return (func(x + h) - func(x - h)) / (2.0 * h)


@dataclass
class GradientCheck:
    """Analytic and numeric values at the checked coordinates."""

    analytic: np.ndarray
    numeric: np.ndarray

    @property
    def checked(self) -> int:
        return int(self.analytic.size)

    @property
    def relative_error(self) -> float:
        diff = float(np.linalg.norm(self.analytic - self.numeric))
        scale = max(float(np.linalg.norm(self.analytic)), float(np.linalg.norm(self.numeric)))
        if scale == 0.0:
            return 0.0 if diff == 0.0 else float("inf")
        return diff / scale


def check_model_gradient(
    loss_fn: Callable[[Model], float],
    model: Model,
    analytic: Gradients,
    eps: float = 1e-6,
    max_entries: Optional[int] = None,
    seed: int = 0
) -> GradientCheck:
    """
    Compare analytic parameter gradients with centered differences.

    Args:
        loss_fn: Scalar objective of the model's parameters
        model: Point at which both gradients are taken (left unchanged)
        analytic: Gradients claimed for loss_fn at model
        eps: Finite-difference step
        max_entries: Check a seeded random subset of this many coordinates
            instead of every parameter
        seed: Seed of the subset draw

    Returns:
        GradientCheck over the checked coordinates
    """
    params = model.parameters()
    grads = analytic.parameters()
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise InvalidArgumentError("gradient shapes do not match the model's parameters")

    coords = [(i, j) for i, p in enumerate(params) for j in range(p.size)]
    if max_entries is not None and max_entries < len(coords):
        rng = np.random.default_rng(seed)
        picked = np.sort(rng.choice(len(coords), size=max_entries, replace=False))
        coords = [coords[c] for c in picked]

    probe = model.copy()
    probe_params = probe.parameters()
    analytic_values: List[float] = []
    numeric_values: List[float] = []
    for i, j in coords:
        flat = probe_params[i].reshape(-1)
        original = flat[j]
        flat[j] = original + eps
        plus = loss_fn(probe)
        flat[j] = original - eps
        minus = loss_fn(probe)
        flat[j] = original
        numeric_values.append((plus - minus) / (2.0 * eps))
        analytic_values.append(float(grads[i].reshape(-1)[j]))

    return GradientCheck(analytic=np.asarray(analytic_values), numeric=np.asarray(numeric_values))
