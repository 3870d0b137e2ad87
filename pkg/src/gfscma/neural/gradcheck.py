"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .engine import Parameter, Tensor, no_grad


@dataclass
class GradcheckReport:
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)
    checked_entries: int = 0

    @property
    def max_rel_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def summary(self) -> str:
        worst = max(self.errors, key=self.errors.get) if self.errors else "-"
        state = "PASS" if self.passed else "FAIL"
        return (f"{state} max_rel_err={self.max_rel_error:.3e} (worst: {worst}) "
                f"tol={self.tolerance:g} entries={self.checked_entries}")


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / (||a|| + ||n||)``, zero when both vanish."""
    den = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if den == 0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / den)


def gradcheck(loss_fn: Callable[[], Tensor], params: Sequence[Parameter], tolerance: float,
              step: float = 1e-5, max_entries: int | None = None, seed: int = 0) -> GradcheckReport:
    """Compare ``d loss / d param`` against central differences.

    ``loss_fn`` must rebuild the graph from the current parameter values and
    return a scalar. Parameters must be float64. With ``max_entries`` only that
    many randomly chosen coordinates per parameter are probed.
    """
    for p in params:
        if p.dtype != np.float64:
            raise TypeError(f"gradcheck needs float64 parameters; {p.name} is {p.dtype}")
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {id(p): (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for p in params}
    rng = np.random.default_rng(seed)
    report = GradcheckReport(tolerance)
    for p in params:
        flat = p.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if max_entries is None or n <= max_entries else np.sort(
            rng.choice(n, size=max_entries, replace=False))
        num = np.empty(idx.size)
        with no_grad():
            for k, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + step
                up = float(loss_fn().data)
                flat[i] = orig - step
                down = float(loss_fn().data)
                flat[i] = orig
                num[k] = (up - down) / (2 * step)
        report.errors[p.name or f"param{len(report.errors)}"] = relative_error(
            analytic[id(p)].reshape(-1)[idx], num)
        report.checked_entries += idx.size
    for p in params:
        p.zero_grad()
    return report
