"""Finite-difference verification of backward passes."""

from __future__ import annotations

from collections.abc import Callable, Mapping
from dataclasses import dataclass, field

import numpy as np

from sxextract.nn.value import Value, no_grad

__all__ = ["GradCheckFailure", "GradCheckReport", "grad_check", "relative_error"]


@dataclass(frozen=True)
class GradCheckFailure:
    parameter: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    relative_error: float


@dataclass
class GradCheckReport:
    """Outcome of comparing backward gradients with central differences."""

    tolerance: float
    checked: int = 0
    max_relative_error: float = 0.0
    failures: list[GradCheckFailure] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def relative_error(analytic: float, numeric: float, floor: float = 1e-5) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    loss_fn: Callable[[], Value],
    params: Mapping[str, Value],
    tolerance: float = 1e-4,
    step: float = 1e-5,
    samples_per_param: int = 8,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients to central differences on sampled coordinates.

    ``loss_fn`` must rebuild the graph on every call and be deterministic.
    Failures are recorded in the report, never raised.
    """
    for param in params.values():
        param.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for name, p in params.items()}

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)
    for name, param in params.items():
        flat_count = param.data.size
        count = min(samples_per_param, flat_count)
        picks = rng.choice(flat_count, size=count, replace=False)
        for flat_index in picks:
            index = np.unravel_index(int(flat_index), param.data.shape)
            original = param.data[index].copy()
            with no_grad():
                param.data[index] = original + step
                plus = loss_fn().item()
                param.data[index] = original - step
                minus = loss_fn().item()
            param.data[index] = original
            numeric = (plus - minus) / (2.0 * step)
            exact = float(analytic[name][index])
            error = relative_error(exact, numeric)
            report.checked += 1
            report.max_relative_error = max(report.max_relative_error, error)
            if error > tolerance:
                report.failures.append(GradCheckFailure(name, tuple(int(i) for i in index), exact, numeric, error))
    for param in params.values():
        param.zero_grad()
    return report
