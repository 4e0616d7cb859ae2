"""Central-difference verification of analytic gradients.

This is the independent oracle for everything `reverse_gradients` produces:
it never touches the tape, only the black-box scalar function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation

__all__ = ["GradientCheckReport", "finite_difference_check"]


@dataclass
class GradientCheckReport:
    """Per-parameter-group worst relative error plus hard failures."""

    tol: float
    step: float
    max_rel_error: dict[str, float] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        if self.failures:
            return False
        return all(err <= self.tol for err in self.max_rel_error.values())

    def summary(self) -> str:
        lines = []
        for name, err in self.max_rel_error.items():
            mark = "ok" if err <= self.tol else "FAIL"
            lines.append(f"{name:<24} max rel err {err:.3e}  [{mark}]")
        for msg in self.failures:
            lines.append(f"FAILURE: {msg}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'} (tol {self.tol:g})")
        return "\n".join(lines)


def finite_difference_check(f, params, analytic, step: float = 1e-6,
                            tol: float = 1e-4) -> GradientCheckReport:
    """Compare analytic gradients against central differences of ``f``.

    ``f`` maps a dict of named parameter arrays to a scalar and must be
    deterministic. ``analytic`` holds one gradient array per parameter name.
    The relative error denominator is max(|analytic|, |numeric|, 1e-8), so
    agreeing zeros pass and disagreements near zero still register.

    Non-finite function values are reported as failures naming the parameter
    coordinate that produced them.
    """
    if step <= 0:
        raise ContractViolation(f"step must be positive, got {step}")

    work = {name: np.array(value, dtype=float) for name, value in params.items()}
    report = GradientCheckReport(tol=tol, step=step)

    for name, array in work.items():
        if name not in analytic:
            raise ContractViolation(f"no analytic gradient supplied for {name!r}")
        grad = np.asarray(analytic[name], dtype=float)
        if grad.shape != array.shape:
            raise ContractViolation(
                f"analytic gradient for {name!r} has shape {grad.shape}, "
                f"expected {array.shape}"
            )
        flat = array.reshape(-1)
        grad_flat = grad.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            f_plus = float(f(work))
            flat[i] = saved - step
            f_minus = float(f(work))
            flat[i] = saved
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                report.failures.append(f"non-finite value perturbing {name}[{i}]")
                continue
            numeric = (f_plus - f_minus) / (2.0 * step)
            denom = max(abs(grad_flat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(grad_flat[i] - numeric) / denom)
        report.max_rel_error[name] = worst
    return report
