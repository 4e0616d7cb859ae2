"""Fixed-step classical Runge-Kutta integration.

The stepper is written against plain arithmetic (`+` and scalar `*`), so the
same code integrates numpy arrays and recorded :class:`~gravrec.tape.Node`
states. Recording the stages on the tape is what makes the trained dynamics
exactly differentiable: gradients flow through every stage of every step.
"""

from __future__ import annotations

from .errors import ContractViolation, IntegrationError
from .tape import finite

__all__ = ["rk4_trajectory"]


def rk4_trajectory(field, y0, duration: float, n_steps: int) -> list:
    """Integrate ``dy/dt = field(y)`` over ``duration`` with uniform steps.

    Returns the full trajectory ``[y0, y1, ..., y_{n_steps}]``. The field is
    autonomous (no explicit time argument); zero duration returns copies of
    the initial state without evaluating the field.

    Raises :class:`IntegrationError` naming the step index when a non-finite
    state appears.
    """
    n_steps = int(n_steps)
    if n_steps < 1:
        raise ContractViolation(f"n_steps must be >= 1, got {n_steps}")
    if duration < 0:
        raise ContractViolation(f"duration must be >= 0, got {duration}")
    if not finite(y0):
        raise IntegrationError("non-finite initial state at step 0")
    if duration == 0:
        return [y0] * (n_steps + 1)

    h = duration / n_steps
    trajectory = [y0]
    y = y0
    for step in range(n_steps):
        k1 = field(y)
        k2 = field(y + (h / 2.0) * k1)
        k3 = field(y + (h / 2.0) * k2)
        k4 = field(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not finite(y):
            raise IntegrationError(
                f"non-finite state at step {step + 1} of {n_steps}"
            )
        trajectory.append(y)
    return trajectory
