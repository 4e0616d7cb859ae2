"""Gravitational drift of the unconscious state between consumptions.

Item embeddings are fixed attractors; the unconscious state is a test
particle that accelerates toward them between interactions. The kernel is
the inverse-power law in the embedding dimension with Plummer-style
softening: a(u) = sum_i m_i (e_i - u) / (||e_i - u||^2 + eps^2)^(d/2).
With eps = 0 this is the literal unsoftened law. Masses are stored as
log-values, so they stay positive by construction; the constant in front of
the kernel is fixed to one.

The whole kernel is one differentiable primitive with a hand-derived
vector-Jacobian product: integration unrolls many evaluations, so keeping
the kernel fused keeps records short. `finite_difference_check` is the
safety net for the derivation.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .conscious import glorot_uniform
from .errors import ContractViolation
from .integrate import rk4_trajectory
from .tape import (
    affine,
    add,
    apply_op,
    as_value,
    ceil_div_steps,
    concat_last,
    exp,
    logistic,
    mul,
    register_op,
    rsub_const,
    slice_last,
    stack_rows,
    take_row,
)

__all__ = [
    "GravityField",
    "ShiftParams",
    "init_shift",
    "acceleration",
    "potential",
    "shift_state",
    "drift_field",
    "float_state",
    "float_batch_padded",
    "padded_step_count",
]


# ---------------------------------------------------------------------------
# Gravity kernel (fused tape primitive).
# ---------------------------------------------------------------------------

def _gravity_parts(U, E, m, eps):
    """Shared intermediates; U is (B, d), E is (N, d), m is (N,)."""
    diff = E[None, :, :] - U[:, None, :]                    # (B, N, d)
    s = np.einsum("bnd,bnd->bn", diff, diff) + eps * eps    # squared distance + softening
    q = E.shape[1] / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        w = m[None, :] * s ** (-q)
    a = np.einsum("bn,bnd->bd", w, diff)
    return diff, s, w, a


def _gravity_forward(values, ctx):
    u, E, m = values
    eps, cap = ctx
    U = np.atleast_2d(np.asarray(u, dtype=float))
    _, _, _, a = _gravity_parts(U, np.asarray(E, float), np.asarray(m, float), eps)
    if cap is not None:
        norms = np.sqrt(np.einsum("bd,bd->b", a, a))
        over = norms > cap
        if np.any(over):
            safe = np.where(over, norms, 1.0)
            a = a * np.where(over, cap / safe, 1.0)[:, None]
    return a if np.ndim(u) == 2 else a[0]


def _gravity_vjp(node, g):
    uv, Ev, mv = (p.value for p in node.parents)
    eps, cap = node.ctx
    single = np.ndim(uv) == 1
    U = np.atleast_2d(np.asarray(uv, float))
    G = np.atleast_2d(np.asarray(g, float))
    diff, s, w, a_raw = _gravity_parts(U, Ev, mv, eps)
    q = Ev.shape[1] / 2.0

    if cap is not None:
        norms = np.sqrt(np.einsum("bd,bd->b", a_raw, a_raw))
        over = norms > cap
        if np.any(over):
            # Through a -> cap * a / ||a||: scale plus projection term.
            safe = np.where(over, norms, 1.0)
            ag = np.einsum("bd,bd->b", a_raw, G)
            clamped = (cap / safe)[:, None] * G - ((cap * ag) / safe**3)[:, None] * a_raw
            G = np.where(over[:, None], clamped, G)

    P = np.einsum("bd,bnd->bn", G, diff)          # g . (e_i - u) per pair
    dm = np.einsum("bn,bn->n", s ** (-q), P)
    coef = (-2.0 * q) * (w / s) * P               # kernel-derivative weight
    dE = np.einsum("bn,bd->nd", w, G) + np.einsum("bn,bnd->nd", coef, diff)
    dU = -(w.sum(axis=1)[:, None] * G) - np.einsum("bn,bnd->bd", coef, diff)
    return (dU[0] if single else dU, dE, dm)


register_op("gravity", _gravity_forward, _gravity_vjp)


@dataclass
class GravityField:
    """Fixed attractors: embedding rows plus log-masses.

    ``accel_cap`` is an optional training guard that rescales any
    acceleration whose norm exceeds it; physics-property tests run with it
    disabled (None).
    """

    embeddings: object            # (N, d) array or Node
    log_masses: object            # (N,) array or Node
    softening: float = 0.5
    accel_cap: float | None = 100.0
    _masses: object = dataclasses.field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.softening < 0:
            raise ContractViolation(f"softening must be >= 0, got {self.softening}")
        if self.accel_cap is not None and self.accel_cap <= 0:
            raise ContractViolation(f"accel_cap must be positive or None, got {self.accel_cap}")

    @property
    def dim(self) -> int:
        return int(np.shape(as_value(self.embeddings))[1])

    @property
    def n_items(self) -> int:
        return int(np.shape(as_value(self.embeddings))[0])

    def masses(self):
        # exp(log_masses), computed once per field instance so a recorded
        # field adds a single exp to its tape.
        if self._masses is None:
            self._masses = exp(self.log_masses)
        return self._masses


def acceleration(field: GravityField, u):
    """Net acceleration of the unconscious state at position ``u``.

    ``u`` may be a single position (d,) or a stack of positions (B, d);
    the result has the matching shape.
    """
    dim = field.dim
    if np.shape(as_value(u))[-1] != dim:
        raise ContractViolation(
            f"position has {np.shape(as_value(u))[-1]} components, field has {dim}"
        )
    return apply_op(
        "gravity",
        (u, field.embeddings, field.masses()),
        (float(field.softening), field.accel_cap),
    )


def potential(field: GravityField, u) -> float:
    """Softened gravitational potential; its negative gradient equals the
    unclamped acceleration. Only defined for dimension > 2 (the kernel's
    antiderivative changes form at d = 2)."""
    d = field.dim
    if d <= 2:
        raise ContractViolation(f"potential requires dimension > 2, got {d}")
    uv = np.asarray(as_value(u), dtype=float)
    E = np.asarray(as_value(field.embeddings), dtype=float)
    m = np.exp(np.asarray(as_value(field.log_masses), dtype=float))
    diff = E - uv
    s = np.einsum("nd,nd->n", diff, diff) + field.softening**2
    return float(-np.sum(m / ((d - 2.0) * s ** ((d - 2.0) / 2.0))))


# ---------------------------------------------------------------------------
# Shift gate: the conscious state displaces position and velocity at the
# instant of consumption.
# ---------------------------------------------------------------------------

@dataclass
class ShiftParams:
    projection: np.ndarray   # (2d_u, d_c) conscious-to-state map
    gate_input: np.ndarray   # (2d_u, d_c)
    gate_state: np.ndarray   # (2d_u, 2d_u)


def init_shift(rng: np.random.Generator, d_u: int, d_c: int) -> ShiftParams:
    return ShiftParams(
        projection=glorot_uniform(rng, 2 * d_u, d_c),
        gate_input=glorot_uniform(rng, 2 * d_u, d_c),
        gate_state=glorot_uniform(rng, 2 * d_u, 2 * d_u),
    )


def shift_state(params: ShiftParams, c_new, h_prev, return_gate: bool = False):
    """Gated convex move of the extended state toward the conscious
    projection: gamma * proj(c) + (1 - gamma) * h. Both halves of the state
    (position and velocity) shift."""
    gate = logistic(add(affine(params.gate_input, c_new), affine(params.gate_state, h_prev)))
    target = affine(params.projection, c_new)
    shifted = add(mul(gate, target), mul(rsub_const(gate, 1.0), h_prev))
    return (shifted, gate) if return_gate else shifted


# ---------------------------------------------------------------------------
# Drift integration.
# ---------------------------------------------------------------------------

def drift_field(field: GravityField):
    """Derivative of the extended state h = [u, v]: dh/dt = [v, a(u)].
    Autonomous, so integration windows can always start at time zero."""
    d = field.dim

    def deriv(h):
        u = slice_last(h, 0, d)
        v = slice_last(h, d, 2 * d)
        return concat_last(v, acceleration(field, u))

    return deriv


def float_state(field: GravityField, h_start, delta_t: float,
                steps_per_unit: float = 10, min_steps: int = 2,
                n_steps: int | None = None):
    """Drift the extended state for ``delta_t`` time units; zero duration is
    the identity. The step count defaults to ceil(steps_per_unit * delta_t),
    never below ``min_steps``; pass ``n_steps`` to pin it exactly."""
    if delta_t < 0:
        raise ContractViolation(f"delta_t must be >= 0, got {delta_t}")
    if delta_t == 0:
        return h_start
    steps = int(n_steps) if n_steps is not None else ceil_div_steps(steps_per_unit, delta_t, min_steps)
    return rk4_trajectory(drift_field(field), h_start, delta_t, steps)[-1]


def padded_step_count(steps_per_unit: float, pad: float) -> int:
    return ceil_div_steps(steps_per_unit, pad, 1)


def float_batch_padded(field: GravityField, states, delta_ts, pad: float = 1.5,
                       steps_for_pad: int = 15):
    """Drift a whole batch on one shared grid.

    Every member is integrated for the full ``pad`` duration with
    ``steps_for_pad`` uniform steps; each member is then assigned the
    recorded state at the grid point nearest its own delta_t. Members whose
    delta_t is an exact multiple of ``pad / steps_for_pad`` land exactly on
    a grid point, making the selection equal to a per-member integration
    with the matching step partition.
    """
    states = list(states)
    delta_ts = [float(dt) for dt in delta_ts]
    if len(states) != len(delta_ts):
        raise ContractViolation("one delta_t per state required")
    for dt in delta_ts:
        if dt < 0 or dt > pad:
            raise ContractViolation(f"delta_t {dt} outside [0, pad={pad}]")
    if all(dt == 0 for dt in delta_ts):
        return states

    stacked = stack_rows(states)
    trajectory = rk4_trajectory(drift_field(field), stacked, pad, steps_for_pad)
    grid = pad / steps_for_pad
    out = []
    for b, dt in enumerate(delta_ts):
        k = int(np.rint(dt / grid))
        k = min(max(k, 0), steps_for_pad)
        out.append(take_row(trajectory[k], b))
    return out
