"""Gated recurrent update of the conscious state.

The conscious state changes only when an item is consumed: the consumed
item's embedding enters a standard GRU cell (update gate, reset gate,
tanh candidate, convex interpolation). No bias terms anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .tape import affine, add, as_value, hyperbolic_tangent, logistic, mul, rsub_const

__all__ = ["ConsciousParams", "init_conscious", "gru_step", "glorot_uniform"]


@dataclass
class ConsciousParams:
    """GRU weights: ``w_*`` act on the item embedding (d_c x d_u), ``u_*``
    act on the previous conscious state (d_c x d_c)."""

    w_update: np.ndarray
    u_update: np.ndarray
    w_candidate: np.ndarray
    u_candidate: np.ndarray
    w_reset: np.ndarray
    u_reset: np.ndarray


def glorot_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    # Balanced-variance init: uniform in +-sqrt(6 / (fan_in + fan_out)).
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def init_conscious(rng: np.random.Generator, d_c: int, d_u: int) -> ConsciousParams:
    return ConsciousParams(
        w_update=glorot_uniform(rng, d_c, d_u),
        u_update=glorot_uniform(rng, d_c, d_c),
        w_candidate=glorot_uniform(rng, d_c, d_u),
        u_candidate=glorot_uniform(rng, d_c, d_c),
        w_reset=glorot_uniform(rng, d_c, d_u),
        u_reset=glorot_uniform(rng, d_c, d_c),
    )


def gru_step(params: ConsciousParams, c_prev, embedding):
    """One conscious update from a consumed item embedding.

    Returns ``(1 - z) * c_prev + z * c_hat`` where z is the update gate,
    g the reset gate and c_hat the tanh candidate. Every output component
    therefore lies between the corresponding components of ``c_prev`` and
    ``c_hat``.
    """
    d_c = np.shape(as_value(c_prev))[0]
    if np.shape(as_value(params.u_update))[0] != d_c:
        raise ContractViolation(
            f"conscious state has {d_c} components, weights expect "
            f"{np.shape(as_value(params.u_update))[0]}"
        )
    z = logistic(add(affine(params.w_update, embedding), affine(params.u_update, c_prev)))
    g = logistic(add(affine(params.w_reset, embedding), affine(params.u_reset, c_prev)))
    candidate = hyperbolic_tangent(
        add(affine(params.w_candidate, embedding), affine(params.u_candidate, mul(g, c_prev)))
    )
    return add(mul(rsub_const(z, 1.0), c_prev), mul(z, candidate))
