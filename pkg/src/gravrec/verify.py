"""End-to-end gradient verification harness.

Builds a small random instance of the full cell, computes the total loss
gradient two ways (reverse sweep of the record vs central differences of
the black-box loss), and reports the worst relative error per parameter
group. The instance draws weights uniformly in [-1, 1] and embeddings from
a unit normal so every gate stays active: with step 1e-6 the difference
quotient carries roundoff noise of order 1e-9, so near-dead paths with
gradients at that scale would drown the comparison in noise rather than
signal.
"""

from __future__ import annotations

import numpy as np

from .data import BehaviourSequence
from .gradcheck import GradientCheckReport, finite_difference_check
from .model import (
    CellConfig,
    forward_sequence,
    lift_model,
    model_from_arrays,
    model_to_arrays,
    init_model,
    sequence_loss,
)
from .tape import Tape, reverse_gradients

__all__ = ["gradient_check_instance", "run_gradient_check"]


def gradient_check_instance(seed: int = 7, n_items: int = 8, d_u: int = 4,
                            d_c: int = 3, length: int = 4, n_sequences: int = 3):
    """A lively random instance: parameter dict, sequences, cell config."""
    rng = np.random.default_rng(seed)
    arrays = {k: np.asarray(v, float)
              for k, v in model_to_arrays(init_model(n_items, d_u, d_c, seed)).items()}
    arrays["embeddings"] = rng.normal(0.0, 1.0, arrays["embeddings"].shape)
    arrays["log_masses"] = rng.normal(-1.0, 0.5, arrays["log_masses"].shape)
    for name, value in arrays.items():
        if name not in ("embeddings", "log_masses"):
            arrays[name] = rng.uniform(-1.0, 1.0, value.shape)
    sequences = [
        BehaviourSequence(
            f"check_{s}",
            rng.integers(0, n_items, size=length),
            np.cumsum(rng.uniform(0.2, 1.4, size=length)),
        )
        for s in range(n_sequences)
    ]
    cell = CellConfig(softening=0.5, accel_cap=None, fixed_steps=2)
    return arrays, sequences, cell


def run_gradient_check(seed: int = 7, step: float = 1e-6,
                       tol: float = 1e-4) -> GradientCheckReport:
    """Gradient check of the full-model loss on the standard tiny instance."""
    arrays, sequences, cell = gradient_check_instance(seed)

    def total_loss(params: dict) -> float:
        model = model_from_arrays(params)
        total = 0.0
        for seq in sequences:
            distributions, _ = forward_sequence(model, seq, cell)
            total += float(sequence_loss(distributions, seq.items[1:]))
        return total

    tape = Tape()
    lifted = lift_model(tape, model_from_arrays(arrays))
    loss = None
    for seq in sequences:
        distributions, _ = forward_sequence(lifted, seq, cell)
        term = sequence_loss(distributions, seq.items[1:])
        loss = term if loss is None else loss + term
    analytic = reverse_gradients(tape, loss)
    return finite_difference_check(total_loss, arrays, analytic, step=step, tol=tol)
