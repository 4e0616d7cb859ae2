"""Full cell: parameter container, per-sequence forward pass, loss.

State per sequence: a conscious vector (updated by the recurrent gate when
an item is consumed) and an extended unconscious state [position, velocity]
(shifted at consumption, drifting under gravity in between). Both start at
zero. Step j consumes item j at its timestamp, drifts until the next
timestamp, and scores all items against the decision state to predict
item j+1, so the prediction is strictly one step ahead of everything it has
seen. The embedding table is shared between the consumption input and the
scoring distances.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .conscious import ConsciousParams, gru_step, init_conscious
from .data import BehaviourSequence
from .decision import (
    DecisionParams,
    RecommendationDistribution,
    decision_state,
    init_decision,
    score_items,
)
from .errors import ContractViolation
from .tape import Tape, add, as_value, log, pick, scale, slice_last, take_row
from .unconscious import (
    GravityField,
    ShiftParams,
    float_state,
    init_shift,
    shift_state,
)

__all__ = [
    "ModelParameters",
    "CellConfig",
    "SequenceDiagnostics",
    "PARAM_ORDER",
    "init_model",
    "model_to_arrays",
    "model_from_arrays",
    "lift_model",
    "field_of",
    "forward_sequence",
    "sequence_loss",
]


PARAM_ORDER = (
    "embeddings",
    "log_masses",
    "gru.w_update",
    "gru.u_update",
    "gru.w_candidate",
    "gru.u_candidate",
    "gru.w_reset",
    "gru.u_reset",
    "shift.projection",
    "shift.gate_input",
    "shift.gate_state",
    "decision.projection",
    "decision.gate_input",
    "decision.gate_state",
)


@dataclass
class ModelParameters:
    """Every trainable array. Fields may hold recorded Nodes during
    training; shapes are the source of truth for the dimensions."""

    embeddings: object          # (N, d_u), shared by input lookup and scoring
    log_masses: object          # (N,)
    gru: ConsciousParams
    shift: ShiftParams
    decision: DecisionParams

    @property
    def n_items(self) -> int:
        return int(np.shape(as_value(self.embeddings))[0])

    @property
    def d_u(self) -> int:
        return int(np.shape(as_value(self.embeddings))[1])

    @property
    def d_c(self) -> int:
        return int(np.shape(as_value(self.gru.u_update))[0])


@dataclass(frozen=True)
class CellConfig:
    """Runtime knobs of the cell that are not trainable parameters."""

    softening: float = 0.5
    accel_cap: float | None = 100.0
    steps_per_unit: float = 10.0
    min_steps: int = 2
    fixed_steps: int | None = None
    conscious_only: bool = False


@dataclass
class SequenceDiagnostics:
    """Per-prediction-step observability: how far the unconscious position
    drifted after the shift, and the mean gate openings."""

    unconscious_drift: np.ndarray
    decision_gate_mean: np.ndarray
    shift_gate_mean: np.ndarray


def init_model(n_items: int, d_u: int, d_c: int, seed: int,
               embedding_radius: float = 1.2) -> ModelParameters:
    """Fresh parameters.

    Embedding rows start on a sphere of ``embedding_radius``: far enough
    apart that the distance softmax has usable contrast from the first
    update, and equidistant from the zero initial state so the very first
    predictions are uniform rather than confidently wrong. Log-masses start
    at -log(N), so the total attracting mass is one.
    """
    rng = np.random.default_rng(seed)
    raw = rng.normal(0.0, 1.0, size=(n_items, d_u))
    embeddings = embedding_radius * raw / np.linalg.norm(raw, axis=1, keepdims=True)
    return ModelParameters(
        embeddings=embeddings,
        log_masses=np.full(n_items, -np.log(n_items)),
        gru=init_conscious(rng, d_c, d_u),
        shift=init_shift(rng, d_u, d_c),
        decision=init_decision(rng, d_u, d_c),
    )


def model_to_arrays(model: ModelParameters) -> dict[str, np.ndarray]:
    return {
        "embeddings": model.embeddings,
        "log_masses": model.log_masses,
        "gru.w_update": model.gru.w_update,
        "gru.u_update": model.gru.u_update,
        "gru.w_candidate": model.gru.w_candidate,
        "gru.u_candidate": model.gru.u_candidate,
        "gru.w_reset": model.gru.w_reset,
        "gru.u_reset": model.gru.u_reset,
        "shift.projection": model.shift.projection,
        "shift.gate_input": model.shift.gate_input,
        "shift.gate_state": model.shift.gate_state,
        "decision.projection": model.decision.projection,
        "decision.gate_input": model.decision.gate_input,
        "decision.gate_state": model.decision.gate_state,
    }


def model_from_arrays(arrays: dict) -> ModelParameters:
    missing = [name for name in PARAM_ORDER if name not in arrays]
    if missing:
        raise ContractViolation(f"missing parameter arrays: {missing}")
    return ModelParameters(
        embeddings=arrays["embeddings"],
        log_masses=arrays["log_masses"],
        gru=ConsciousParams(
            w_update=arrays["gru.w_update"],
            u_update=arrays["gru.u_update"],
            w_candidate=arrays["gru.w_candidate"],
            u_candidate=arrays["gru.u_candidate"],
            w_reset=arrays["gru.w_reset"],
            u_reset=arrays["gru.u_reset"],
        ),
        shift=ShiftParams(
            projection=arrays["shift.projection"],
            gate_input=arrays["shift.gate_input"],
            gate_state=arrays["shift.gate_state"],
        ),
        decision=DecisionParams(
            projection=arrays["decision.projection"],
            gate_input=arrays["decision.gate_input"],
            gate_state=arrays["decision.gate_state"],
        ),
    )


def lift_model(tape: Tape, model: ModelParameters) -> ModelParameters:
    """Re-express every parameter as a designated leaf on the tape."""
    arrays = model_to_arrays(model)
    lifted = {name: tape.parameter(name, arrays[name]) for name in PARAM_ORDER}
    return model_from_arrays(lifted)


def field_of(model: ModelParameters, cell: CellConfig) -> GravityField:
    return GravityField(model.embeddings, model.log_masses,
                        softening=cell.softening, accel_cap=cell.accel_cap)


def consume_step(model: ModelParameters, c, h, item: int):
    """Recurrent update plus instantaneous shift for one consumed item.
    Returns (c_new, h_shifted, shift_gate)."""
    e = take_row(model.embeddings, item)
    c_new = gru_step(model.gru, c, e)
    h_shifted, gate = shift_state(model.shift, c_new, h, return_gate=True)
    return c_new, h_shifted, gate


def predict_step(model: ModelParameters, cell: CellConfig, c, h):
    """Decision state from the current conscious state and drifted position,
    scored against the full catalog. Returns (distribution, decision_gate)."""
    u = slice_last(h, 0, model.d_u)
    d, gate = decision_state(model.decision, c, u,
                             conscious_only=cell.conscious_only, return_gate=True)
    return score_items(d, model.embeddings), gate


def forward_sequence(model: ModelParameters, sequence: BehaviourSequence,
                     cell: CellConfig = CellConfig()):
    """Run the cell over one sequence.

    Returns one distribution per prediction step (step j targets item j+1)
    plus diagnostics. Works on plain arrays or on tape-lifted parameters.
    """
    n_steps = len(sequence) - 1
    if n_steps < 1:
        raise ContractViolation("sequence must contain at least 2 interactions")
    field = field_of(model, cell)
    d_u = model.d_u
    c = np.zeros(model.d_c)
    h = np.zeros(2 * d_u)

    distributions: list[RecommendationDistribution] = []
    drift = np.zeros(n_steps)
    delta_means = np.zeros(n_steps)
    gamma_means = np.zeros(n_steps)
    for j in range(n_steps):
        c, h_shifted, shift_gate = consume_step(model, c, h, int(sequence.items[j]))
        dt = float(sequence.times[j + 1] - sequence.times[j])
        h = float_state(field, h_shifted, dt,
                        steps_per_unit=cell.steps_per_unit,
                        min_steps=cell.min_steps, n_steps=cell.fixed_steps)
        distribution, decision_gate = predict_step(model, cell, c, h)
        distributions.append(distribution)

        u_after = np.asarray(as_value(h))[:d_u]
        u_shifted = np.asarray(as_value(h_shifted))[:d_u]
        drift[j] = float(np.linalg.norm(u_after - u_shifted))
        delta_means[j] = float(np.mean(as_value(decision_gate)))
        gamma_means[j] = float(np.mean(as_value(shift_gate)))

    diagnostics = SequenceDiagnostics(drift, delta_means, gamma_means)
    return distributions, diagnostics


def sequence_loss(distributions, targets):
    """Cross entropy: -sum over prediction steps of log p[target]."""
    targets = list(targets)
    if len(distributions) != len(targets):
        raise ContractViolation(
            f"{len(distributions)} distributions but {len(targets)} targets"
        )
    total = None
    for distribution, target in zip(distributions, targets):
        term = scale(log(pick(distribution.probs, int(target))), -1.0)
        total = term if total is None else add(total, term)
    return total
