"""Decision-making state and the distance-softmax recommendation layer.

The decision gate weighs the conscious projection against the drifted
unconscious position; item scores are a softmax over negative squared
distances between the decision state and every item embedding, stabilised
by subtracting the largest score before exponentiation (the subtraction
cancels in the normalised result, so gradients are unaffected).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conscious import glorot_uniform
from .errors import ContractViolation
from .tape import (
    add,
    add_const,
    affine,
    as_value,
    exp,
    logistic,
    mul,
    power,
    rowsum,
    rsub_const,
    scale,
    sub,
    sum_all,
)

__all__ = [
    "DecisionParams",
    "RecommendationDistribution",
    "init_decision",
    "decision_state",
    "score_items",
    "recommend_top_k",
]


@dataclass
class DecisionParams:
    projection: np.ndarray   # (d_u, d_c) conscious-to-embedding-space map
    gate_input: np.ndarray   # (d_u, d_c)
    gate_state: np.ndarray   # (d_u, d_u)


def init_decision(rng: np.random.Generator, d_u: int, d_c: int,
                  projection_gain: float = 2.5) -> DecisionParams:
    # The projection must reach across the embedding shell, not just a
    # unit-variance ball, so it starts above the balanced-variance scale.
    return DecisionParams(
        projection=projection_gain * glorot_uniform(rng, d_u, d_c),
        gate_input=glorot_uniform(rng, d_u, d_c),
        gate_state=glorot_uniform(rng, d_u, d_u),
    )


@dataclass
class RecommendationDistribution:
    """Probabilities over the catalog plus the ranking they induce.

    ``probs`` may be a recorded Node during training; ``ranked`` is always a
    plain integer permutation, descending probability with ties broken by
    ascending item index.
    """

    probs: object
    ranked: np.ndarray


def decision_state(params: DecisionParams, c, u, conscious_only: bool = False,
                   return_gate: bool = False):
    """Gated convex combination gate * proj(c) + (1 - gate) * u.

    With ``conscious_only`` the gate is forced to all-ones, collapsing the
    model to its recurrent half (the ablation baseline); the returned gate
    is then a plain ones vector.
    """
    if conscious_only:
        d = affine(params.projection, c)
        gate = np.ones(np.shape(as_value(u))[-1])
        return (d, gate) if return_gate else d
    gate = logistic(add(affine(params.gate_input, c), affine(params.gate_state, u)))
    d = add(mul(gate, affine(params.projection, c)), mul(rsub_const(gate, 1.0), u))
    return (d, gate) if return_gate else d


def score_items(d, embeddings) -> RecommendationDistribution:
    """Probability of each item: softmax of negative squared distances."""
    Ev = np.asarray(as_value(embeddings))
    n = Ev.shape[0]
    if n < 1:
        raise ContractViolation("need at least one item to score")
    if Ev.shape[1] != np.shape(as_value(d))[0]:
        raise ContractViolation(
            f"decision state has {np.shape(as_value(d))[0]} components, "
            f"embeddings have {Ev.shape[1]}"
        )
    diff = sub(embeddings, d)
    sq_dist = rowsum(mul(diff, diff))
    logits = scale(sq_dist, -1.0)
    stable = add_const(logits, -float(np.max(as_value(logits))))
    unnorm = exp(stable)
    probs = mul(unnorm, power(sum_all(unnorm), -1.0))
    values = np.asarray(as_value(probs))
    ranked = np.lexsort((np.arange(n), -values))
    return RecommendationDistribution(probs=probs, ranked=ranked)


def recommend_top_k(d, embeddings, k: int) -> np.ndarray:
    """The k nearest items to the decision state, ascending distance, ties
    broken by ascending item index."""
    Ev = np.asarray(as_value(embeddings), dtype=float)
    dv = np.asarray(as_value(d), dtype=float)
    n = Ev.shape[0]
    if not 1 <= k <= n:
        raise ContractViolation(f"k must be in [1, {n}], got {k}")
    sq_dist = np.einsum("nd,nd->n", Ev - dv, Ev - dv)
    order = np.lexsort((np.arange(n), sq_dist))
    return order[:k]
