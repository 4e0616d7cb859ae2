"""Ranking metrics, classic baselines, and the model's analysis reports.

Metrics are pooled over every prediction step of every sequence, and every
step is ranked against the full catalog (no negative sampling). nDCG uses
binary relevance with the single true next item, so the ideal DCG is 1 and
nDCG@k reduces to 1/log2(1+rank) when the target makes the top k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import BehaviourSequence
from .decision import decision_state, recommend_top_k
from .errors import ContractViolation, DataError
from .model import (
    CellConfig,
    ModelParameters,
    consume_step,
    field_of,
    forward_sequence,
)
from .tape import as_value, slice_last
from .unconscious import float_state

__all__ = [
    "MetricsTable",
    "recall_at_k",
    "ndcg_at_k",
    "evaluate",
    "evaluate_ranking",
    "popularity_baseline",
    "FirstOrderMarkov",
    "fmc_baseline",
    "whatif_sweep",
    "PleasureRealityRow",
    "pleasure_reality_report",
]


@dataclass
class MetricsTable:
    k_list: tuple[int, ...]
    recall: dict[int, float]
    ndcg: dict[int, float]
    n_events: int


def _rank_of(ranked, target: int) -> int:
    """1-based position of the target in a ranking."""
    positions = np.nonzero(np.asarray(ranked) == target)[0]
    if positions.size == 0:
        raise ContractViolation(f"target {target} missing from ranking")
    return int(positions[0]) + 1


def recall_at_k(ranked, target: int, k: int) -> int:
    """1 iff the target appears among the first k ranked items."""
    if k < 1 or k > len(ranked):
        raise ContractViolation(f"k must be in [1, {len(ranked)}], got {k}")
    return int(_rank_of(ranked, target) <= k)


def ndcg_at_k(ranked, target: int, k: int) -> float:
    """1/log2(1+rank) when the target ranks within k, else 0."""
    if k < 1 or k > len(ranked):
        raise ContractViolation(f"k must be in [1, {len(ranked)}], got {k}")
    rank = _rank_of(ranked, target)
    if rank > k:
        return 0.0
    return 1.0 / np.log2(1.0 + rank)


def _pool(event_ranks: list[int], k_list, n_items: int | None = None) -> MetricsTable:
    k_list = tuple(int(k) for k in k_list)
    for k in k_list:
        if k < 1 or (n_items is not None and k > n_items):
            raise ContractViolation(f"cutoff k={k} outside [1, {n_items}]")
    n = len(event_ranks)
    if n == 0:
        raise DataError("no prediction events to evaluate")
    ranks = np.array(event_ranks)
    recall = {k: float(np.mean(ranks <= k)) for k in k_list}
    ndcg = {
        k: float(np.mean(np.where(ranks <= k, 1.0 / np.log2(1.0 + ranks), 0.0)))
        for k in k_list
    }
    return MetricsTable(k_list=k_list, recall=recall, ndcg=ndcg, n_events=n)


def evaluate(model: ModelParameters, sequences, k_list,
             cell: CellConfig = CellConfig()) -> MetricsTable:
    """Model metrics over all prediction steps, full-catalog ranking."""
    ranks = []
    for seq in sequences:
        distributions, _ = forward_sequence(model, seq, cell)
        for j, distribution in enumerate(distributions):
            ranks.append(_rank_of(distribution.ranked, int(seq.items[j + 1])))
    return _pool(ranks, k_list, model.n_items)


def evaluate_ranking(rank_fn, sequences, k_list) -> MetricsTable:
    """Same pooling for any ranker mapping a consumed prefix to a ranking."""
    ranks = []
    for seq in sequences:
        for j in range(len(seq) - 1):
            ranked = rank_fn(seq.items[: j + 1])
            ranks.append(_rank_of(ranked, int(seq.items[j + 1])))
    return _pool(ranks, k_list)


# ---------------------------------------------------------------------------
# Classic baselines.
# ---------------------------------------------------------------------------

def popularity_baseline(train_sequences, n_items: int) -> np.ndarray:
    """One fixed ranking: descending interaction count, ties by index."""
    if not train_sequences:
        raise DataError("popularity baseline needs a nonempty training set")
    counts = np.zeros(n_items, dtype=np.int64)
    for seq in train_sequences:
        counts += np.bincount(seq.items, minlength=n_items)
    return np.lexsort((np.arange(n_items), -counts))


@dataclass
class FirstOrderMarkov:
    """Smoothed first-order transition ranker fit on consecutive pairs."""

    counts: np.ndarray   # (N, N) transition counts
    alpha: float

    def probabilities(self, last_item: int) -> np.ndarray:
        row = self.counts[int(last_item)]
        return (row + self.alpha) / (row.sum() + self.alpha * len(row))

    def ranking(self, last_item: int) -> np.ndarray:
        probs = self.probabilities(last_item)
        return np.lexsort((np.arange(len(probs)), -probs))


def fmc_baseline(train_sequences, n_items: int, alpha: float = 0.01) -> FirstOrderMarkov:
    if alpha < 0:
        raise ContractViolation(f"alpha must be >= 0, got {alpha}")
    counts = np.zeros((n_items, n_items), dtype=float)
    for seq in train_sequences:
        for a, b in zip(seq.items[:-1], seq.items[1:]):
            counts[int(a), int(b)] += 1.0
    return FirstOrderMarkov(counts=counts, alpha=alpha)


# ---------------------------------------------------------------------------
# Analysis reports.
# ---------------------------------------------------------------------------

def whatif_sweep(model: ModelParameters, sequence: BehaviourSequence,
                 delta_t_list, k: int, cell: CellConfig = CellConfig(),
                 pad: float = 1.5):
    """Top-k recommendations as a function of the final drift duration.

    The cell consumes the sequence through its last input item; the final
    shifted state then drifts for each requested duration, sharing the same
    conscious state. A duration equal to the actual final interval
    reproduces the standard next-item prediction exactly.
    """
    delta_t_list = [float(dt) for dt in delta_t_list]
    for dt in delta_t_list:
        if not 0.0 < dt <= pad:
            raise ContractViolation(f"delta_t {dt} outside (0, pad={pad}]")
    field = field_of(model, cell)
    d_u = model.d_u
    c = np.zeros(model.d_c)
    h = np.zeros(2 * d_u)
    last_input = len(sequence) - 2
    for j in range(last_input):
        c, h_shifted, _ = consume_step(model, c, h, int(sequence.items[j]))
        dt = float(sequence.times[j + 1] - sequence.times[j])
        h = float_state(field, h_shifted, dt, steps_per_unit=cell.steps_per_unit,
                        min_steps=cell.min_steps, n_steps=cell.fixed_steps)
    c, h_shifted, _ = consume_step(model, c, h, int(sequence.items[last_input]))

    rows = []
    for dt in delta_t_list:
        h_end = float_state(field, h_shifted, dt, steps_per_unit=cell.steps_per_unit,
                            min_steps=cell.min_steps, n_steps=cell.fixed_steps)
        u = np.asarray(as_value(slice_last(h_end, 0, d_u)))
        d = decision_state(model.decision, c, u, conscious_only=cell.conscious_only)
        rows.append((dt, recommend_top_k(d, model.embeddings, k)))
    return rows


@dataclass
class PleasureRealityRow:
    """Per-sequence diagnostics: how far the unconscious position drifts on
    average, and how open the gates are on average."""

    sequence_id: str
    unconscious_drift: float
    decision_gate_mean: float
    shift_gate_mean: float


def pleasure_reality_report(model: ModelParameters, sequences,
                            cell: CellConfig = CellConfig()) -> list[PleasureRealityRow]:
    if not sequences:
        raise DataError("report needs at least one sequence")
    rows = []
    for seq in sequences:
        _, diag = forward_sequence(model, seq, cell)
        rows.append(PleasureRealityRow(
            sequence_id=seq.id,
            unconscious_drift=float(np.mean(diag.unconscious_drift)),
            decision_gate_mean=float(np.mean(diag.decision_gate_mean)),
            shift_gate_mean=float(np.mean(diag.shift_gate_mean)),
        ))
    return rows
