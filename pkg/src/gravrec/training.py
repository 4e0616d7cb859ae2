"""Training loop: batched forward, Adam with warm-up, early stopping,
checkpoint persistence.

Mini-batches share one drift grid per step order (every member is
integrated over the full pad duration and picks its own grid point), which
is what makes batching possible at all when members have different time
intervals. Stored intervals are quantized to that grid up front, so the
grid-point selection is exact rather than approximate.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .data import BehaviourSequence, DatasetSplit
from .errors import CheckpointError, ContractViolation, DataError, NumericError
from .model import (
    CellConfig,
    ModelParameters,
    PARAM_ORDER,
    consume_step,
    field_of,
    forward_sequence,
    lift_model,
    model_from_arrays,
    model_to_arrays,
    predict_step,
    sequence_loss,
)
from .tape import Tape, add, log, pick, reverse_gradients, scale
from .unconscious import float_batch_padded, padded_step_count

__all__ = [
    "TrainConfig",
    "AdamState",
    "EarlyStopper",
    "EpochRecord",
    "TrainingHistory",
    "Checkpoint",
    "warmup_lr",
    "adam_step",
    "train",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 4
    max_epochs: int = 100
    patience: int = 10
    warmup_epochs: int = 5
    steps_per_unit: float = 10.0
    pad: float = 1.5
    softening: float = 0.5
    accel_cap: float | None = 100.0
    seed: int = 0
    k_list: tuple[int, ...] = (1, 5, 10, 20)
    conscious_only: bool = False

    def cell_config(self) -> CellConfig:
        return CellConfig(
            softening=self.softening,
            accel_cap=self.accel_cap,
            steps_per_unit=self.steps_per_unit,
            conscious_only=self.conscious_only,
        )


def warmup_lr(epoch: int, config: TrainConfig) -> float:
    """Linear ramp from lr/10 at epoch 0 to lr at epoch ``warmup_epochs``,
    constant afterwards. Epochs are 0-based here."""
    if epoch < 0:
        raise ContractViolation(f"epoch must be >= 0, got {epoch}")
    lr = config.learning_rate
    w = config.warmup_epochs
    if w <= 0 or epoch >= w:
        return lr
    return lr / 10.0 + (lr - lr / 10.0) * (epoch / w)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    steps: int = 0

    @classmethod
    def initialize(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(v) for k, v in params.items()},
            v={k: np.zeros_like(v) for k, v in params.items()},
        )

    def copy(self) -> "AdamState":
        return AdamState(
            m={k: v.copy() for k, v in self.m.items()},
            v={k: v.copy() for k, v in self.v.items()},
            steps=self.steps,
        )


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place on the parameter dict."""
    state.steps += 1
    t = state.steps
    for name, p in params.items():
        g = np.asarray(grads[name])
        if g.shape != p.shape:
            raise ContractViolation(
                f"gradient for {name!r} has shape {g.shape}, expected {p.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name!r}")
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = state.m[name] / (1.0 - beta1**t)
        v_hat = state.v[name] / (1.0 - beta2**t)
        params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)


class EarlyStopper:
    """Stop when the validation loss fails to improve ``patience`` epochs in
    a row. Improvement means strictly smaller than the best seen."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ContractViolation(f"patience must be >= 1, got {patience}")
        self.patience = patience
        self.best = np.inf
        self.stale = 0

    def update(self, validation_loss: float) -> bool:
        """Record one epoch; returns True when this epoch improved."""
        if validation_loss < self.best:
            self.best = validation_loss
            self.stale = 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.stale >= self.patience


@dataclass
class EpochRecord:
    epoch: int
    learning_rate: float
    train_loss: float
    validation_loss: float


@dataclass
class TrainingHistory:
    rows: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_validation_loss: float = np.inf
    adam: AdamState | None = None   # moments at the best epoch

    def validation_losses(self) -> np.ndarray:
        return np.array([r.validation_loss for r in self.rows])


@dataclass
class _SequenceView:
    """Training-side view: items plus grid-quantized intervals. Kept apart
    from BehaviourSequence because quantization may round a tiny interval to
    zero, which a sequence's strictly-increasing times cannot express."""

    items: np.ndarray
    intervals: np.ndarray


def _quantized_view(seq: BehaviourSequence, grid: float, pad: float) -> _SequenceView:
    dts = seq.intervals()
    if np.any(dts > pad + 1e-9):
        raise ContractViolation(
            f"sequence {seq.id!r} has an interval above pad={pad}; clamp first"
        )
    quantized = np.clip(np.rint(dts / grid) * grid, 0.0, pad)
    return _SequenceView(items=seq.items, intervals=quantized)


def _batch_loss(model: ModelParameters, field, views, cell: CellConfig,
                pad: float, steps_for_pad: int):
    """Summed cross entropy of a mini-batch with shared-grid drifts."""
    n = len(views)
    cs = [np.zeros(model.d_c) for _ in range(n)]
    hs = [np.zeros(2 * model.d_u) for _ in range(n)]
    loss = None
    terms = 0
    longest = max(len(v.items) for v in views)
    for j in range(longest - 1):
        active = [b for b in range(n) if len(views[b].items) > j + 1]
        shifted, dts = [], []
        for b in active:
            c, h_shifted, _ = consume_step(model, cs[b], hs[b], int(views[b].items[j]))
            cs[b] = c
            shifted.append(h_shifted)
            dts.append(float(views[b].intervals[j]))
        floated = float_batch_padded(field, shifted, dts, pad=pad,
                                     steps_for_pad=steps_for_pad)
        for b, h_new in zip(active, floated):
            hs[b] = h_new
            distribution, _ = predict_step(model, cell, cs[b], h_new)
            target = int(views[b].items[j + 1])
            term = scale(log(pick(distribution.probs, target)), -1.0)
            loss = term if loss is None else add(loss, term)
            terms += 1
    return loss, terms


def _validation_loss(arrays: dict, sequences, cell: CellConfig) -> float:
    model = model_from_arrays(arrays)
    total = 0.0
    steps = 0
    for seq in sequences:
        distributions, _ = forward_sequence(model, seq, cell)
        total += float(sequence_loss(distributions, seq.items[1:]))
        steps += len(seq) - 1
    return total / steps


def train(model: ModelParameters, split: DatasetSplit,
          config: TrainConfig) -> tuple[ModelParameters, TrainingHistory]:
    """Optimize over shuffled mini-batches until early stopping or the epoch
    cap; returns the parameters of the best validation epoch.

    Deterministic for a fixed config and seed: shuffling is the only
    randomness and it flows from ``config.seed``.
    """
    if not split.train or not split.valid:
        raise DataError("train and valid splits must both be nonempty")
    cell = config.cell_config()
    steps_for_pad = padded_step_count(config.steps_per_unit, config.pad)
    grid = config.pad / steps_for_pad
    views = [_quantized_view(seq, grid, config.pad) for seq in split.train]

    arrays = {k: np.array(v, dtype=float) for k, v in model_to_arrays(model).items()}
    adam = AdamState.initialize(arrays)
    rng = np.random.default_rng(config.seed)
    stopper = EarlyStopper(config.patience)
    history = TrainingHistory()
    best_arrays = {k: v.copy() for k, v in arrays.items()}
    history.adam = adam.copy()

    n_batches = 0
    for epoch in range(1, config.max_epochs + 1):
        lr = warmup_lr(epoch - 1, config)
        order = rng.permutation(len(views))
        epoch_loss = 0.0
        epoch_terms = 0
        for start in range(0, len(views), config.batch_size):
            batch = [views[i] for i in order[start:start + config.batch_size]]
            n_batches += 1
            tape = Tape()
            lifted = lift_model(tape, model_from_arrays(arrays))
            loss, terms = _batch_loss(lifted, field_of(lifted, cell), batch,
                                      cell, config.pad, steps_for_pad)
            value = float(loss.value)
            if not np.isfinite(value):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}"
                )
            grads = reverse_gradients(tape, loss)
            try:
                adam_step(arrays, grads, adam, lr)
            except NumericError as err:
                raise NumericError(
                    f"epoch {epoch}, batch {start // config.batch_size}: {err}"
                ) from err
            epoch_loss += value
            epoch_terms += terms

        validation = _validation_loss(arrays, split.valid, cell)
        history.rows.append(EpochRecord(epoch, lr, epoch_loss / epoch_terms, validation))
        if stopper.update(validation):
            history.best_epoch = epoch
            history.best_validation_loss = validation
            best_arrays = {k: v.copy() for k, v in arrays.items()}
            history.adam = adam.copy()
        if stopper.should_stop:
            break

    return model_from_arrays(best_arrays), history


# ---------------------------------------------------------------------------
# Checkpoints: magic + version byte, little-endian header with dims and the
# array directory in fixed order, then raw '<f8' payload per array.
# ---------------------------------------------------------------------------

_MAGIC = b"FANC"
_VERSION = 1


@dataclass
class Checkpoint:
    n_items: int
    d_u: int
    d_c: int
    epoch: int
    best_epoch: int
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    adam_steps: int
    validation_history: np.ndarray

    def model(self) -> ModelParameters:
        return model_from_arrays(self.params)

    def adam_state(self) -> AdamState:
        return AdamState(m=dict(self.adam_m), v=dict(self.adam_v), steps=self.adam_steps)


def _checkpoint_arrays(model: ModelParameters, adam: AdamState,
                       validation_history) -> list[tuple[str, np.ndarray]]:
    arrays = model_to_arrays(model)
    ordered = [(name, np.asarray(arrays[name], float)) for name in PARAM_ORDER]
    ordered += [(f"adam.m.{name}", np.asarray(adam.m[name], float)) for name in PARAM_ORDER]
    ordered += [(f"adam.v.{name}", np.asarray(adam.v[name], float)) for name in PARAM_ORDER]
    ordered.append(("adam.steps", np.asarray(float(adam.steps))))
    ordered.append(("history.validation", np.asarray(validation_history, float)))
    return ordered


def save_checkpoint(model: ModelParameters, adam: AdamState, meta: dict,
                    path) -> None:
    """Write a bit-exact checkpoint. ``meta`` needs ``epoch``,
    ``best_epoch`` and ``validation_history``."""
    ordered = _checkpoint_arrays(model, adam, meta.get("validation_history", []))
    header = bytearray()
    header += _MAGIC
    header += struct.pack("<B", _VERSION)
    header += struct.pack("<III", model.n_items, model.d_u, model.d_c)
    header += struct.pack("<II", int(meta.get("epoch", 0)), int(meta.get("best_epoch", 0)))
    header += struct.pack("<I", len(ordered))
    for name, array in ordered:
        encoded = name.encode("utf-8")
        header += struct.pack("<H", len(encoded))
        header += encoded
        header += struct.pack("<B", array.ndim)
        header += struct.pack(f"<{max(array.ndim, 0)}I", *array.shape)
    with open(path, "wb") as handle:
        handle.write(bytes(header))
        for _, array in ordered:
            handle.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as handle:
            blob = handle.read()
    except OSError as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from err

    offset = 0

    def need(n: int, what: str) -> int:
        nonlocal offset
        if offset + n > len(blob):
            raise CheckpointError(f"truncated while reading {what}")
        offset += n
        return offset - n

    at = need(4, "magic")
    if blob[at:at + 4] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<B", blob, need(1, "version"))
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    n_items, d_u, d_c = struct.unpack_from("<III", blob, need(12, "dimensions"))
    epoch, best_epoch = struct.unpack_from("<II", blob, need(8, "epoch fields"))
    (n_arrays,) = struct.unpack_from("<I", blob, need(4, "array count"))

    directory: list[tuple[str, tuple[int, ...]]] = []
    for _ in range(n_arrays):
        (name_len,) = struct.unpack_from("<H", blob, need(2, "array name length"))
        at = need(name_len, "array name")
        name = blob[at:at + name_len].decode("utf-8")
        (ndim,) = struct.unpack_from("<B", blob, need(1, f"shape of '{name}'"))
        shape = struct.unpack_from(f"<{ndim}I", blob, need(4 * ndim, f"shape of '{name}'"))
        directory.append((name, tuple(shape)))

    arrays: dict[str, np.ndarray] = {}
    for name, shape in directory:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        at = need(8 * count, f"array '{name}'")
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=count,
                                     offset=at).astype(float).reshape(shape)
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes after arrays")

    missing = [n for n in PARAM_ORDER if n not in arrays]
    if missing:
        raise CheckpointError(f"{path}: missing arrays {missing}")
    params = {n: arrays[n] for n in PARAM_ORDER}
    adam_m = {n: arrays[f"adam.m.{n}"] for n in PARAM_ORDER if f"adam.m.{n}" in arrays}
    adam_v = {n: arrays[f"adam.v.{n}"] for n in PARAM_ORDER if f"adam.v.{n}" in arrays}
    if params["embeddings"].shape != (n_items, d_u):
        raise CheckpointError(
            f"{path}: embeddings shape {params['embeddings'].shape} does not "
            f"match header dims ({n_items}, {d_u})"
        )
    return Checkpoint(
        n_items=n_items,
        d_u=d_u,
        d_c=d_c,
        epoch=epoch,
        best_epoch=best_epoch,
        params=params,
        adam_m=adam_m,
        adam_v=adam_v,
        adam_steps=int(arrays.get("adam.steps", np.asarray(0.0)).item()),
        validation_history=arrays.get("history.validation", np.zeros(0)),
    )
