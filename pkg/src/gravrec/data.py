"""Dataset ingestion, windowing, splitting, and the synthetic generator.

The single ingestion format is a UTF-8 CSV with header
``sequence_id,item_id,timestamp`` where timestamps are integer or real
seconds. Times are converted to configurable units (a week or a quarter
year are the conventional choices) and re-based so every sequence starts
at 0.0. Sequences containing two identical raw timestamps are dropped
outright: their true consumption order is unknowable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .decision import score_items
from .errors import ContractViolation, DataError
from .integrate import rk4_trajectory
from .unconscious import GravityField, drift_field

__all__ = [
    "SECONDS_PER_WEEK",
    "SECONDS_PER_QUARTER",
    "ItemCatalog",
    "BehaviourSequence",
    "DatasetSplit",
    "IngestResult",
    "ingest_csv",
    "split_sequences",
    "clamp_intervals",
    "generate_synthetic",
    "write_sequences_csv",
    "write_catalog_csv",
    "read_catalog_csv",
]

SECONDS_PER_WEEK = 604_800.0
# Calendar-average quarter: 365.25 / 4 days.
SECONDS_PER_QUARTER = 7_889_400.0

CSV_HEADER = ["sequence_id", "item_id", "timestamp"]


@dataclass
class ItemCatalog:
    """Bijective map between external item ids and dense indices [0, N)."""

    id_to_index: dict[str, int]
    index_to_id: list[str]

    @classmethod
    def from_ids(cls, ids) -> "ItemCatalog":
        ordered = sorted(set(str(i) for i in ids))
        return cls({item: k for k, item in enumerate(ordered)}, ordered)

    @property
    def n_items(self) -> int:
        return len(self.index_to_id)

    def index(self, item_id) -> int:
        try:
            return self.id_to_index[str(item_id)]
        except KeyError:
            raise DataError(f"item id {item_id!r} not in catalog") from None


@dataclass
class BehaviourSequence:
    """One user's ordered (item index, time) interactions in float units."""

    id: str
    items: np.ndarray   # (L,) int indices
    times: np.ndarray   # (L,) strictly increasing floats

    def __post_init__(self):
        self.items = np.asarray(self.items, dtype=int)
        self.times = np.asarray(self.times, dtype=float)
        if self.items.shape != self.times.shape or self.items.ndim != 1:
            raise ContractViolation("items and times must be matching 1-d arrays")
        if len(self.items) < 2:
            raise ContractViolation(f"sequence {self.id!r} shorter than 2")
        if not np.all(np.diff(self.times) > 0):
            raise ContractViolation(f"times of sequence {self.id!r} not strictly increasing")

    def __len__(self) -> int:
        return len(self.items)

    def intervals(self) -> np.ndarray:
        return np.diff(self.times)


@dataclass
class DatasetSplit:
    train: list[BehaviourSequence]
    valid: list[BehaviourSequence]
    test: list[BehaviourSequence]
    seed: int


@dataclass
class IngestResult:
    catalog: ItemCatalog
    sequences: list[BehaviourSequence]
    dropped_duplicate_times: int = 0
    dropped_too_short: int = 0
    rows_read: int = 0


def ingest_csv(path, seconds_per_unit: float, max_len: int,
               catalog: ItemCatalog | None = None) -> IngestResult:
    """Read, group, sort, filter, and window a raw interaction CSV.

    Keeps the most recent ``max_len + 1`` interactions of each sequence
    (inputs plus one final target); converts timestamps to units relative
    to the first kept interaction; drops sequences with duplicated raw
    timestamps or fewer than two surviving interactions (counted in the
    result).

    Without a ``catalog`` the item map is built over the surviving items.
    Passing one (required when several files must share indices, as the
    split files written by ``prep`` do) indexes against it instead and
    rejects unknown ids.
    """
    if seconds_per_unit <= 0:
        raise ContractViolation(f"seconds_per_unit must be positive, got {seconds_per_unit}")
    if max_len < 1:
        raise ContractViolation(f"max_len must be >= 1, got {max_len}")

    groups: dict[str, list[tuple[float, str]]] = {}
    rows = 0
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as err:
        raise DataError(f"cannot open dataset {path}: {err}") from err
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CSV_HEADER:
            raise DataError(
                f"{path}: line 1: expected header {','.join(CSV_HEADER)!r}, got {header!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{path}: line {lineno}: expected 3 fields, got {len(row)}")
            seq_id, item_id, ts_text = (cell.strip() for cell in row)
            try:
                ts = float(ts_text)
            except ValueError:
                raise DataError(
                    f"{path}: line {lineno}: bad timestamp {ts_text!r}"
                ) from None
            groups.setdefault(seq_id, []).append((ts, item_id))
            rows += 1

    kept: list[tuple[str, list[tuple[float, str]]]] = []
    dropped_dup = 0
    dropped_short = 0
    for seq_id, events in groups.items():
        events.sort(key=lambda pair: pair[0])
        stamps = [ts for ts, _ in events]
        if len(set(stamps)) != len(stamps):
            dropped_dup += 1
            continue
        window = events[-(max_len + 1):]
        if len(window) < 2:
            dropped_short += 1
            continue
        kept.append((seq_id, window))

    if catalog is None:
        catalog = ItemCatalog.from_ids(item for _, window in kept for _, item in window)
    sequences = []
    for seq_id, window in kept:
        first = window[0][0]
        sequences.append(BehaviourSequence(
            id=seq_id,
            items=np.array([catalog.index(item) for _, item in window]),
            times=np.array([(ts - first) / seconds_per_unit for ts, _ in window]),
        ))
    return IngestResult(catalog, sequences, dropped_dup, dropped_short, rows)


def split_sequences(sequences, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> DatasetSplit:
    """Deterministic whole-sequence split: shuffle by seed, partition
    contiguously. Valid and test always get at least one sequence each."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ContractViolation(f"split ratios must sum to 1, got {ratios}")
    n = len(sequences)
    if n < 3:
        raise DataError(f"need at least 3 sequences to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_valid = max(1, int(n * ratios[1]))
    n_test = max(1, int(n * ratios[2]))
    n_train = n - n_valid - n_test
    shuffled = [sequences[i] for i in order]
    return DatasetSplit(
        train=shuffled[:n_train],
        valid=shuffled[n_train:n_train + n_valid],
        test=shuffled[n_train + n_valid:],
        seed=seed,
    )


def clamp_intervals(sequence: BehaviourSequence, max_interval: float = 1.5) -> BehaviourSequence:
    """Cap every consecutive interval at ``max_interval`` and rebuild times
    cumulatively; the first time is unchanged. Idempotent."""
    if max_interval <= 0:
        raise ContractViolation(f"max_interval must be positive, got {max_interval}")
    capped = np.minimum(sequence.intervals(), max_interval)
    times = np.concatenate(([sequence.times[0]], sequence.times[0] + np.cumsum(capped)))
    return BehaviourSequence(id=sequence.id, items=sequence.items.copy(), times=times)


# ---------------------------------------------------------------------------
# Synthetic generator: a planted instance of the model's own generative
# story, used as oracle data for training tests.
# ---------------------------------------------------------------------------

@dataclass
class PlantedTruth:
    """Ground-truth quantities behind a synthetic dataset."""

    embeddings: np.ndarray
    log_masses: np.ndarray
    softening: float
    field: GravityField = field(init=False)

    def __post_init__(self):
        self.field = GravityField(self.embeddings, self.log_masses,
                                  softening=self.softening, accel_cap=None)


def sample_item(rng: np.random.Generator, probs: np.ndarray) -> int:
    """Draw one item index proportional to the given probabilities."""
    return int(rng.choice(len(probs), p=probs))


def generate_synthetic(n_items: int, n_sequences: int, max_len: int, seed: int,
                       *, dim: int = 2, radius: float = 9.5, jitter: float = 0.2,
                       mass_spread: float = 0.8, softening: float = 0.5,
                       drift_steps: int = 40, min_interval: float = 0.1,
                       max_interval: float = 1.5, return_truth: bool = False):
    """Emit behaviour sequences from a planted gravitational process.

    Items sit on a jittered ring, far enough apart that the distance
    softmax is sharply peaked. Each sequence starts at a random item with
    the unconscious state parked there; between consumptions the state
    drifts under the planted field for a random interval, and the next item
    is sampled from the distance softmax at the drifted position. Consuming
    an item re-parks the state on it (a full shift) and calms the velocity.

    Deterministic per seed. Returns ``(catalog, sequences)``, plus the
    planted truth when ``return_truth`` is set.
    """
    if n_items < 2:
        raise ContractViolation(f"need at least 2 items, got {n_items}")
    rng = np.random.default_rng(seed)

    angles = 2.0 * np.pi * np.arange(n_items) / n_items
    ring = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    if dim > 2:
        ring = np.concatenate([ring, np.zeros((n_items, dim - 2))], axis=1)
    embeddings = ring + rng.normal(0.0, jitter, size=(n_items, dim))
    log_masses = rng.normal(np.log(4.0), mass_spread, size=n_items)
    truth = PlantedTruth(embeddings, log_masses, softening)
    deriv = drift_field(truth.field)

    sequences = []
    seq_width = len(str(max(n_sequences - 1, 1)))
    for s in range(n_sequences):
        start = int(rng.integers(n_items))
        items = [start]
        times = [0.0]
        h = np.concatenate([embeddings[start], np.zeros(dim)])
        for _ in range(max_len):
            dt = float(rng.uniform(min_interval, max_interval))
            h = rk4_trajectory(deriv, h, dt, drift_steps)[-1]
            probs = score_items(h[:dim], embeddings).probs
            nxt = sample_item(rng, probs)
            items.append(nxt)
            times.append(times[-1] + dt)
            h = np.concatenate([embeddings[nxt], np.zeros(dim)])
        sequences.append(BehaviourSequence(
            id=f"synth_{s:0{seq_width}d}",
            items=np.array(items),
            times=np.array(times),
        ))

    # Zero-padded ids sort lexicographically in planted order, so catalog
    # indices coincide with the planted indices used above.
    item_width = len(str(n_items - 1))
    catalog = ItemCatalog.from_ids(f"item_{i:0{item_width}d}" for i in range(n_items))
    if return_truth:
        return catalog, sequences, truth
    return catalog, sequences


# ---------------------------------------------------------------------------
# CSV round trips.
# ---------------------------------------------------------------------------

def write_sequences_csv(path, catalog: ItemCatalog, sequences,
                        seconds_per_unit: float) -> None:
    """Write sequences in the ingestion format (timestamps in seconds)."""
    with open(path, "w", newline="\n", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for seq in sequences:
            for item, t in zip(seq.items, seq.times):
                writer.writerow([seq.id, catalog.index_to_id[int(item)],
                                 repr(float(t * seconds_per_unit))])


def write_catalog_csv(path, catalog: ItemCatalog) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["item_id", "index"])
        for index, item_id in enumerate(catalog.index_to_id):
            writer.writerow([item_id, index])


def read_catalog_csv(path) -> ItemCatalog:
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as err:
        raise DataError(f"cannot open catalog {path}: {err}") from err
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != ["item_id", "index"]:
            raise DataError(f"{path}: not a catalog file")
        pairs = []
        for row in reader:
            if not row:
                continue
            if len(row) != 2:
                raise DataError(f"{path}: malformed catalog row {row!r}")
            pairs.append((row[0], int(row[1])))
    pairs.sort(key=lambda p: p[1])
    index_to_id = [item for item, _ in pairs]
    if [i for _, i in pairs] != list(range(len(pairs))):
        raise DataError(f"{path}: catalog indices not contiguous from 0")
    return ItemCatalog({item: k for k, item in enumerate(index_to_id)}, index_to_id)
