"""Flat key = value run configuration with command-line overrides.

One recognized key set for every command; unknown keys are rejected, and
every value is parsed by declared type. All randomness flows from the
single ``seed`` key.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .data import SECONDS_PER_WEEK
from .errors import ConfigError
from .model import CellConfig
from .training import TrainConfig

__all__ = ["RunConfig", "CONFIG_HELP", "parse_config_file", "parse_value"]


@dataclass
class RunConfig:
    dataset: str = ""
    outdir: str = "out"
    seconds_per_unit: float = SECONDS_PER_WEEK
    sequence_length: int = 5
    d_u: int = 16
    d_c: int = 8
    learning_rate: float = 1e-4
    batch_size: int = 4
    max_epochs: int = 100
    patience: int = 10
    warmup_epochs: int = 5
    steps_per_unit: float = 10.0
    pad: float = 1.5
    softening: float = 0.5
    accel_cap: float = 100.0          # <= 0 disables the clamp
    seed: int = 0
    k_list: tuple = (1, 5, 10, 20)
    conscious_only: bool = False
    fmc_alpha: float = 0.01
    include_baselines: bool = True
    threads: int = 1
    n_items: int = 20
    n_sequences: int = 200
    whatif_sequence: str = ""
    whatif_delta_ts: tuple = (0.25, 0.5, 0.75, 1.0, 1.25, 1.5)
    whatif_k: int = 10
    gradcheck_tol: float = 1e-4

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            warmup_epochs=self.warmup_epochs,
            steps_per_unit=self.steps_per_unit,
            pad=self.pad,
            softening=self.softening,
            accel_cap=self.accel_cap if self.accel_cap > 0 else None,
            seed=self.seed,
            k_list=tuple(int(k) for k in self.k_list),
            conscious_only=self.conscious_only,
        )

    def cell_config(self) -> CellConfig:
        return self.train_config().cell_config()


CONFIG_HELP = {
    "dataset": "input interaction CSV (sequence_id,item_id,timestamp)",
    "outdir": "directory for every produced file",
    "seconds_per_unit": "seconds per model time unit (604800 = one week)",
    "sequence_length": "modeled length L; the most recent L+1 interactions are kept",
    "d_u": "dimension of item embeddings and the unconscious state",
    "d_c": "dimension of the conscious state",
    "learning_rate": "Adam learning rate after warm-up",
    "batch_size": "sequences per mini-batch",
    "max_epochs": "epoch cap",
    "patience": "early-stopping patience in epochs",
    "warmup_epochs": "epochs of linear learning-rate ramp from lr/10",
    "steps_per_unit": "integration steps per time unit",
    "pad": "shared drift duration per batch step; also the interval cap",
    "softening": "softening length added inside the gravity kernel",
    "accel_cap": "acceleration-norm clamp during training; <= 0 disables",
    "seed": "master seed for every random draw",
    "k_list": "comma-separated cutoffs for recall and nDCG",
    "conscious_only": "force the decision gate to 1 (recurrent-only ablation)",
    "fmc_alpha": "additive smoothing of the Markov baseline",
    "include_baselines": "also report POP and FMC in eval",
    "threads": "worker cap (reserved; execution is sequential)",
    "n_items": "synth: number of items",
    "n_sequences": "synth: number of sequences",
    "whatif_sequence": "whatif: sequence id (default: first test sequence)",
    "whatif_delta_ts": "whatif: comma-separated drift durations to sweep",
    "whatif_k": "whatif: list length per duration",
    "gradcheck_tol": "gradcheck: max relative error allowed",
}


def parse_value(key: str, text: str, default):
    """Parse one override with the type of its default."""
    text = text.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"expected a boolean, got {text!r}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            element = float if any(isinstance(e, float) for e in default) else int
            return tuple(element(part) for part in text.split(",") if part.strip())
        return text
    except ValueError as err:
        raise ConfigError(f"bad value for {key}: {err}") from err


def _known_keys() -> dict:
    return {f.name: f for f in fields(RunConfig)}


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines; '#' starts a comment; unknown keys are
    rejected."""
    known = _known_keys()
    defaults = RunConfig()
    overrides: dict = {}
    try:
        handle = open(path, encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot open config {path}: {err}") from err
    with handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {lineno}: expected key = value")
            key, _, text = line.partition("=")
            key = key.strip()
            if key not in known:
                raise ConfigError(f"{path}: line {lineno}: unknown key {key!r}")
            overrides[key] = parse_value(key, text, getattr(defaults, key))
    return overrides


def build_config(file_path=None, cli_overrides=None) -> RunConfig:
    """Defaults, then config file, then command-line overrides."""
    config = RunConfig()
    merged: dict = {}
    if file_path:
        merged.update(parse_config_file(file_path))
    if cli_overrides:
        merged.update(cli_overrides)
    for key, value in merged.items():
        setattr(config, key, value)
    if config.threads < 1:
        raise ConfigError(f"threads must be >= 1, got {config.threads}")
    return config
