"""Command-line entry point.

Commands: synth, prep, train, eval, baseline, whatif, analyze, gradcheck.
Every command accepts --config FILE plus one --key VALUE override per
recognized configuration key. Exit codes: 0 success, 1 usage error, 2 data
error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import report
from .config import CONFIG_HELP, RunConfig, build_config, parse_value
from .data import (
    DatasetSplit,
    clamp_intervals,
    generate_synthetic,
    ingest_csv,
    read_catalog_csv,
    split_sequences,
    write_catalog_csv,
    write_sequences_csv,
)
from .errors import (
    CheckpointError,
    ConfigError,
    ContractViolation,
    DataError,
    IntegrationError,
    NumericError,
)
from .evaluation import (
    evaluate,
    evaluate_ranking,
    fmc_baseline,
    pleasure_reality_report,
    popularity_baseline,
    whatif_sweep,
)
from .model import init_model
from .training import load_checkpoint, save_checkpoint, train
from .verify import run_gradient_check

_COMMANDS = ("synth", "prep", "train", "eval", "baseline", "whatif", "analyze", "gradcheck")


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; our contract is 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_options(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", metavar="FILE", default=None,
                     help="key = value configuration file")
    defaults = RunConfig()
    for f in fields(RunConfig):
        default = getattr(defaults, f.name)
        shown = ",".join(str(x) for x in default) if isinstance(default, tuple) else default
        sub.add_argument(f"--{f.name}", metavar="VALUE", default=None,
                         help=f"{CONFIG_HELP[f.name]} (default: {shown})")


def build_parser() -> _Parser:
    parser = _Parser(prog="gravrec", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        _add_options(subs.add_parser(name, help=f"run the {name} stage"))
    return parser


def _config_of(args) -> RunConfig:
    defaults = RunConfig()
    overrides = {}
    for f in fields(RunConfig):
        text = getattr(args, f.name, None)
        if text is not None:
            overrides[f.name] = parse_value(f.name, text, getattr(defaults, f.name))
    return build_config(args.config, overrides)


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.outdir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_split_file(out: Path, name: str, cfg: RunConfig, catalog):
    path = out / f"{name}.csv"
    if not path.exists():
        raise DataError(f"{path} not found; run `gravrec prep` first")
    result = ingest_csv(path, cfg.seconds_per_unit, cfg.sequence_length, catalog=catalog)
    return [clamp_intervals(seq, cfg.pad) for seq in result.sequences]


def _load_prepared(cfg: RunConfig):
    out = _outdir(cfg)
    catalog_path = out / "items.csv"
    if not catalog_path.exists():
        raise DataError(f"{catalog_path} not found; run `gravrec prep` first")
    catalog = read_catalog_csv(catalog_path)
    return out, catalog


def _load_model(out: Path):
    path = out / "model.ckpt"
    if not path.exists():
        raise DataError(f"{path} not found; run `gravrec train` first")
    return load_checkpoint(path)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    catalog, sequences = generate_synthetic(
        cfg.n_items, cfg.n_sequences, cfg.sequence_length, cfg.seed)
    path = out / "synthetic.csv"
    write_sequences_csv(path, catalog, sequences, cfg.seconds_per_unit)
    print(f"wrote {len(sequences)} sequences over {catalog.n_items} items to {path}")
    return 0


def cmd_prep(cfg: RunConfig) -> int:
    if not cfg.dataset:
        raise ConfigError("prep needs --dataset (or a dataset key in the config)")
    out = _outdir(cfg)
    result = ingest_csv(cfg.dataset, cfg.seconds_per_unit, cfg.sequence_length)
    clamped = [clamp_intervals(seq, cfg.pad) for seq in result.sequences]
    split = split_sequences(clamped, seed=cfg.seed)
    write_catalog_csv(out / "items.csv", result.catalog)
    for name, part in (("train", split.train), ("valid", split.valid), ("test", split.test)):
        write_sequences_csv(out / f"{name}.csv", result.catalog, part, cfg.seconds_per_unit)
    with open(out / "manifest.csv", "w", newline="\n", encoding="utf-8") as handle:
        w = csv.writer(handle, lineterminator="\n")
        w.writerow(["split", "n_sequences"])
        for name, part in (("train", split.train), ("valid", split.valid), ("test", split.test)):
            w.writerow([name, len(part)])
        w.writerow(["items", result.catalog.n_items])
        w.writerow(["dropped_duplicate_times", result.dropped_duplicate_times])
        w.writerow(["dropped_too_short", result.dropped_too_short])
    print(f"split {len(clamped)} sequences into "
          f"{len(split.train)}/{len(split.valid)}/{len(split.test)} "
          f"(train/valid/test), {result.catalog.n_items} items")
    print(f"dropped {result.dropped_duplicate_times} sequences with duplicated "
          f"timestamps, {result.dropped_too_short} too short")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    out, catalog = _load_prepared(cfg)
    split = DatasetSplit(
        train=_load_split_file(out, "train", cfg, catalog),
        valid=_load_split_file(out, "valid", cfg, catalog),
        test=_load_split_file(out, "test", cfg, catalog),
        seed=cfg.seed,
    )
    model = init_model(catalog.n_items, cfg.d_u, cfg.d_c, cfg.seed)
    model, history = train(model, split, cfg.train_config())
    save_checkpoint(model, history.adam, {
        "epoch": history.rows[-1].epoch if history.rows else 0,
        "best_epoch": history.best_epoch,
        "validation_history": history.validation_losses(),
    }, out / "model.ckpt")
    report.write_history_csv(out / "history.csv", history)
    report.plot_history(out / "history.png", history)
    print(f"trained {len(history.rows)} epochs; best epoch {history.best_epoch} "
          f"(validation loss {history.best_validation_loss:.6f})")
    print(f"wrote {out / 'model.ckpt'}, {out / 'history.csv'}, {out / 'history.png'}")
    return 0


def _usable_k_list(cfg: RunConfig, catalog) -> tuple:
    usable = tuple(int(k) for k in cfg.k_list if 1 <= k <= catalog.n_items)
    dropped = [int(k) for k in cfg.k_list if k not in usable]
    if dropped:
        print(f"note: dropping cutoffs {dropped} beyond the {catalog.n_items}-item catalog")
    if not usable:
        raise ConfigError(f"no usable k in k_list={cfg.k_list} for {catalog.n_items} items")
    return usable


def _baseline_tables(cfg: RunConfig, out: Path, catalog, test, k_list):
    train_seqs = _load_split_file(out, "train", cfg, catalog)
    pop = popularity_baseline(train_seqs, catalog.n_items)
    fmc = fmc_baseline(train_seqs, catalog.n_items, alpha=cfg.fmc_alpha)
    return {
        "pop": evaluate_ranking(lambda prefix: pop, test, k_list),
        "fmc": evaluate_ranking(lambda prefix: fmc.ranking(int(prefix[-1])), test, k_list),
    }


def cmd_eval(cfg: RunConfig) -> int:
    out, catalog = _load_prepared(cfg)
    checkpoint = _load_model(out)
    test = _load_split_file(out, "test", cfg, catalog)
    k_list = _usable_k_list(cfg, catalog)
    tables = {"model": evaluate(checkpoint.model(), test, k_list, cfg.cell_config())}
    if cfg.include_baselines:
        tables.update(_baseline_tables(cfg, out, catalog, test, k_list))
    report.write_metrics_csv(out / "metrics.csv", tables)
    report.plot_metrics(out / "metrics.png", tables)
    for system, table in tables.items():
        for k in table.k_list:
            print(f"{system:6s} k={k:<3d} recall={table.recall[k]:.4f} "
                  f"ndcg={table.ndcg[k]:.4f}")
    print(f"wrote {out / 'metrics.csv'}, {out / 'metrics.png'}")
    return 0


def cmd_baseline(cfg: RunConfig) -> int:
    out, catalog = _load_prepared(cfg)
    test = _load_split_file(out, "test", cfg, catalog)
    tables = _baseline_tables(cfg, out, catalog, test, _usable_k_list(cfg, catalog))
    report.write_metrics_csv(out / "baseline_metrics.csv", tables)
    report.plot_metrics(out / "baseline_metrics.png", tables)
    for system, table in tables.items():
        for k in table.k_list:
            print(f"{system:6s} k={k:<3d} recall={table.recall[k]:.4f} "
                  f"ndcg={table.ndcg[k]:.4f}")
    print(f"wrote {out / 'baseline_metrics.csv'}, {out / 'baseline_metrics.png'}")
    return 0


def cmd_whatif(cfg: RunConfig) -> int:
    out, catalog = _load_prepared(cfg)
    checkpoint = _load_model(out)
    test = _load_split_file(out, "test", cfg, catalog)
    if cfg.whatif_sequence:
        matches = [s for s in test if s.id == cfg.whatif_sequence]
        if not matches:
            raise DataError(f"sequence id {cfg.whatif_sequence!r} not in the test split")
        sequence = matches[0]
    else:
        sequence = test[0]
    sweep = whatif_sweep(checkpoint.model(), sequence, cfg.whatif_delta_ts,
                         cfg.whatif_k, cfg.cell_config(), pad=cfg.pad)
    report.write_whatif_csv(out / "whatif.csv", sweep, catalog)
    text = report.format_whatif_text(sweep, catalog)
    (out / "whatif.txt").write_text(text, encoding="utf-8")
    report.plot_whatif(out / "whatif.png", sweep, catalog)
    print(f"what-if sweep for sequence {sequence.id!r}:")
    print(text, end="")
    print(f"wrote {out / 'whatif.csv'}, {out / 'whatif.txt'}, {out / 'whatif.png'}")
    return 0


def cmd_analyze(cfg: RunConfig) -> int:
    out, catalog = _load_prepared(cfg)
    checkpoint = _load_model(out)
    test = _load_split_file(out, "test", cfg, catalog)
    rows = pleasure_reality_report(checkpoint.model(), test, cfg.cell_config())
    report.write_pleasure_reality_csv(out / "pleasure_reality.csv", rows)
    report.plot_pleasure_reality(out / "pleasure_reality.png", rows)
    drift = np.array([r.unconscious_drift for r in rows])
    gate = np.array([r.decision_gate_mean for r in rows])
    print(f"{len(rows)} sequences: mean drift {drift.mean():.4f}, "
          f"mean decision gate {gate.mean():.4f}")
    print(f"wrote {out / 'pleasure_reality.csv'}, {out / 'pleasure_reality.png'}")
    return 0


def cmd_gradcheck(cfg: RunConfig) -> int:
    result = run_gradient_check(seed=cfg.seed, tol=cfg.gradcheck_tol)
    print(result.summary())
    return 0 if result.passed else 3


_DISPATCH = {
    "synth": cmd_synth,
    "prep": cmd_prep,
    "train": cmd_train,
    "eval": cmd_eval,
    "baseline": cmd_baseline,
    "whatif": cmd_whatif,
    "analyze": cmd_analyze,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return int(exit_.code or 0)
    try:
        cfg = _config_of(args)
        return _DISPATCH[args.command](cfg)
    except (ConfigError, ContractViolation) as err:
        print(f"gravrec {args.command}: {err}", file=sys.stderr)
        return 1
    except (DataError, CheckpointError, OSError) as err:
        print(f"gravrec {args.command}: {err}", file=sys.stderr)
        return 2
    except (NumericError, IntegrationError) as err:
        print(f"gravrec {args.command}: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
