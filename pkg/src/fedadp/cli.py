"""Command-line experiment runner.

Configs are JSON documents::

    {
      "dataset": {"synthetic": {"samples": 6000, "test_samples": 2000, "dim": 20, "classes": 10}},
      "model": {"kind": "MLR"},
      "partition": {"nodes": "5IID+5NonIID(1)", "samples": 600},
      "train": {"eta0": 0.01, "decay": 0.995, "local_epochs": 1, "batch_size": 50,
                "rounds": 150, "alpha": 5},
      "targets": [0.85],
      "seeds": [0, 1, 2, 3, 4],
      "output_dir": "out"
    }

An IDX dataset is given as ``{"idx": {"images": ..., "labels": ...,
"test_images": ..., "test_labels": ...}}``. A seed drives the synthetic
data, the partition and the training streams together.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import statistics
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import metrics
from .aggregation import FEDADP, FEDAVG
from .data import (
    Dataset,
    InfeasiblePartitionError,
    IdxFormatError,
    generate_synthetic_split,
    load_idx,
    parse_shorthand,
)
from .engine import RoundRecord, TrainConfig, run_experiment
from .models import ModelSpec

log = logging.getLogger("fedadp")

CSV_SCHEMA = "# schema: fedadp-rounds/1"
COMPARE_SCHEMA = "# schema: fedadp-compare/1"
BASE_COLUMNS = [
    "round", "eta", "strategy", "seed", "train_loss", "test_accuracy", "divergence",
    "empirical_A", "empirical_B", "chebyshev_lhs", "chebyshev_rhs",
]
STRATEGY_ORDER = (FEDAVG, FEDADP)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    dataset: dict
    model: dict
    partition: dict
    train: dict
    targets: list[float] = field(default_factory=list)
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str = "out"
    base_dir: Path = field(default=Path("."), repr=False)


def _require(tree: dict, key: str, where: str):
    if not isinstance(tree, dict) or key not in tree:
        raise ConfigError(f"missing key '{where}{key}'")
    return tree[key]


def _int(value, key: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(f"'{key}' must be an integer >= {minimum}, got {value!r}")
    return value


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        tree = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(tree, dict):
        raise ConfigError("config root must be an object")
    known = {"dataset", "model", "partition", "train", "targets", "seeds", "output_dir"}
    unknown = sorted(set(tree) - known)
    if unknown:
        raise ConfigError(f"unknown key '{unknown[0]}'")
    cfg = ExperimentConfig(
        dataset=_require(tree, "dataset", ""),
        model=_require(tree, "model", ""),
        partition=_require(tree, "partition", ""),
        train=tree.get("train", {}),
        targets=tree.get("targets", []),
        seeds=tree.get("seeds", [0]),
        output_dir=tree.get("output_dir", "out"),
        base_dir=path.parent,
    )
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    ds = cfg.dataset
    if not isinstance(ds, dict) or len(ds) != 1 or next(iter(ds)) not in ("idx", "synthetic"):
        raise ConfigError("'dataset' must hold exactly one of 'idx' or 'synthetic'")
    if "synthetic" in ds:
        syn = ds["synthetic"]
        for key in ("samples", "dim", "classes"):
            _int(_require(syn, key, "dataset.synthetic."), f"dataset.synthetic.{key}")
        _int(syn.get("test_samples", 0), "dataset.synthetic.test_samples", 0)
    else:
        for key in ("images", "labels"):
            if not isinstance(_require(ds["idx"], key, "dataset.idx."), str):
                raise ConfigError(f"'dataset.idx.{key}' must be a path string")
        if ("test_images" in ds["idx"]) != ("test_labels" in ds["idx"]):
            raise ConfigError("'dataset.idx.test_images' and 'dataset.idx.test_labels' go together")

    kind = _require(cfg.model, "kind", "model.")
    if kind not in ("MLR", "MLP"):
        raise ConfigError(f"'model.kind' must be MLR or MLP, got {kind!r}")
    hidden = cfg.model.get("hidden_dims", [64] if kind == "MLP" else [])
    if not isinstance(hidden, list):
        raise ConfigError("'model.hidden_dims' must be a list")
    for h in hidden:
        _int(h, "model.hidden_dims")

    if not isinstance(_require(cfg.partition, "nodes", "partition."), str):
        raise ConfigError("'partition.nodes' must be a shorthand string like '5IID+5NonIID(1)'")
    _int(_require(cfg.partition, "samples", "partition."), "partition.samples")
    try:
        parse_shorthand(cfg.partition["nodes"], cfg.partition["samples"])
    except ValueError as exc:
        raise ConfigError(f"'partition.nodes': {exc}") from exc

    allowed = {f for f in TrainConfig.__dataclass_fields__ if f not in ("strategy", "seed")}
    if not isinstance(cfg.train, dict):
        raise ConfigError("'train' must be an object")
    for key in cfg.train:
        if key not in allowed:
            raise ConfigError(f"unknown key 'train.{key}'")
    try:
        TrainConfig(**cfg.train)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"'train': {exc}") from exc

    if not isinstance(cfg.targets, list) or not all(
        isinstance(t, (int, float)) and 0 < t <= 1 for t in cfg.targets
    ):
        raise ConfigError("'targets' must be a list of accuracies in (0, 1]")
    if not isinstance(cfg.seeds, list) or not cfg.seeds:
        raise ConfigError("'seeds' must be a nonempty list")
    for s in cfg.seeds:
        _int(s, "seeds", 0)
    if not isinstance(cfg.output_dir, str):
        raise ConfigError("'output_dir' must be a path string")


def model_spec(cfg: ExperimentConfig, input_dim: int, num_classes: int) -> ModelSpec:
    kind = cfg.model["kind"]
    hidden = cfg.model.get("hidden_dims", [64] if kind == "MLP" else [])
    return ModelSpec(kind, input_dim, num_classes, tuple(hidden))


def load_data(cfg: ExperimentConfig, seed: int) -> tuple[Dataset, Dataset | None]:
    ds = cfg.dataset
    if "synthetic" in ds:
        syn = ds["synthetic"]
        return generate_synthetic_split(
            syn["samples"], syn.get("test_samples", 0), syn["dim"], syn["classes"], seed
        )
    idx = ds["idx"]
    resolve = lambda p: str((cfg.base_dir / p) if not Path(p).is_absolute() else p)
    train = load_idx(resolve(idx["images"]), resolve(idx["labels"]))
    test = None
    if "test_images" in idx:
        test = load_idx(resolve(idx["test_images"]), resolve(idx["test_labels"]), train.num_classes)
    return train, test


def _run_one(cfg: ExperimentConfig, seed: int, strategy: str, threads: int, data_cache: dict):
    train, test = data_cache[seed]
    plan = parse_shorthand(cfg.partition["nodes"], cfg.partition["samples"], seed)
    tc = TrainConfig(**cfg.train, strategy=strategy, seed=seed)
    spec = model_spec(cfg, train.input_dim, train.num_classes)
    summary = run_experiment(train, plan, spec, tc, test, cfg.targets, threads=threads)
    log.info(
        "seed %d %s: final accuracy %.4f, rounds to target %s",
        seed, strategy, summary.final_accuracy, summary.rounds_to_target,
    )
    return summary


def run_all(cfg: ExperimentConfig, threads: int = 1) -> dict[tuple[int, str], metrics.ExperimentSummary]:
    """Every (seed, strategy) pair; keys iterate in seed-then-strategy order."""
    data_cache = {s: load_data(cfg, s) for s in cfg.seeds}
    jobs = [(s, strat) for s in cfg.seeds for strat in STRATEGY_ORDER]
    if threads > 1:
        # whole experiments run side by side; nodes inside each stay sequential
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda j: _run_one(cfg, j[0], j[1], 1, data_cache), jobs))
    else:
        results = [_run_one(cfg, s, strat, 1, data_cache) for s, strat in jobs]
    return dict(zip(jobs, results))


def fmt(x: float) -> str:
    """Shortest round-trip repr; stable across runs and platforms."""
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return repr(float(x))


def record_row(rec: RoundRecord, seed: int) -> list[str]:
    row = [
        str(rec.round), fmt(rec.eta), rec.strategy, str(seed), fmt(rec.train_loss),
        fmt(rec.test_accuracy), fmt(rec.divergence), fmt(rec.empirical_A), fmt(rec.empirical_B),
        fmt(rec.chebyshev_lhs), fmt(rec.chebyshev_rhs),
    ]
    n = len(rec.weights)
    row += [fmt(rec.weights[i]) for i in range(n)]
    row += [fmt(rec.instantaneous_angles[i]) for i in range(n)]
    row += [fmt(rec.smoothed_angles[i]) for i in range(n)]
    return row


def csv_header(num_nodes: int) -> list[str]:
    return (
        BASE_COLUMNS
        + [f"weight_{i}" for i in range(num_nodes)]
        + [f"theta_{i}" for i in range(num_nodes)]
        + [f"theta_smoothed_{i}" for i in range(num_nodes)]
    )


def write_rounds_csv(path: Path, results) -> None:
    num_nodes = len(next(iter(results.values())).per_round[0].weights)
    with open(path, "w", newline="") as fh:
        fh.write(CSV_SCHEMA + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(csv_header(num_nodes))
        for (seed, _), summary in results.items():
            for rec in summary.per_round:
                writer.writerow(record_row(rec, seed))


def median_rounds(values: list[int | None]) -> float | int | None:
    """Median over seeds; a seed that never reached the target counts as +inf."""
    ranked = [math.inf if v is None else v for v in values]
    m = statistics.median(ranked)
    if math.isinf(m):
        return None
    return int(m) if float(m).is_integer() else m


def summary_tree(cfg: ExperimentConfig, results) -> dict:
    tree: dict = {}
    for strat in STRATEGY_ORDER:
        runs = [results[(s, strat)] for s in cfg.seeds]
        tree[strat] = {}
        for target in sorted(float(t) for t in cfg.targets):
            tree[strat][fmt(target)] = {
                "median_rounds": median_rounds([r.rounds_to_target[target] for r in runs]),
                "best_accuracy": max(r.best_accuracy for r in runs),
            }
    return tree


def reduction_cell(avg, adp, best_adp: float, best_avg: float) -> str:
    """Table cell 1 - rounds_adp / rounds_avg, or N/A with the best accuracy seen."""
    if adp is None:
        return f"N/A ({100 * best_adp:.2f}%)"
    if avg is None:
        return f"N/A ({100 * best_avg:.2f}%)"
    return f"{100 * (1 - adp / avg):.1f}%"


def write_outputs(cfg: ExperimentConfig, results, out_dir: Path) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_rounds_csv(out_dir / "rounds.csv", results)
    tree = summary_tree(cfg, results)
    (out_dir / "summary.json").write_text(json.dumps(tree, indent=2, sort_keys=True) + "\n")
    return tree


def write_comparison(cfg: ExperimentConfig, results, out_dir: Path, tree: dict) -> None:
    rounds = cfg.train.get("rounds", TrainConfig.rounds)
    with open(out_dir / "compare.csv", "w", newline="") as fh:
        fh.write(COMPARE_SCHEMA + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["round", "seed", "fedavg_test_accuracy", "fedadp_test_accuracy",
                         "fedavg_train_loss", "fedadp_train_loss"])
        for seed in cfg.seeds:
            avg = results[(seed, FEDAVG)].per_round
            adp = results[(seed, FEDADP)].per_round
            for t in range(rounds):
                writer.writerow([
                    str(t + 1), str(seed), fmt(avg[t].test_accuracy), fmt(adp[t].test_accuracy),
                    fmt(avg[t].train_loss), fmt(adp[t].train_loss),
                ])
    with open(out_dir / "reduction.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["target", "fedavg_rounds", "fedadp_rounds", "reduction"])
        for key in tree[FEDAVG]:
            avg, adp = tree[FEDAVG][key], tree[FEDADP][key]
            writer.writerow([
                key,
                "N/A" if avg["median_rounds"] is None else str(avg["median_rounds"]),
                "N/A" if adp["median_rounds"] is None else str(adp["median_rounds"]),
                reduction_cell(avg["median_rounds"], adp["median_rounds"],
                               adp["best_accuracy"], avg["best_accuracy"]),
            ])


def _execute(args, compare: bool) -> int:
    try:
        cfg = load_config(args.config)
        out_dir = Path(args.out) if args.out else cfg.base_dir / cfg.output_dir
        results = run_all(cfg, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (InfeasiblePartitionError, IdxFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    tree = write_outputs(cfg, results, out_dir)
    if compare:
        write_comparison(cfg, results, out_dir, tree)
    print(json.dumps(tree, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedadp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "run FedAvg and FedAdp for every seed, write rounds.csv and summary.json"),
        ("compare", "as run, plus compare.csv curves and the reduction.csv table"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None, help="output directory (overrides output_dir)")
        p.add_argument("--threads", type=int, default=1, help="worker threads; never changes results")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    return _execute(args, compare=args.command == "compare")


if __name__ == "__main__":
    sys.exit(main())
