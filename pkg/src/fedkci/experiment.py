"""Config-driven sweep runner writing per-round metrics as CSV.

Config files are INI-style. Sections:

    [experiment]   name, output, workers
    [dataset]      kind = synthetic | cifar10, plus kind-specific keys
    [model]        kind = paper_cnn | mlp, hidden = comma list (mlp only)
    [hyperparams]  T K E B eta momentum m lambda pool sample_ratio seed
    [grid]         hyperparameter = comma list; cartesian product of values
    [sweep]        label = comma list of name=value overrides

Every sweep point is crossed with every grid point.
"""

from __future__ import annotations

import configparser
import csv
import itertools
import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import TextIO

from . import data, nn
from .errors import ConfigError, DataError
from .federation import HyperParams, RoundMetrics, run_federated

DATA_ENV = "FEDKCI_DATA"
CSV_HEADER = ("run_label", "round", "test_accuracy", "train_loss", "wall_seconds")

# config key -> HyperParams field and parser
_HP_KEYS = {
    "T": ("T", int),
    "K": ("K", int),
    "E": ("E", int),
    "B": ("B", int),
    "eta": ("eta", float),
    "momentum": ("momentum", float),
    "m": ("m", int),
    "lambda": ("lam", float),
    "pool": ("pool", float),
    "sample_ratio": ("sample_ratio", float),
    "seed": ("seed", int),
}
_HP_FIELD_TO_KEY = {f: k for k, (f, _) in _HP_KEYS.items()}


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "synthetic"
    path: str | None = None
    classes: int = 10
    samples_per_class: int = 600
    test_per_class: int = 100
    dim: int = 32
    separation: float = 6.0
    seed: int = 0


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "mlp"
    hidden: tuple[int, ...] = (32, 32, 32, 32)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    output: str = "results.csv"
    workers: int = 1
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    hyperparams: HyperParams = field(default_factory=HyperParams)
    grid: tuple[tuple[str, tuple], ...] = ()
    sweep: tuple[tuple[str, tuple[tuple[str, object], ...]], ...] = ()

    def runs(self) -> list[tuple[str, HyperParams]]:
        """(run_label, HyperParams) for every sweep x grid point."""
        sweep = self.sweep or (("", ()),)
        keys = [k for k, _ in self.grid]
        grid_points = list(itertools.product(*(v for _, v in self.grid))) if self.grid else [()]
        runs = []
        for label, overrides in sweep:
            for point in grid_points:
                hp = _apply(self.hyperparams, overrides)
                hp = _apply(hp, tuple(zip(keys, point)))
                parts = [label] if label else []
                if point:
                    parts.append(",".join(f"{k}={_fmt(v)}" for k, v in zip(keys, point)))
                runs.append(("/".join(parts) or self.name, hp))
        return runs


def _fmt(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def _apply(hp: HyperParams, overrides) -> HyperParams:
    return replace(hp, **{_HP_KEYS[k][0]: v for k, v in overrides})


def _convert(path: str, text: str, kind):
    try:
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"{path}: expected {kind.__name__}, got {text!r}") from None
    return text


def _none_or(text: str, kind, path: str):
    return None if text.strip().lower() in ("", "none") else _convert(path, text.strip(), kind)


def _section_values(parser, section: str, schema: dict) -> dict:
    if not parser.has_section(section):
        return {}
    out = {}
    for key, raw in parser.items(section):
        if key not in schema:
            raise ConfigError(f"{section}.{key}: unknown key")
        out[key] = schema[key](raw, f"{section}.{key}")
    return out


def _int(raw, path):
    return _convert(path, raw.strip(), int)


def _float(raw, path):
    return _convert(path, raw.strip(), float)


def _str(raw, path):
    return raw.strip()


def _hp_value(key: str, raw: str, path: str):
    if key not in _HP_KEYS:
        raise ConfigError(f"{path}: unknown hyperparameter {key!r}")
    if key in ("lambda", "pool"):
        return _none_or(raw, float, path)
    return _convert(path, raw.strip(), _HP_KEYS[key][1])


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    parser.optionxform = str  # T, K, E, B are case-sensitive
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    known = {"experiment", "dataset", "model", "hyperparams", "grid", "sweep"}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"{section}: unknown section")

    exp = _section_values(parser, "experiment", {"name": _str, "output": _str, "workers": _int})
    ds = _section_values(
        parser,
        "dataset",
        {
            "kind": _str, "path": _str, "classes": _int, "samples_per_class": _int,
            "test_per_class": _int, "dim": _int, "separation": _float, "seed": _int,
        },
    )
    model = _section_values(
        parser,
        "model",
        {"kind": _str, "hidden": lambda raw, path: tuple(_int(v, path) for v in raw.split(",") if v.strip())},
    )
    hp_values = {}
    if parser.has_section("hyperparams"):
        for key, raw in parser.items("hyperparams"):
            hp_values[_HP_KEYS[key][0] if key in _HP_KEYS else key] = _hp_value(key, raw, f"hyperparams.{key}")
    grid = []
    if parser.has_section("grid"):
        for key, raw in parser.items("grid"):
            values = tuple(_hp_value(key, v, f"grid.{key}") for v in raw.split(","))
            if not values:
                raise ConfigError(f"grid.{key}: empty value list")
            grid.append((key, values))
    sweep = []
    if parser.has_section("sweep"):
        for label, raw in parser.items("sweep"):
            overrides = []
            for item in (s.strip() for s in raw.split(",")):
                if not item:
                    continue
                if "=" not in item:
                    raise ConfigError(f"sweep.{label}: expected name=value, got {item!r}")
                k, v = (s.strip() for s in item.split("=", 1))
                overrides.append((k, _hp_value(k, v, f"sweep.{label}.{k}")))
            sweep.append((label, tuple(overrides)))

    cfg = ExperimentConfig(
        dataset=DatasetConfig(**ds),
        model=ModelConfig(**model),
        hyperparams=HyperParams(**hp_values),
        grid=tuple(grid),
        sweep=tuple(sweep),
        **exp,
    )
    validate_config(cfg)
    return cfg


def parse_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, source=str(path))


def validate_config(cfg: ExperimentConfig) -> None:
    if cfg.workers < 1:
        raise ConfigError("experiment.workers: must be >= 1")
    ds = cfg.dataset
    if ds.kind not in ("synthetic", "cifar10"):
        raise ConfigError(f"dataset.kind: expected synthetic or cifar10, got {ds.kind!r}")
    if ds.kind == "synthetic":
        if ds.classes < 2 or ds.samples_per_class < 2 or ds.dim < 1 or not ds.separation > 0:
            raise ConfigError("dataset: invalid synthetic sizes")
        if not 0 < ds.test_per_class < ds.samples_per_class:
            raise ConfigError("dataset.test_per_class: must be in [1, samples_per_class)")
    if cfg.model.kind not in ("paper_cnn", "mlp"):
        raise ConfigError(f"model.kind: expected paper_cnn or mlp, got {cfg.model.kind!r}")
    if cfg.model.kind == "paper_cnn" and ds.kind != "cifar10":
        raise ConfigError("model.kind: paper_cnn needs [3,32,32] inputs (dataset.kind = cifar10)")
    if any(h < 1 for h in cfg.model.hidden):
        raise ConfigError("model.hidden: sizes must be positive")
    try:
        cfg.hyperparams.validate()
    except ConfigError as exc:
        raise ConfigError(f"hyperparams: {exc}") from None
    labels = set()
    for label, hp in cfg.runs():
        try:
            hp.validate()
        except ConfigError as exc:
            raise ConfigError(f"sweep point {label!r}: {exc}") from None
        if label in labels:
            raise ConfigError(f"duplicate run label {label!r}")
        labels.add(label)


def serialize_config(cfg: ExperimentConfig) -> str:
    """INI text that ``parse_config_text`` maps back to ``cfg``."""

    def section(name, pairs):
        lines = [f"[{name}]"] + [f"{k} = {v}" for k, v in pairs]
        return "\n".join(lines) + "\n"

    def val(v):
        if v is None:
            return "none"
        return _fmt(v)

    parts = [
        section("experiment", [("name", cfg.name), ("output", cfg.output), ("workers", cfg.workers)]),
        section("dataset", [(f.name, val(getattr(cfg.dataset, f.name))) for f in fields(cfg.dataset)
                            if getattr(cfg.dataset, f.name) is not None]),
        section("model", [("kind", cfg.model.kind), ("hidden", ",".join(str(h) for h in cfg.model.hidden))]),
        section("hyperparams", [(_HP_FIELD_TO_KEY[f.name], val(getattr(cfg.hyperparams, f.name)))
                                for f in fields(cfg.hyperparams)]),
    ]
    if cfg.grid:
        parts.append(section("grid", [(k, ", ".join(val(v) for v in vs)) for k, vs in cfg.grid]))
    if cfg.sweep:
        parts.append(section("sweep", [(label, ", ".join(f"{k}={val(v)}" for k, v in ov)) for label, ov in cfg.sweep]))
    return "\n".join(parts)


# --------------------------------------------------------------------------
# Running
# --------------------------------------------------------------------------


def load_datasets(ds: DatasetConfig) -> tuple[data.Dataset, data.Dataset]:
    if ds.kind == "synthetic":
        full = data.make_synthetic(ds.classes, ds.samples_per_class, ds.dim, ds.separation, ds.seed)
        return data.train_test_split(full, ds.test_per_class, ds.seed)
    root = ds.path or os.environ.get(DATA_ENV)
    if not root:
        raise ConfigError(f"dataset.path: not set and ${DATA_ENV} is empty")
    return data.load_cifar10(root, "train"), data.load_cifar10(root, "test")


def build_model(model: ModelConfig, trainset: data.Dataset) -> nn.ModelSpec:
    if model.kind == "paper_cnn":
        return nn.paper_cnn(trainset.num_classes, trainset.input_shape)
    if len(trainset.input_shape) != 1:
        raise ConfigError("model.kind: mlp needs flat inputs")
    return nn.mlp(trainset.input_shape[0], model.hidden, trainset.num_classes)


def write_rows(writer, rows: list[RoundMetrics]) -> None:
    for r in rows:
        writer.writerow([r.run_label, r.round, repr(r.test_accuracy), repr(r.train_loss), f"{r.wall_seconds:.3f}"])


def run_experiment(cfg: ExperimentConfig, output: str | Path | None = None, stream: TextIO | None = None) -> list[RoundMetrics]:
    """Run every sweep point and write all rows to one CSV; print a summary table."""
    stream = stream or sys.stdout
    out_path = Path(output or cfg.output)
    trainset, testset = load_datasets(cfg.dataset)
    spec = build_model(cfg.model, trainset)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    everything = []
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for label, hp in cfg.runs():
            try:
                rows = run_federated(spec, trainset, testset, hp, label=label, workers=cfg.workers)
            except DataError as exc:
                raise DataError(f"run {label!r}: {exc}") from exc
            write_rows(writer, rows)
            fh.flush()
            everything.extend(rows)
            print(f"{label}: final accuracy {rows[-1].test_accuracy:.4f}", file=stream)
    print(format_summary(summarize(out_path)), file=stream)
    return everything


# --------------------------------------------------------------------------
# Summaries
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RunSummary:
    run_label: str
    rounds: int
    final_accuracy: float
    best_accuracy: float
    rounds_to_threshold: int | None


def summarize(path: str | Path, threshold: float = 0.5) -> list[RunSummary]:
    """Per run label: final, best and first round reaching ``threshold``."""
    runs: dict[str, list[tuple[int, float]]] = {}
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read results {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise DataError(f"{path}: line 1: expected header {','.join(CSV_HEADER)}")
        for row in reader:
            line = reader.line_num
            if len(row) != len(CSV_HEADER):
                raise DataError(f"{path}: line {line}: expected {len(CSV_HEADER)} fields, got {len(row)}")
            label = row[0]
            try:
                rnd, acc = int(row[1]), float(row[2])
                float(row[3]), float(row[4])
            except ValueError:
                raise DataError(f"{path}: line {line}: non-numeric field") from None
            if not 0 <= acc <= 1:
                raise DataError(f"{path}: line {line}: accuracy {acc} outside [0, 1]")
            history = runs.setdefault(label, [])
            if history and rnd <= history[-1][0]:
                raise DataError(f"{path}: line {line}: round {rnd} does not increase for {label!r}")
            history.append((rnd, acc))
    out = []
    for label in sorted(runs):
        history = runs[label]
        reached = next((rnd for rnd, acc in history if acc >= threshold), None)
        out.append(RunSummary(label, len(history), history[-1][1], max(a for _, a in history), reached))
    return out


def format_summary(rows: list[RunSummary]) -> str:
    width = max([len("run_label")] + [len(r.run_label) for r in rows])
    lines = [f"{'run_label':<{width}}  rounds  final   best    to_threshold"]
    for r in rows:
        reached = "never" if r.rounds_to_threshold is None else str(r.rounds_to_threshold)
        lines.append(f"{r.run_label:<{width}}  {r.rounds:>6}  {r.final_accuracy:.4f}  {r.best_accuracy:.4f}  {reached}")
    return "\n".join(lines)
