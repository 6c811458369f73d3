"""Experiment configs, sweeps and result files.

A config document is YAML (JSON is accepted too) holding :class:`SimConfig`
keys plus ``replications`` and ``out_dir``. Any sweepable key given as a list
becomes a sweep axis; the sweep is the cartesian product of all axes, repeated
``replications`` times with derived seeds.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import yaml

from ehfl import __version__
from ehfl.engine import MetricsLog
from ehfl.types import MAX_SEED, ConfigError, Scheme, SimConfig

log = logging.getLogger(__name__)

CONFIG_KEYS = tuple(f.name for f in fields(SimConfig))
EXTRA_KEYS = ("replications", "out_dir")
# Keys that may hold a list of values (one sweep axis each).
SWEEP_KEYS = (
    "scheme", "charge_prob", "n_groups", "partition", "dirichlet_alpha", "seed",
    "n_clients", "n_epochs", "train_cost", "battery_cap", "learning_rate", "n_batches", "aggregation",
)

CSV_HEADER = (
    "epoch", "accuracy", "loss", "energy_train", "energy_tx", "energy_total",
    "harvested", "wasted", "participants", "trainings",
)


@dataclass
class ExperimentSpec:
    base: dict[str, Any]
    axes: dict[str, list[Any]] = field(default_factory=dict)
    replications: int = 1
    out_dir: str | None = None

    def configs(self) -> list[SimConfig]:
        names = list(self.axes)
        out = []
        for combo in itertools.product(*(self.axes[n] for n in names)):
            params = {**self.base, **dict(zip(names, combo))}
            seed = params.get("seed", 0)
            for rep in range(self.replications):
                out.append(SimConfig(**{**params, "seed": replication_seed(seed, rep)}))
        return out

    def __len__(self) -> int:
        return math.prod(len(v) for v in self.axes.values()) * self.replications

    def to_dict(self) -> dict[str, Any]:
        doc: dict[str, Any] = {**self.base, **self.axes}
        doc["replications"] = self.replications
        if self.out_dir is not None:
            doc["out_dir"] = self.out_dir
        return doc


def replication_seed(seed: int, rep: int) -> int:
    """Replication 0 keeps ``seed``; later replications get independent derived seeds."""
    if rep == 0:
        return seed
    state = np.random.SeedSequence(entropy=seed, spawn_key=(rep,)).generate_state(1, np.uint64)
    return int(state[0])


def _normalise(key: str, value: Any) -> Any:
    if key == "scheme":
        return Scheme.parse(value).value
    return value


def parse_config(text: str, source: str = "<config>") -> ExperimentSpec:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark is not None else "unknown position"
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"{source}: parse error at {where}: {problem}") from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be a mapping of keys to values")

    unknown = sorted(k for k in doc if k not in CONFIG_KEYS + EXTRA_KEYS)
    if unknown:
        raise ConfigError(f"{source}: unknown key(s): {', '.join(map(str, unknown))}")

    replications = doc.get("replications", 1)
    if isinstance(replications, bool) or not isinstance(replications, int) or replications < 1:
        raise ConfigError(f"{source}: replications must be a positive integer, got {replications!r}")
    out_dir = doc.get("out_dir")

    base: dict[str, Any] = {}
    axes: dict[str, list[Any]] = {}
    for key in CONFIG_KEYS:
        if key not in doc:
            continue
        value = doc[key]
        if isinstance(value, list):
            if key not in SWEEP_KEYS:
                raise ConfigError(f"{source}: key {key!r} cannot be swept (got a list)")
            if not value:
                raise ConfigError(f"{source}: sweep axis {key!r} is empty")
            try:
                axes[key] = [_normalise(key, v) for v in value]
            except ConfigError as exc:
                raise ConfigError(f"{source}: key {key!r}: {exc}") from None
        else:
            try:
                base[key] = _normalise(key, value)
            except ConfigError as exc:
                raise ConfigError(f"{source}: key {key!r}: {exc}") from None

    spec = ExperimentSpec(base=base, axes=axes, replications=replications, out_dir=out_dir)
    # Validate every cell up front so a sweep never dies halfway through.
    try:
        spec.configs()
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return spec


def load_config(path: str | Path) -> ExperimentSpec:
    path = Path(path)
    return parse_config(path.read_text(), source=str(path))


def emit_config(spec: ExperimentSpec) -> str:
    return yaml.safe_dump(spec.to_dict(), sort_keys=True)


def run_name(config: SimConfig) -> str:
    part = "iid" if config.partition == "iid" else f"dir{config.dirichlet_alpha:g}"
    return f"{config.scheme.value}_G{config.n_groups}_p{config.charge_prob:g}_{part}_s{config.seed}"


def metrics_csv(log_: MetricsLog) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in log_.records:
        if not (math.isfinite(r.accuracy) and math.isfinite(r.loss)):
            raise ValueError(f"epoch {r.epoch}: non-finite metrics")
        writer.writerow([
            r.epoch, f"{r.accuracy:.6f}", f"{r.loss:.6f}", r.energy_train, r.energy_tx, r.energy_total,
            r.harvested, r.wasted, r.participants, r.trainings,
        ])
    return buf.getvalue()


def metrics_summary(log_: MetricsLog, config: SimConfig) -> dict[str, Any]:
    final = log_.final
    return {
        "artifact_version": __version__,
        "seed": config.seed,
        "config": config.to_dict(),
        "epochs": len(log_),
        "final_accuracy": round(final.accuracy, 6),
        "final_loss": round(final.loss, 6),
        "energy_total": final.energy_total,
        "energy_train": final.energy_train,
        "energy_tx": final.energy_tx,
        "harvested": final.harvested,
        "wasted": final.wasted,
        "free_handoffs": final.free_handoffs,
    }


def emit_metrics(log_: MetricsLog, config: SimConfig, out_dir: str | Path, fmt: str = "csv") -> Path:
    """Write one run's metrics as ``<run>.csv`` or a ``<run>.json`` summary and return the path."""
    if len(log_) != config.n_epochs:
        raise ValueError(f"refusing to emit an incomplete run ({len(log_)} of {config.n_epochs} epochs)")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        path = out_dir / f"{run_name(config)}.csv"
        path.write_text(metrics_csv(log_))
    elif fmt == "json":
        path = out_dir / f"{run_name(config)}.json"
        path.write_text(json.dumps(metrics_summary(log_, config), indent=2, sort_keys=True) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return path


TABLE_ORDER = {Scheme.FEDAVG: 0, Scheme.FEDSEQ: 1, Scheme.FEDBACYS: 2}


@dataclass
class TableRow:
    scheme: Scheme
    n_groups: int | None
    cells: dict[float, tuple[float, float, int] | None]


def comparison_table(results: Iterable[tuple[SimConfig, MetricsLog]]) -> tuple[list[float], list[TableRow]]:
    """Mean and standard deviation of total consumed energy per (scheme, G) row and charge probability.

    FedAvg ignores grouping, so its runs collapse into one row; runs differing
    only in ``n_groups`` are then counted once per seed.
    """
    buckets: dict[tuple[Scheme, int | None, float], dict[int, int]] = defaultdict(dict)
    for config, log_ in results:
        if len(log_) != config.n_epochs:
            raise ValueError(f"incomplete run {run_name(config)}")
        g = None if config.scheme is Scheme.FEDAVG else config.n_groups
        buckets[(config.scheme, g, float(config.charge_prob))].setdefault(config.seed, log_.final.energy_total)
    probs = sorted({k[2] for k in buckets})
    row_keys = sorted({(k[0], k[1]) for k in buckets}, key=lambda k: (TABLE_ORDER[k[0]], k[1] or 0))
    rows = []
    for scheme, g in row_keys:
        cells: dict[float, tuple[float, float, int] | None] = {}
        for p in probs:
            values = list(buckets.get((scheme, g, p), {}).values())
            if not values:
                cells[p] = None
                continue
            std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
            cells[p] = (float(np.mean(values)), std, len(values))
        rows.append(TableRow(scheme, g, cells))
    return probs, rows


def emit_comparison_table(results: Sequence[tuple[SimConfig, MetricsLog]], path: str | Path) -> list[TableRow]:
    """Write the energy table as CSV; missing cells are written as ``MISSING`` and logged."""
    probs, rows = comparison_table(results)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["scheme", "n_groups"]
    for p in probs:
        header += [f"p{p:g}_mean", f"p{p:g}_std", f"p{p:g}_n"]
    writer.writerow(header)
    for row in rows:
        line = [row.scheme.value, "-" if row.n_groups is None else row.n_groups]
        for p in probs:
            cell = row.cells[p]
            if cell is None:
                log.warning("missing table cell: %s G=%s p=%g", row.scheme.value, row.n_groups, p)
                line += ["MISSING", "MISSING", 0]
            else:
                line += [f"{cell[0]:.1f}", f"{cell[1]:.1f}", cell[2]]
        writer.writerow(line)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())
    return rows


def format_table(rows: list[TableRow]) -> str:
    """Plain-text rendering of :func:`comparison_table` rows for the terminal."""
    if not rows:
        return "(empty table)"
    probs = sorted(rows[0].cells)
    head = f"{'scheme':<10}{'G':>4}" + "".join(f"{'p=' + format(p, 'g'):>20}" for p in probs)
    lines = [head, "-" * len(head)]
    for row in rows:
        text = f"{row.scheme.value:<10}{'-' if row.n_groups is None else row.n_groups:>4}"
        for p in probs:
            cell = row.cells[p]
            text += f"{'MISSING':>20}" if cell is None else f"{cell[0]:>12.0f} ±{cell[1]:>6.0f}"
        lines.append(text)
    return "\n".join(lines)


def check_seed(seed: int) -> int:
    if not 0 <= seed <= MAX_SEED:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed
