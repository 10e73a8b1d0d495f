"""Dataset records, CSV parsing/serialization, and run manifests."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DatasetFormatError(ValueError):
    """A data file violates the expected layout or a record invariant."""


@dataclass(frozen=True)
class ShotRecord:
    """One observed frequency: gate count, shot count, zero count, optional timestamp."""

    gate_count: int
    shots: int
    zero_count: int
    timestamp: str | None = None

    def __post_init__(self):
        if self.gate_count < 0:
            raise DatasetFormatError("gate_count must be >= 0")
        if self.shots < 1:
            raise DatasetFormatError("shots must be >= 1")
        if not (0 <= self.zero_count <= self.shots):
            raise DatasetFormatError("zero_count must lie in [0, shots]")

    @property
    def frequency(self):
        return self.zero_count / self.shots


@dataclass
class PoolDataset:
    """The experimental data vector: one record per pooled frequency."""

    records: list[ShotRecord] = field(default_factory=list)

    @property
    def m(self):
        return len(self.records)

    def gates(self):
        return np.array([r.gate_count for r in self.records], dtype=int)

    def shots(self):
        return np.array([r.shots for r in self.records], dtype=int)

    def zeros(self):
        return np.array([r.zero_count for r in self.records], dtype=int)

    def frequencies(self):
        return self.zeros() / self.shots()


_COUNT_HEADERS = (["gates", "shots", "zeros"], ["gates", "shots", "zeros", "timestamp"])
_FREQ_HEADER = ["gates", "shots", "frequency"]


def _int_field(raw, name, lineno):
    try:
        return int(raw)
    except ValueError:
        raise DatasetFormatError(f"line {lineno}: {name} must be an integer, got {raw!r}") from None


def parse_dataset(path):
    """Parse a dataset CSV into a :class:`PoolDataset`.

    Accepted headers: ``gates,shots,zeros`` (optionally with a trailing
    ``timestamp`` column) or ``gates,shots,frequency``, in which case the
    zero count is recovered as round(frequency * shots).  Rows violating the
    record invariants are rejected with the offending line number.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetFormatError("empty file") from None
        if header in _COUNT_HEADERS:
            freq_form = False
            with_timestamp = len(header) == 4
        elif header == _FREQ_HEADER:
            freq_form = True
            with_timestamp = False
        else:
            raise DatasetFormatError(
                f"unrecognized header {','.join(header)!r}; expected "
                "'gates,shots,zeros[,timestamp]' or 'gates,shots,frequency'"
            )
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DatasetFormatError(f"line {lineno}: expected {len(header)} fields")
            g = _int_field(row[0].strip(), "gates", lineno)
            n = _int_field(row[1].strip(), "shots", lineno)
            if freq_form:
                try:
                    f = float(row[2])
                except ValueError:
                    raise DatasetFormatError(f"line {lineno}: frequency must be a number") from None
                if not (0.0 <= f <= 1.0):
                    raise DatasetFormatError(f"line {lineno}: frequency must lie in [0, 1]")
                z = round(f * n)
                ts = None
            else:
                z = _int_field(row[2].strip(), "zeros", lineno)
                ts = row[3].strip() if with_timestamp and row[3].strip() else None
            try:
                records.append(ShotRecord(gate_count=g, shots=n, zero_count=z, timestamp=ts))
            except DatasetFormatError as exc:
                raise DatasetFormatError(f"line {lineno}: {exc}") from None
    return PoolDataset(records=records)


def write_dataset(dataset, path):
    """Write a dataset in the canonical ``gates,shots,zeros[,timestamp]`` layout."""
    path = Path(path)
    with_timestamp = any(r.timestamp is not None for r in dataset.records)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["gates", "shots", "zeros"] + (["timestamp"] if with_timestamp else [])
        writer.writerow(header)
        for r in dataset.records:
            row = [r.gate_count, r.shots, r.zero_count]
            if with_timestamp:
                row.append(r.timestamp or "")
            writer.writerow(row)


@dataclass
class RunManifest:
    """Everything needed to reproduce one CLI run byte for byte."""

    command: list[str]
    config: dict
    seed: int | None
    version: str
    outputs: list[str]

    def to_dict(self):
        return {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "version": self.version,
            "outputs": self.outputs,
        }


def write_manifest(manifest, path):
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")


def load_manifest(path):
    raw = json.loads(Path(path).read_text())
    return RunManifest(
        command=list(raw["command"]),
        config=dict(raw["config"]),
        seed=raw["seed"],
        version=raw["version"],
        outputs=list(raw["outputs"]),
    )


def replay_manifest(path):
    """Re-run the CLI command recorded in a manifest; returns its exit code."""
    from .cli import main

    return main(load_manifest(path).command)
