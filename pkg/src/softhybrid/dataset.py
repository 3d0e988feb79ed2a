"""Random-excitation datasets for offline training of the recurrent controller.

Record ``k`` pairs the command issued at step ``k`` with the position sensed at
the end of that step.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import DEFAULT_CONTROL_PERIOD
from .plant import PlantParams, SimulatedRobot

DEFAULT_FRACTIONS = (0.7, 0.1, 0.2)
SIDECAR_VERSION = 1


class DatasetFormatError(ValueError):
    pass


def _split_ranges(n: int, fractions) -> tuple[tuple[int, int], ...]:
    f = tuple(float(x) for x in fractions)
    if len(f) != 3 or any(x <= 0 for x in f) or abs(sum(f) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be three positive numbers summing to 1, got {fractions}")
    n_train = int(round(f[0] * n))
    n_val = int(round(f[1] * n))
    if n_train < 1 or n_val < 1 or n - n_train - n_val < 1:
        raise ValueError(f"{n} records cannot be split as {f}")
    return ((0, n_train), (n_train, n_train + n_val), (n_train + n_val, n))


@dataclass(frozen=True)
class Dataset:
    commands: np.ndarray  # (n, d)
    positions: np.ndarray  # (n, d)
    control_period: float = DEFAULT_CONTROL_PERIOD
    plant_id: str = "nominal"
    split: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self) -> None:
        c = np.array(self.commands, dtype=float)
        p = np.array(self.positions, dtype=float)
        if c.ndim != 2 or c.shape != p.shape:
            raise ValueError("commands and positions must be (n, d) arrays of equal shape")
        c.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "commands", c)
        object.__setattr__(self, "positions", p)
        split = tuple(tuple(int(v) for v in r) for r in self.split) or _split_ranges(len(c), DEFAULT_FRACTIONS)
        if split[0][0] != 0 or split[-1][1] != len(c) or any(a[1] != b[0] for a, b in zip(split, split[1:])):
            raise ValueError(f"split {split} does not partition {len(c)} records")
        object.__setattr__(self, "split", split)

    def __len__(self) -> int:
        return len(self.commands)

    @property
    def dim(self) -> int:
        return self.commands.shape[1]

    def part(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.split[("train", "val", "test").index(name)]
        return self.commands[lo:hi], self.positions[lo:hi]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (np.array_equal(self.commands, other.commands)
                and np.array_equal(self.positions, other.positions)
                and self.control_period == other.control_period
                and self.plant_id == other.plant_id and self.split == other.split)


def random_walk(n: int, dim: int, max_delta: float, rng: np.random.Generator,
                low: float = -1.0, high: float = 1.0) -> np.ndarray:
    """Commands starting at 0 whose per-step change is uniform in +-max_delta."""
    a = np.zeros(dim)
    out = np.empty((n, dim))
    for k in range(n):
        a = np.clip(a + rng.uniform(-max_delta, max_delta, size=dim), low, high)
        out[k] = a
    return out


def excite(params: PlantParams, n: int = 20000, max_delta: float = 0.1, seed: int = 0,
           dt: float = DEFAULT_CONTROL_PERIOD, plant_id: str = "nominal") -> Dataset:
    if n < 100:
        raise ValueError(f"n must be >= 100, got {n}")
    if not 0.0 <= max_delta <= 1.0:
        raise ValueError(f"max_delta must be in [0, 1], got {max_delta}")
    rng = np.random.default_rng(seed)
    commands = random_walk(n, 2, max_delta, rng)
    robot = SimulatedRobot(params, dt, rng_seed=int(rng.integers(2**31)))
    positions = np.array([robot.step(c) for c in commands])
    return Dataset(commands, positions, dt, plant_id)


def split(ds: Dataset, fractions=DEFAULT_FRACTIONS) -> Dataset:
    return replace(ds, split=_split_ranges(len(ds), fractions))


def _header(dim: int) -> list[str]:
    if dim == 2:
        return ["step", "u1", "u2", "x", "y"]
    return ["step"] + [f"u{i + 1}" for i in range(dim)] + [f"q{i + 1}" for i in range(dim)]


def sidecar_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".json")


def save(ds: Dataset, path: str | Path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_header(ds.dim))
        for k, (c, p) in enumerate(zip(ds.commands, ds.positions)):
            w.writerow([k] + [repr(float(v)) for v in c] + [repr(float(v)) for v in p])
    meta = {"format_version": SIDECAR_VERSION, "control_period": ds.control_period,
            "plant_id": ds.plant_id, "split": [list(r) for r in ds.split], "records": len(ds)}
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load(path: str | Path) -> Dataset:
    path = Path(path)
    meta = json.loads(sidecar_path(path).read_text())
    if meta.get("format_version") != SIDECAR_VERSION:
        raise DatasetFormatError(f"{sidecar_path(path)}: unsupported format version")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0] != "step" or (len(header) - 1) % 2:
            raise DatasetFormatError(f"{path}:1: bad header {header!r}")
        dim = (len(header) - 1) // 2
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DatasetFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
    if len(rows) != meta["records"]:
        raise DatasetFormatError(f"{path}: sidecar declares {meta['records']} records, file has {len(rows)}")
    arr = np.array(rows).reshape(len(rows), 2 * dim)
    return Dataset(arr[:, :dim], arr[:, dim:], meta["control_period"], meta["plant_id"],
                   tuple(tuple(r) for r in meta["split"]))
