"""
Synthetic tasks and instances.

Per-task usage shapes are stylized after the typical histograms observed for
long-running cluster tasks: mostly idle tasks with rare bursts, exponential-like
tails, two-level (bimodal) tasks, tasks spread over a band and constant tasks.
Every archetype parameter is either a number or a ``(low, high)`` range; a
range is resolved per task by a uniform draw, which gives the population of
tasks heterogeneous means and deviations.
"""
from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np

from . import stats
from .ingest import TaskProfile, build_profiles, parse_usage_csv, write_usage_csv

# Each reported avg sample is the mean of this many hidden draws; the inst
# sample is the first of them.
AVG_WINDOW_DRAWS = 5

DEFAULT_LENGTH_RANGE = (24, 4032)

_DEFAULT_PARAMS = {
    "near_zero_spike": {"base": (0.001, 0.008), "weight": (0.15, 0.45), "level": (0.03, 0.07)},
    "exponential_like": {"scale": (0.01, 0.04)},
    "bimodal": {"low": (0.01, 0.05), "gap": (0.03, 0.15), "sd": (0.002, 0.01), "weight": (0.1, 0.5)},
    "uniform_band": {"low": (0.0, 0.04), "width": (0.01, 0.08)},
    "constant": {"level": (0.015, 0.07)},
}
ARCHETYPE_NAMES = tuple(_DEFAULT_PARAMS)

# Default population: 500 tasks sum to a mean usage of about 14 CPU units.
DEFAULT_MIX = {
    "near_zero_spike": 0.45,
    "exponential_like": 0.25,
    "bimodal": 0.12,
    "uniform_band": 0.10,
    "constant": 0.08,
}
SPIKE_HEAVY_MIX = {"near_zero_spike": 0.8, "exponential_like": 0.2}

Param = Union[float, tuple]


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class Archetype:
    name: str
    params: Mapping[str, Param] = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in _DEFAULT_PARAMS:
            raise SynthError(f"unknown archetype {self.name!r}; expected one of {', '.join(ARCHETYPE_NAMES)}")
        merged = dict(_DEFAULT_PARAMS[self.name])
        for key, value in self.params.items():
            if key not in merged:
                raise SynthError(f"archetype {self.name} has no parameter {key!r}")
            merged[key] = value
        for key, value in merged.items():
            lo, hi = (value, value) if np.isscalar(value) else value
            if not 0 <= lo <= hi <= 1:
                raise SynthError(f"{self.name}.{key}={value!r} must lie within [0, 1]")
        object.__setattr__(self, "params", merged)

    def __hash__(self):
        return hash((self.name, tuple(sorted(self.params.items()))))

    @classmethod
    def of(cls, name: str, **params) -> "Archetype":
        return cls(name, params)

    def resolve(self, rng: np.random.Generator) -> dict:
        out = {}
        for key in sorted(self.params):
            value = self.params[key]
            out[key] = float(value) if np.isscalar(value) else float(rng.uniform(*value))
        return out

    def draw(self, p: dict, size, rng: np.random.Generator) -> np.ndarray:
        if self.name == "constant":
            x = np.full(size, p["level"])
        elif self.name == "uniform_band":
            x = rng.uniform(p["low"], p["low"] + p["width"], size)
        elif self.name == "exponential_like":
            x = rng.exponential(p["scale"], size)
        elif self.name == "near_zero_spike":
            idle = rng.uniform(0.0, p["base"], size)
            burst = p["level"] * rng.uniform(0.5, 1.5, size)
            x = np.where(rng.random(size) < p["weight"], burst, idle)
        else:  # bimodal
            loc = np.where(rng.random(size) < p["weight"], p["low"] + p["gap"], p["low"])
            x = rng.normal(loc, p["sd"])
        return np.clip(x, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class Instance:
    tasks: list
    inst_matrix: np.ndarray
    avg_matrix: np.ndarray
    archetypes: list = field(default_factory=list)

    def __post_init__(self):
        if self.inst_matrix.shape != self.avg_matrix.shape:
            raise SynthError("inst and avg matrices differ in shape")
        if self.inst_matrix.ndim != 2 or self.inst_matrix.shape[0] != len(self.tasks):
            raise SynthError("matrix rows must match the task list")
        if self.inst_matrix.shape[1] < 1:
            raise SynthError("need at least one realization")

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    @property
    def realizations(self) -> int:
        return self.inst_matrix.shape[1]


def _as_archetype(a) -> Archetype:
    return a if isinstance(a, Archetype) else Archetype(a)


def generate_task(archetype, length_records: int, rng: np.random.Generator, task_id="t0") -> TaskProfile:
    if length_records < 1:
        raise SynthError("length_records must be at least 1")
    archetype = _as_archetype(archetype)
    p = archetype.resolve(rng)
    hidden = archetype.draw(p, (length_records, AVG_WINDOW_DRAWS), rng)
    return TaskProfile.from_samples(task_id, hidden[:, 0], hidden.mean(axis=1))


def normalize_mix(mix) -> list[tuple[Archetype, float]]:
    items = list(mix.items()) if isinstance(mix, Mapping) else list(mix)
    if not items:
        raise SynthError("empty archetype mix")
    out = [(_as_archetype(a), float(w)) for a, w in items]
    weights = np.array([w for _, w in out])
    if np.any(weights < 0) or not np.isfinite(weights).all() or abs(weights.sum() - 1.0) > 1e-9:
        raise SynthError(f"mix weights must be non-negative and sum to 1, got {weights.sum():.6g}")
    return out


def generate_instance(n_tasks: int, mix=None, R: int = 10_000, seed: int = 0,
                      length_range: Sequence[int] = DEFAULT_LENGTH_RANGE) -> Instance:
    """
    Draw `n_tasks` task profiles from the archetype mixture and pre-sample `R`
    realizations of inst and avg usage for each.

    Task i uses its own generator seeded by (seed, i), so any task can be
    regenerated independently of the others.
    """
    if n_tasks < 1:
        raise SynthError("n_tasks must be at least 1")
    if R < 1:
        raise SynthError("R must be at least 1")
    mix = normalize_mix(DEFAULT_MIX if mix is None else mix)
    weights = np.array([w for _, w in mix])
    lo, hi = length_range
    tasks, labels = [], []
    inst = np.empty((n_tasks, R))
    avg = np.empty((n_tasks, R))
    for i in range(n_tasks):
        rng = np.random.default_rng([seed, i])
        archetype = mix[rng.choice(len(mix), p=weights)][0]
        length = int(np.exp(rng.uniform(np.log(lo), np.log(hi + 1)))) if hi > lo else int(lo)
        task = generate_task(archetype, max(1, min(length, hi)), rng, task_id=f"t{i:05d}")
        inst[i] = stats.sample_realizations(task.inst, R, rng)
        avg[i] = stats.sample_realizations(task.avg, R, rng)
        tasks.append(task)
        labels.append(archetype.name)
    return Instance(tasks, inst, avg, labels)


_MIX_ITEM = re.compile(r"^\s*(?P<name>[a-z_]+)(?:\[(?P<params>[^\]]*)\])?\s*:\s*(?P<weight>[^,\s]+)\s*$")


def parse_mix(text: str) -> list[tuple[Archetype, float]]:
    """
    Parse ``name:weight`` pairs, comma separated. Parameters may be pinned with
    ``name[key=value;key=lo~hi]:weight``, e.g. ``constant[level=0.1]:1.0``.
    """
    items = []
    for chunk in re.split(r",(?![^\[]*\])", text):
        if not chunk.strip():
            continue
        m = _MIX_ITEM.match(chunk)
        if not m:
            raise SynthError(f"cannot parse mix item {chunk!r}")
        params = {}
        for kv in filter(None, (m["params"] or "").split(";")):
            key, _, value = kv.partition("=")
            try:
                if "~" in value:
                    a, b = value.split("~")
                    params[key.strip()] = (float(a), float(b))
                else:
                    params[key.strip()] = float(value)
            except ValueError:
                raise SynthError(f"bad parameter {kv!r} in {chunk!r}") from None
        try:
            weight = float(m["weight"])
        except ValueError:
            raise SynthError(f"bad weight in {chunk!r}") from None
        items.append((Archetype(m["name"], params), weight))
    return normalize_mix(items)


_HEADER = struct.Struct("<II")


def write_matrix(path, matrix: np.ndarray) -> None:
    """Row-major little-endian float64 preceded by two uint32 counts (rows, columns)."""
    matrix = np.asarray(matrix, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(*matrix.shape))
        fh.write(np.ascontiguousarray(matrix).tobytes())


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise SynthError(f"{path}: truncated header")
        rows, cols = _HEADER.unpack(head)
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != rows * cols:
        raise SynthError(f"{path}: expected {rows}x{cols} values, found {data.size}")
    return data.reshape(rows, cols).astype(float)


def instance_paths(stem) -> tuple[Path, Path, Path]:
    stem = Path(stem)
    return stem.with_suffix(".csv"), stem.with_suffix(".inst.bin"), stem.with_suffix(".avg.bin")


def write_instance(instance: Instance, stem) -> None:
    csv_path, inst_path, avg_path = instance_paths(stem)
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        write_usage_csv(instance.tasks, fh)
    write_matrix(inst_path, instance.inst_matrix)
    write_matrix(avg_path, instance.avg_matrix)


def read_instance(stem) -> Instance:
    csv_path, inst_path, avg_path = instance_paths(stem)
    tasks = build_profiles(parse_usage_csv(csv_path))
    return Instance(tasks, read_matrix(inst_path), read_matrix(avg_path))
