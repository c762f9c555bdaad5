"""
Grid sweeps over estimator x capacity x clairvoyance x signal on a fixed,
seed-derived set of synthetic instances, with per-cell checkpoint files.
"""
from __future__ import annotations

import io
import itertools
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .evaluation import ExperimentConfig, MetricsRow, read_results, run_experiment, write_results
from .packing import Estimator, PackingConfig
from .synth import generate_instance

JOBS_ENV = "COLOCATE_JOBS"


class SweepError(ValueError):
    pass


def default_jobs() -> int:
    env = os.environ.get(JOBS_ENV)
    if env:
        try:
            jobs = int(env)
        except ValueError:
            raise SweepError(f"{JOBS_ENV} must be an integer, got {env!r}") from None
        if jobs < 1:
            raise SweepError(f"{JOBS_ENV} must be at least 1")
        return jobs
    return os.cpu_count() or 1


def derive_seed(master: int, *path: int) -> int:
    """A 63-bit seed derived from the master seed and an integer path."""
    state = np.random.SeedSequence([master, *path]).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


@dataclass(frozen=True)
class InstanceSpec:
    n_tasks: int = 1000
    realizations: int = 10_000
    mix: Optional[tuple] = None
    master_seed: int = 0

    def seed(self, i: int) -> int:
        return derive_seed(self.master_seed, 0, i)

    def generate(self, i: int):
        return generate_instance(self.n_tasks, self.mix, R=self.realizations, seed=self.seed(i))


@dataclass(frozen=True)
class Cell:
    index: int
    estimator: Estimator
    capacity: float
    clairvoyance: float
    signal: str


@dataclass(frozen=True)
class Grid:
    estimators: Sequence[Estimator]
    capacities: Sequence[float] = (1.0,)
    clairvoyances: Sequence[float] = (1.0,)
    signals: Sequence[str] = ("inst",)
    algorithm: str = "first_fit"
    rebalance: bool = True
    instances: int = 50
    instance_spec: InstanceSpec = field(default_factory=InstanceSpec)

    def cells(self) -> list[Cell]:
        combos = itertools.product(self.estimators, self.capacities, self.clairvoyances, self.signals)
        out = [Cell(i, *combo) for i, combo in enumerate(combos)]
        if not out or self.instances < 1:
            raise SweepError("empty grid")
        return out


def run_cell(grid: Grid, cell: Cell) -> list[MetricsRow]:
    pcfg = PackingConfig(cell.capacity, cell.estimator, grid.algorithm, grid.rebalance)
    rows = []
    for i in range(grid.instances):
        instance = grid.instance_spec.generate(i)
        cfg = ExperimentConfig(pcfg, cell.clairvoyance, cell.signal,
                               seed=derive_seed(grid.instance_spec.master_seed, 1, cell.index, i))
        rows.append(run_experiment(instance, cfg, instance_id=i))
    return rows


def _cell_path(cells_dir: Path, cell: Cell) -> Path:
    return cells_dir / f"cell-{cell.index:05d}.csv"


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _run_and_checkpoint(grid: Grid, cell: Cell, path: Path) -> None:
    buf = io.StringIO()
    write_results(run_cell(grid, cell), buf)
    _atomic_write(path, buf.getvalue())


def run_sweep(grid: Grid, cells_dir, jobs: int = 1) -> list[MetricsRow]:
    """
    Run every grid cell not already checkpointed in `cells_dir`, then return the
    merged rows ordered by cell and instance.
    """
    cells = grid.cells()
    cells_dir = Path(cells_dir)
    cells_dir.mkdir(parents=True, exist_ok=True)
    todo = [c for c in cells if not _cell_path(cells_dir, c).exists()]
    if jobs <= 1 or len(todo) <= 1:
        for c in todo:
            _run_and_checkpoint(grid, c, _cell_path(cells_dir, c))
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(todo))) as pool:
            futures = [pool.submit(_run_and_checkpoint, grid, c, _cell_path(cells_dir, c)) for c in todo]
            for f in futures:
                f.result()
    rows = []
    for c in cells:
        with open(_cell_path(cells_dir, c), encoding="utf-8") as fh:
            rows.extend(read_results(fh))
    return rows
