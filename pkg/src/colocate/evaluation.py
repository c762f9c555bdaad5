"""
Monte Carlo evaluation of packings: observation / evaluation splits,
normalized machine counts and the capacity-violation frequency q.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .packing import PackingConfig, PackingResult, TaskStats, pack
from .stats import EmpiricalDistribution
from .synth import Instance

SIGNALS = ("inst", "avg")

RESULT_COLUMNS = ("instance_id", "estimator", "params", "algorithm", "signal",
                  "clairvoyance", "capacity", "m_abs", "m_norm", "m", "q")

_PARAM_NAMES = {"gpa": "rho", "cantelli": "b", "av": "f", "perc": "k"}


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    packing: PackingConfig
    clairvoyance: float = 1.0
    signal: str = "inst"
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.clairvoyance <= 1:
            raise EvaluationError(f"clairvoyance must be in (0, 1], got {self.clairvoyance}")
        if self.signal not in SIGNALS:
            raise EvaluationError(f"signal must be one of {SIGNALS}, got {self.signal!r}")


@dataclass(frozen=True)
class MetricsRow:
    instance_id: int
    estimator: str
    params: str
    algorithm: str
    signal: str
    clairvoyance: float
    capacity: float
    m_abs: int
    m_norm: int
    m: float
    q: float

    def as_csv(self) -> list[str]:
        return [str(self.instance_id), self.estimator, self.params, self.algorithm, self.signal,
                repr(float(self.clairvoyance)), repr(float(self.capacity)),
                str(self.m_abs), str(self.m_norm), repr(float(self.m)), repr(float(self.q))]


def split_observation_evaluation(R: int, level: float, seed: int = 0) -> tuple[range, range]:
    """
    Observation set = the first floor(level * R) realization columns, evaluation
    set = the rest. At full clairvoyance both are all R columns. Columns are
    i.i.d., so `seed` does not change the split; it is accepted for symmetry
    with the other experiment hooks.
    """
    if not 0 < level <= 1:
        raise EvaluationError(f"clairvoyance level must be in (0, 1], got {level}")
    if level == 1:
        return range(R), range(R)
    k = math.floor(round(level * R, 9))
    if k == 0:
        raise EvaluationError(f"clairvoyance {level} leaves no observations out of R={R}")
    return range(k), range(k, R)


def _columns(index_set):
    if isinstance(index_set, range) and index_set.step == 1:
        return slice(index_set.start, index_set.stop)
    return np.asarray(list(index_set), dtype=np.int64)


def machine_violations(result: PackingResult, inst_matrix: np.ndarray, E, c: float,
                       rows: Mapping[str, int]) -> np.ndarray:
    """q(j): number of evaluation realizations where machine j's summed usage exceeds c."""
    cols = _columns(E)
    counts = np.zeros(result.m, dtype=np.int64)
    for j, mach in enumerate(result.machines):
        idx = [rows[tid] for tid in mach.assigned]
        total = inst_matrix[idx][:, cols].sum(axis=0)
        counts[j] = int(np.count_nonzero(total > c))
    return counts


def compute_q(result: PackingResult, inst_matrix: np.ndarray, E, c: float,
              rows: Mapping[str, int]) -> float:
    """Violation frequency averaged over machines and evaluation realizations (strict > c)."""
    n_eval = len(E)
    if n_eval == 0:
        raise EvaluationError("empty evaluation set")
    if result.m == 0:
        return 0.0
    counts = machine_violations(result, inst_matrix, E, c, rows)
    return float(counts.sum()) / (result.m * n_eval)


def compute_normalized_machines(result: PackingResult, task_means: Iterable[float], c: float):
    """(m_abs, m_norm, m) with m_norm = ceil(sum of task means / c)."""
    if not c > 0:
        raise EvaluationError("capacity must be positive")
    total = math.fsum(task_means)
    m_norm = max(1, math.ceil(round(total / c, 9)))
    return result.m, m_norm, result.m / m_norm


def observation_stats(instance: Instance, O, signal: str = "inst", keep_samples: bool = False) -> list[TaskStats]:
    """Per-task mean / deviation over the observation columns of the chosen matrix."""
    matrix = instance.inst_matrix if signal == "inst" else instance.avg_matrix
    x = matrix[:, _columns(O)]
    flat = x.min(axis=1) == x.max(axis=1)
    mus = np.where(flat, x[:, 0], x.mean(axis=1))
    sigmas = np.where(flat, 0.0, x.std(axis=1))
    out = []
    for i, task in enumerate(instance.tasks):
        observed = EmpiricalDistribution(x[i]) if keep_samples else None
        out.append(TaskStats(task.task_id, float(mus[i]), float(sigmas[i]), observed))
    return out


def params_label(cfg: PackingConfig) -> str:
    est = cfg.estimator
    label = f"{_PARAM_NAMES[est.kind]}={est.param:g}"
    if not cfg.rebalance:
        label += ";rebalance=off"
    return label


def run_experiment(instance: Instance, cfg: ExperimentConfig, instance_id: int = 0,
                   return_result: bool = False):
    """
    Pack from observation-window statistics of the selected signal, then
    measure q on the instantaneous matrix over the evaluation columns.
    """
    pcfg = cfg.packing
    O, E = split_observation_evaluation(instance.realizations, cfg.clairvoyance, cfg.seed)
    task_stats = observation_stats(instance, O, cfg.signal, keep_samples=pcfg.estimator.kind == "perc")
    result = pack(task_stats, pcfg)
    rows = {t.task_id: i for i, t in enumerate(instance.tasks)}
    q = compute_q(result, instance.inst_matrix, E, pcfg.capacity, rows)
    m_abs, m_norm, m = compute_normalized_machines(result, (t.mu for t in instance.tasks), pcfg.capacity)
    row = MetricsRow(instance_id, pcfg.estimator.kind, params_label(pcfg), pcfg.algorithm, cfg.signal,
                     cfg.clairvoyance, pcfg.capacity, m_abs, m_norm, m, q)
    if return_result:
        return row, result, task_stats
    return row


def write_results(rows: Iterable[MetricsRow], fh: IO[str], header: bool = True) -> None:
    w = csv.writer(fh, lineterminator="\n")
    if header:
        w.writerow(RESULT_COLUMNS)
    for r in rows:
        w.writerow(r.as_csv())


def read_results(fh: IO[str]) -> list[MetricsRow]:
    lines = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(lines)
    out = []
    for d in reader:
        out.append(MetricsRow(int(d["instance_id"]), d["estimator"], d["params"], d["algorithm"], d["signal"],
                              float(d["clairvoyance"]), float(d["capacity"]), int(d["m_abs"]),
                              int(d["m_norm"]), float(d["m"]), float(d["q"])))
    return out


def summarize(rows: Sequence[MetricsRow]) -> dict:
    """Mean m and q per (estimator, params, algorithm, signal, clairvoyance, capacity) cell."""
    cells: dict = {}
    for r in rows:
        key = (r.estimator, r.params, r.algorithm, r.signal, r.clairvoyance, r.capacity)
        cells.setdefault(key, []).append(r)
    return {k: {"instances": len(v),
                "mean_m": float(np.mean([r.m for r in v])),
                "mean_q": float(np.mean([r.q for r in v]))}
            for k, v in cells.items()}
