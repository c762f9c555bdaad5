"""
Estimator-driven First Fit / Best Fit stochastic bin packing.

A machine (bin) keeps the running sums of its tasks' means and variances. The
GPA fit test admits a task iff the Gaussian with the summed mean and variance
puts at most ``rho`` mass above the capacity. Scalar estimators (Cantelli,
av, perc) reduce each task to a deterministic size and fall back to the
classical ``sum of sizes <= capacity`` test.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from . import stats
from .stats import EmpiricalDistribution

FIRST_FIT = "first_fit"
BEST_FIT = "best_fit"
ALGORITHMS = (FIRST_FIT, BEST_FIT)
ESTIMATORS = ("gpa", "cantelli", "av", "perc")

BRUTE_FORCE_LIMIT = 12


class PackingError(ValueError):
    pass


@dataclass(frozen=True)
class Estimator:
    kind: str
    param: float

    def __post_init__(self):
        if self.kind not in ESTIMATORS:
            raise PackingError(f"unknown estimator {self.kind!r}")
        p = float(self.param)
        if self.kind == "gpa" and not 0 < p < 1:
            raise PackingError(f"gpa rho must be in (0, 1), got {p}")
        if self.kind in ("cantelli", "av") and not p > 0:
            raise PackingError(f"{self.kind} parameter must be positive, got {p}")
        if self.kind == "perc" and not 0 < p <= 100:
            raise PackingError(f"perc rank must be in (0, 100], got {p}")
        object.__setattr__(self, "param", p)

    @property
    def label(self) -> str:
        return f"{self.kind}:{self.param:g}"

    @classmethod
    def parse(cls, text: str) -> "Estimator":
        kind, sep, value = text.partition(":")
        if not sep:
            raise PackingError(f"estimator must look like kind:value, got {text!r}")
        try:
            return cls(kind.strip().lower(), float(value))
        except ValueError:
            raise PackingError(f"bad estimator parameter in {text!r}") from None


def gpa(rho: float) -> Estimator:
    return Estimator("gpa", rho)


def cantelli(b: float) -> Estimator:
    return Estimator("cantelli", b)


def av(f: float) -> Estimator:
    return Estimator("av", f)


def perc(k: float) -> Estimator:
    return Estimator("perc", k)


@dataclass(frozen=True, eq=False)
class TaskStats:
    task_id: str
    mu: float
    sigma: float
    observed: Optional[EmpiricalDistribution] = None

    @classmethod
    def from_samples(cls, task_id, samples) -> "TaskStats":
        d = EmpiricalDistribution(samples)
        return cls(str(task_id), stats.mean(d), stats.std_dev(d), d)


@dataclass(frozen=True)
class PackingConfig:
    capacity: float
    estimator: Estimator
    algorithm: str = FIRST_FIT
    rebalance: bool = True
    max_failures: int = 5

    def __post_init__(self):
        if not self.capacity > 0:
            raise PackingError("capacity must be positive")
        if self.algorithm not in ALGORITHMS:
            raise PackingError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.max_failures < 0:
            raise PackingError("max_failures must be non-negative")


@dataclass(frozen=True)
class MachineState:
    """An open machine. Sums are accumulated in insertion order."""

    index: int
    assigned: tuple = ()
    mu_sum: float = 0.0
    var_sum: float = 0.0
    size_sum: float = 0.0


@dataclass(frozen=True)
class PackingResult:
    machines: tuple
    assignment: Mapping[str, int] = field(repr=False)

    @property
    def m(self) -> int:
        return len(self.machines)


def fit_bin_gpa(task: TaskStats, machine: MachineState, rho: float, c: float) -> float:
    """Margin rho - P[N(mu', sigma'^2) > c] for the machine with `task` added; >= 0 means it fits."""
    mu = machine.mu_sum + task.mu
    var = machine.var_sum + task.sigma * task.sigma
    return float(_gpa_margin(mu, var, rho, c))


def _gpa_margin(mu, var, rho, c):
    return rho - stats.gaussian_sf(c, mu, np.sqrt(var))


def effective_size(task: TaskStats, estimator: Estimator) -> float:
    if estimator.kind == "gpa":
        raise PackingError("GPA is distributional: it has no scalar item size")
    if estimator.kind == "cantelli":
        return task.mu + estimator.param * task.sigma
    if estimator.kind == "av":
        return estimator.param * task.mu
    if task.observed is None:
        raise PackingError(f"task {task.task_id}: perc estimator needs observed samples")
    return stats.percentile(task.observed, estimator.param)


def fits(machine: MachineState, task: TaskStats, cfg: PackingConfig, size: Optional[float] = None):
    """(fits, score). Score is the GPA margin, or the residual capacity for scalar estimators."""
    est = cfg.estimator
    if est.kind == "gpa":
        margin = fit_bin_gpa(task, machine, est.param, cfg.capacity)
        return margin >= 0, margin
    if size is None:
        size = effective_size(task, est)
    load = machine.size_sum + size
    return load <= cfg.capacity, cfg.capacity - load


class _Bins:
    """Array-backed machine sums used while packing."""

    def __init__(self, cfg: PackingConfig, capacity_hint: int):
        self.cfg = cfg
        n = max(capacity_hint, 1)
        self.mu = np.zeros(n)
        self.var = np.zeros(n)
        self.size = np.zeros(n)
        self.members: list[list[int]] = []

    @property
    def m(self):
        return len(self.members)

    def scores(self, mu, var, size, upto=None):
        """(fit mask, score) of the task against machines [0, upto)."""
        k = self.m if upto is None else upto
        if self.cfg.estimator.kind == "gpa":
            score = _gpa_margin(self.mu[:k] + mu, self.var[:k] + var, self.cfg.estimator.param, self.cfg.capacity)
            return score >= 0, score
        load = self.size[:k] + size
        return load <= self.cfg.capacity, self.cfg.capacity - load

    def open(self):
        self.members.append([])
        return self.m - 1

    def add(self, j, i, mu, var, size):
        self.members[j].append(i)
        self.mu[j] += mu
        self.var[j] += var
        self.size[j] += size

    def recompute(self, j, mus, vars_, sizes):
        mu = var = size = 0.0
        for i in self.members[j]:
            mu += mus[i]
            var += vars_[i]
            size += sizes[i]
        self.mu[j], self.var[j], self.size[j] = mu, var, size


def _task_arrays(tasks: Sequence[TaskStats], cfg: PackingConfig):
    mus = [float(t.mu) for t in tasks]
    vars_ = [float(t.sigma) * float(t.sigma) for t in tasks]
    if cfg.estimator.kind == "gpa":
        sizes = [0.0] * len(tasks)
    else:
        sizes = [float(effective_size(t, cfg.estimator)) for t in tasks]
    return mus, vars_, sizes


def _result(tasks: Sequence[TaskStats], bins: _Bins) -> PackingResult:
    machines, assignment = [], {}
    for j, members in enumerate(bins.members):
        ids = tuple(tasks[i].task_id for i in members)
        machines.append(MachineState(j + 1, ids, float(bins.mu[j]), float(bins.var[j]), float(bins.size[j])))
        for tid in ids:
            assignment[tid] = j + 1
    return PackingResult(tuple(machines), assignment)


def _pack(tasks: Sequence[TaskStats], cfg: PackingConfig, best: bool) -> PackingResult:
    tasks = list(tasks)
    ids = [t.task_id for t in tasks]
    if len(set(ids)) != len(ids):
        raise PackingError("task ids must be unique")
    mus, vars_, sizes = _task_arrays(tasks, cfg)
    bins = _Bins(cfg, len(tasks))
    for i, t in enumerate(tasks):
        ok, score = bins.scores(mus[i], vars_[i], sizes[i])
        hits = np.flatnonzero(ok)
        if hits.size:
            # argmin returns the first (lowest-index) minimum on ties.
            j = int(hits[np.argmin(score[hits])]) if best else int(hits[0])
        else:
            j = bins.open()
            alone, _ = bins.scores(mus[i], vars_[i], sizes[i], upto=j + 1)
            if not alone[j]:
                raise PackingError(f"task {t.task_id} does not fit in an empty machine")
        bins.add(j, i, mus[i], vars_[i], sizes[i])
    result = _result(tasks, bins)
    if cfg.rebalance:
        result = rebalance(result, {t.task_id: t for t in tasks}, cfg)
    return result


def first_fit(tasks: Sequence[TaskStats], cfg: PackingConfig) -> PackingResult:
    """Place each task, in the given order, on the lowest-index machine it fits."""
    return _pack(tasks, cfg, best=False)


def best_fit(tasks: Sequence[TaskStats], cfg: PackingConfig) -> PackingResult:
    """Place each task on the fitting machine with the smallest score (ties: lowest index)."""
    return _pack(tasks, cfg, best=True)


def pack(tasks: Sequence[TaskStats], cfg: PackingConfig) -> PackingResult:
    return _pack(tasks, cfg, best=cfg.algorithm == BEST_FIT)


def rebalance(result: PackingResult, tasks: Mapping[str, TaskStats], cfg: PackingConfig) -> PackingResult:
    """
    Round-robin over machines 1..m-1, trying to migrate each machine's earliest
    untried task to the last machine m. Stops after `cfg.max_failures` failed
    moves in total, or when no candidate is left. A machine never gives away
    its only task, so m is unchanged.
    """
    m = result.m
    if m < 2:
        return result
    order = [tid for mach in result.machines for tid in mach.assigned]
    pos = {tid: i for i, tid in enumerate(order)}
    stat_list = [tasks[tid] for tid in order]
    mus, vars_, sizes = _task_arrays(stat_list, cfg)
    bins = _Bins(cfg, m)
    for mach in result.machines:
        j = bins.open()
        for tid in mach.assigned:
            i = pos[tid]
            bins.add(j, i, mus[i], vars_[i], sizes[i])
    last = m - 1
    tried = [set() for _ in range(last)]
    failures = 0
    j = 0
    while failures < cfg.max_failures:
        for step in range(last):
            src = (j + step) % last
            if len(bins.members[src]) > 1 and any(i not in tried[src] for i in bins.members[src]):
                break
        else:
            break
        i = next(i for i in bins.members[src] if i not in tried[src])
        tried[src].add(i)
        ok, _ = bins.scores(mus[i], vars_[i], sizes[i], upto=m)
        if ok[last]:
            bins.members[src].remove(i)
            bins.recompute(src, mus, vars_, sizes)
            bins.add(last, i, mus[i], vars_[i], sizes[i])
        else:
            failures += 1
        j = (src + 1) % last
    return _result(stat_list, bins)


def machine_state(index: int, members: Iterable[TaskStats], estimator: Estimator) -> MachineState:
    """Rebuild a machine's sums from scratch, summing in the given order."""
    members = list(members)
    mu = var = size = 0.0
    for t in members:
        mu += t.mu
        var += t.sigma * t.sigma
        if estimator.kind != "gpa":
            size += effective_size(t, estimator)
    return MachineState(index, tuple(t.task_id for t in members), mu, var, size)


def part_fits(members: Sequence[TaskStats], cfg: PackingConfig, slack: float = 0.0) -> bool:
    """Whether a whole set of tasks satisfies the fit criterion on one machine."""
    st = machine_state(0, members, cfg.estimator)
    if cfg.estimator.kind == "gpa":
        return float(_gpa_margin(st.mu_sum, st.var_sum, cfg.estimator.param, cfg.capacity)) >= -slack
    return st.size_sum <= cfg.capacity + slack


def admission_violations(result: PackingResult, tasks: Mapping[str, TaskStats], cfg: PackingConfig) -> list[int]:
    """Indices of machines whose full task set fails the fit criterion."""
    return [mach.index for mach in result.machines
            if not part_fits([tasks[tid] for tid in mach.assigned], cfg)]


def brute_force_min_machines(tasks: Sequence[TaskStats], cfg: PackingConfig) -> int:
    """
    Exact minimum number of machines over all set partitions of `tasks`.

    Exhaustive search with symmetry breaking (restricted growth strings). Parts
    are checked incrementally when the criterion is hereditary (subsets of a
    feasible set stay feasible), which holds for non-negative sizes and for GPA
    with rho < 0.5; otherwise every complete partition is checked.
    """
    tasks = list(tasks)
    n = len(tasks)
    if n > BRUTE_FORCE_LIMIT:
        raise PackingError(f"brute force is limited to {BRUTE_FORCE_LIMIT} tasks, got {n}")
    if n == 0:
        return 0
    slack = 1e-12
    for t in tasks:
        if not part_fits([t], cfg, slack):
            raise PackingError(f"task {t.task_id} does not fit in an empty machine")
    est = cfg.estimator
    if est.kind == "gpa":
        hereditary = est.param < 0.5 and all(t.mu >= 0 for t in tasks)
    else:
        hereditary = all(effective_size(t, est) >= 0 for t in tasks)

    best = n
    parts: list[list[TaskStats]] = []

    def search(i):
        nonlocal best
        if len(parts) >= best:
            return
        if i == n:
            if hereditary or all(part_fits(p, cfg, slack) for p in parts):
                best = len(parts)
            return
        t = tasks[i]
        for p in parts:
            p.append(t)
            if not hereditary or part_fits(p, cfg, slack):
                search(i + 1)
            p.pop()
        parts.append([t])
        search(i + 1)
        parts.pop()

    search(0)
    return best


def replay_first_fit_choices(tasks: Sequence[TaskStats], result: PackingResult, cfg: PackingConfig) -> list[str]:
    """
    Re-run the placements of a first-fit result (without rebalancing) through
    `fits` and report tasks that did not land on the lowest fitting index.
    """
    by_machine: dict[int, list[TaskStats]] = {}
    bad = []
    for t in tasks:
        target = result.assignment[t.task_id]
        chosen = None
        for idx in sorted(by_machine):
            st = machine_state(idx, by_machine[idx], cfg.estimator)
            if fits(st, t, cfg)[0]:
                chosen = idx
                break
        if chosen is None:
            chosen = len(by_machine) + 1
        if chosen != target:
            bad.append(t.task_id)
        by_machine.setdefault(target, []).append(t)
    return bad


def sqrt_var(machine: MachineState) -> float:
    return math.sqrt(machine.var_sum)
