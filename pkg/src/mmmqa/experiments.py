"""Seeded experiment harnesses: ablations, reasoning-step sweep, training orders, convergence."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import UsageError
from .evaluation import evaluate
from .training.loop import DataRegistry, MetricsRow, run_pipeline
from .training.plan import StageConfig, TrainPlan

log = logging.getLogger(__name__)

ABLATION_ROWS = ("full", "-multi_task", "-coarse_tune", "-man", "-speaker_normalization")
ORDER_ROWS = ("sequential", "multi_task", "merged", "staged")
RESULT_FIELDS = ("row", "column", "seed", "accuracy")


# ---------------------------------------------------------------- runs

@dataclass
class RunResult:
    accuracy: float
    rows: List[MetricsRow]

    def stage_losses(self, stage: int) -> List[float]:
        return [r.loss for r in self.rows if r.stage == stage]


class RunCache:
    """Memoizes finished runs by their full plan (seed included).

    Tables that share a configuration (the staged row of the order
    comparison is the full model of the ablation) train it only once.
    """

    def __init__(self):
        self._runs: Dict[str, RunResult] = {}
        self.misses = 0

    def run(self, plan: TrainPlan) -> RunResult:
        key = plan.to_json()
        if key not in self._runs:
            self.misses += 1
            self._runs[key] = execute(plan)
        return self._runs[key]

    def __len__(self):
        return len(self._runs)


def execute(plan: TrainPlan) -> RunResult:
    """Train ``plan`` from scratch and score the final model on the target dev set."""
    dev = _role(plan, "target_dev")
    result = run_pipeline(plan)
    last = result.rows[-1] if result.rows else None
    if last is not None and last.dev_acc is not None and plan.stages[-1].dev == dev:
        return RunResult(last.dev_acc, result.rows)
    data = DataRegistry(plan)
    acc = evaluate(result.model, data.encoded(dev, result.model), dev).accuracy
    return RunResult(acc, result.rows)


def _role(plan: TrainPlan, role: str) -> str:
    name = plan.roles.get(role)
    if name is None or name not in plan.datasets:
        raise UsageError(f"plan does not name a {role!r} dataset in 'roles'")
    return name


# ---------------------------------------------------------------- tables

@dataclass
class ExperimentTable:
    """Accuracies per (row, column) and seed, each with the plan that produced it."""

    name: str
    rows: List[str]
    columns: List[str]
    seeds: List[int]
    cells: Dict[Tuple[str, str], Dict[int, float]] = field(default_factory=dict)
    configs: Dict[Tuple[str, str], dict] = field(default_factory=dict)

    def record(self, row: str, column: str, seed: int, accuracy: float, plan: TrainPlan) -> None:
        self.cells.setdefault((row, column), {})[seed] = accuracy
        cfg = plan.to_dict()
        cfg.pop("seed")
        self.configs[(row, column)] = cfg

    def values(self, row: str, column: str) -> List[float]:
        cell = self.cells[(row, column)]
        return [cell[s] for s in self.seeds]

    def mean(self, row: str, column: Optional[str] = None) -> float:
        return float(np.mean(self.values(row, column or self.columns[0])))

    def std(self, row: str, column: Optional[str] = None) -> float:
        return float(np.std(self.values(row, column or self.columns[0])))

    def plan_for(self, row: str, column: str, seed: int) -> TrainPlan:
        return TrainPlan.from_dict(dict(self.configs[(row, column)], seed=seed))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(RESULT_FIELDS)
            for row in self.rows:
                for col in self.columns:
                    for seed in self.seeds:
                        w.writerow([row, col, seed, repr(self.cells[(row, col)][seed])])

    def save_configs(self, path) -> None:
        out = [{"row": r, "column": c, "config": self.configs[(r, c)]} for r in self.rows for c in self.columns]
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"seeds": self.seeds, "cells": out}, fh, indent=1, sort_keys=True)

    def render(self) -> str:
        width = max(len(r) for r in self.rows) + 2
        head = " " * width + "".join(f"{c:>20}" for c in self.columns)
        lines = [self.name, head]
        for r in self.rows:
            cells = "".join(f"{self.mean(r, c):>12.4f} ± {self.std(r, c):.3f}" for c in self.columns)
            lines.append(f"{r:<{width}}{cells}")
        lines.append(f"seeds: {', '.join(map(str, self.seeds))}")
        return "\n".join(lines)


def read_results_csv(path) -> List[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [dict(r, seed=int(r["seed"]), accuracy=float(r["accuracy"])) for r in csv.DictReader(fh)]


def _fill(table: ExperimentTable, plans: Dict[Tuple[str, str], TrainPlan], cache: RunCache) -> ExperimentTable:
    for (row, col), plan in plans.items():
        for seed in table.seeds:
            p = plan.replace(seed=seed)
            res = cache.run(p)
            log.info("%s | %s | %s | seed %d -> %.4f", table.name, row, col, seed, res.accuracy)
            table.record(row, col, seed, res.accuracy, p)
    return table


def reproduce_cell(table: ExperimentTable, row: str, column: str, seed: int) -> bool:
    """Retrain one cell from its recorded (config, seed) and compare exactly."""
    return execute(table.plan_for(row, column, seed)).accuracy == table.cells[(row, column)][seed]


# ---------------------------------------------------------------- plan rewrites

def _stages(plan: TrainPlan, kind: str) -> List[int]:
    return [i for i, s in enumerate(plan.stages) if s.kind == kind]


def _final_stage(plan: TrainPlan) -> StageConfig:
    idx = _stages(plan, "multi_task")
    if not idx:
        raise UsageError("base plan needs a multi_task stage")
    return plan.stages[idx[-1]]


def _with_stages(plan: TrainPlan, stages: Sequence[StageConfig]) -> TrainPlan:
    return plan.replace(stages=[asdict(s) for s in stages])


def _stage(template: StageConfig, kind: str, datasets: List[str], dev: Optional[str]) -> StageConfig:
    d = asdict(template)
    d.update(kind=kind, datasets=list(datasets), dev=dev)
    return StageConfig(**d)


def ablation_plans(base: TrainPlan) -> Dict[str, TrainPlan]:
    """The full plan and four single-component removals."""
    target, source = _role(base, "target"), _role(base, "source")
    dev = _role(base, "target_dev")
    final = _final_stage(base)
    coarse = [base.stages[i] for i in _stages(base, "coarse_tune")]
    if not coarse:
        raise UsageError("base plan needs a coarse_tune stage")
    full = _with_stages(base, coarse + [_stage(final, "multi_task", [source, target], dev)])
    no_norm = {k: dict(asdict(v), speaker_normalization=False) for k, v in full.datasets.items()}
    return {
        "full": full,
        "-multi_task": _with_stages(full, coarse + [_stage(final, "single_task", [target], dev)]),
        "-coarse_tune": _with_stages(full, [_stage(final, "multi_task", [source, target], dev)]),
        "-man": full.replace(classifier={"kind": "fcnn", "steps": 0}),
        "-speaker_normalization": full.replace(datasets=no_norm),
    }


def order_plans(base: TrainPlan) -> Dict[str, TrainPlan]:
    """source→target, {source,target}, {aux,source,target}, aux→{source,target}."""
    target, source, aux = _role(base, "target"), _role(base, "source"), _role(base, "aux")
    dev = _role(base, "target_dev")
    final = _final_stage(base)
    coarse_idx = _stages(base, "coarse_tune")
    coarse = base.stages[coarse_idx[0]] if coarse_idx else final
    return {
        "sequential": _with_stages(base, [_stage(final, "single_task", [source], None),
                                          _stage(final, "single_task", [target], dev)]),
        "multi_task": _with_stages(base, [_stage(final, "multi_task", [source, target], dev)]),
        "merged": _with_stages(base, [_stage(final, "multi_task", [aux, source, target], dev)]),
        "staged": _with_stages(base, [_stage(coarse, "coarse_tune", [aux], None),
                                      _stage(final, "multi_task", [source, target], dev)]),
    }


# ---------------------------------------------------------------- harnesses

def _check_seeds(seeds: Iterable[int]) -> List[int]:
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise UsageError("need at least one seed")
    return seeds


def run_ablation(base: TrainPlan, seeds: Sequence[int], cache: Optional[RunCache] = None) -> ExperimentTable:
    seeds = _check_seeds(seeds)
    col = _role(base, "target_dev")
    plans = ablation_plans(base)
    table = ExperimentTable("ablation", list(ABLATION_ROWS), [col], seeds)
    return _fill(table, {(r, col): plans[r] for r in ABLATION_ROWS}, cache if cache is not None else RunCache())


def sweep_reasoning_steps(base: TrainPlan, k_list: Sequence[int], seeds: Sequence[int],
                          cache: Optional[RunCache] = None) -> ExperimentTable:
    """One column per reasoning-step count; K=0 is the FCNN head."""
    seeds = _check_seeds(seeds)
    k_list = [int(k) for k in k_list]
    if not k_list or min(k_list) < 0:
        raise UsageError("K list must be non-empty with entries >= 0")
    row = _role(base, "target_dev")
    cols = [f"K={k}" for k in k_list]
    table = ExperimentTable("reasoning steps", [row], cols, seeds)
    plans = {(row, c): base.replace(classifier={"kind": "man", "steps": k}) for c, k in zip(cols, k_list)}
    return _fill(table, plans, cache if cache is not None else RunCache())


def compare_training_orders(base: TrainPlan, seeds: Sequence[int],
                            cache: Optional[RunCache] = None) -> ExperimentTable:
    seeds = _check_seeds(seeds)
    col = _role(base, "target_dev")
    plans = order_plans(base)
    table = ExperimentTable("training orders", list(ORDER_ROWS), [col], seeds)
    return _fill(table, {(r, col): plans[r] for r in ORDER_ROWS}, cache if cache is not None else RunCache())


@dataclass
class ConvergenceResult:
    """Stage-2 training-loss curves with and without coarse-tuning, per seed."""

    curves: Dict[str, Dict[int, List[float]]]
    steps: int
    window: int

    def final_loss(self, condition: str, seed: int) -> float:
        curve = self.curves[condition][seed][:self.steps]
        return float(np.mean(curve[-self.window:]))

    def mean_final_loss(self, condition: str) -> float:
        return float(np.mean([self.final_loss(condition, s) for s in self.curves[condition]]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["condition", "seed", "step", "loss"])
            for cond, per_seed in self.curves.items():
                for seed, curve in per_seed.items():
                    for step, loss in enumerate(curve):
                        w.writerow([cond, seed, step, repr(loss)])

    def render(self) -> str:
        lines = [f"mean stage-2 loss over steps {self.steps - self.window + 1}-{self.steps}"]
        for cond in self.curves:
            lines.append(f"{cond:<14}{self.mean_final_loss(cond):.6f}")
        return "\n".join(lines)


def convergence_comparison(base: TrainPlan, seeds: Sequence[int], steps: int = 200, window: int = 20,
                           cache: Optional[RunCache] = None) -> ConvergenceResult:
    """Multi-task stage losses of the full plan against the same plan without coarse-tuning.

    The summary per seed is the mean training loss over the last ``window``
    of the first ``steps`` stage-2 steps.
    """
    seeds = _check_seeds(seeds)
    if not 1 <= window <= steps:
        raise UsageError("need 1 <= window <= steps")
    plans = ablation_plans(base)
    cache = cache if cache is not None else RunCache()
    curves: Dict[str, Dict[int, List[float]]] = {"coarse_tuned": {}, "from_scratch": {}}
    for cond, row in (("coarse_tuned", "full"), ("from_scratch", "-coarse_tune")):
        plan = plans[row]
        stage = len(plan.stages) - 1
        for seed in seeds:
            losses = cache.run(plan.replace(seed=seed)).stage_losses(stage)
            if len(losses) < steps:
                raise UsageError(f"stage-2 ran {len(losses)} steps, fewer than {steps}")
            curves[cond][seed] = losses
    return ConvergenceResult(curves, steps, window)
