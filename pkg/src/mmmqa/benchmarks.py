"""Shipped synthetic benchmark plans.

``transfer``: NLI coarse-tuning, then a story MCQA source and a 30-example
dialogue target trained jointly. Source and target draw their content words
from disjoint halves of the word table, while the NLI data covers both, so
the target's unseen words can only be learned through coarse-tuning.

``learnability``: a single 2000-example MCQA task with a 500-example dev set.
"""
from __future__ import annotations

import json
from importlib import resources

from .errors import UsageError
from .training.plan import TrainPlan

BENCHMARKS = ("transfer", "learnability")


def benchmark_dict(name: str) -> dict:
    if name not in BENCHMARKS:
        raise UsageError(f"unknown benchmark {name!r}; choose from {BENCHMARKS}")
    return json.loads(resources.files("mmmqa").joinpath("configs", f"{name}.json").read_text("utf-8"))


def load_benchmark(name: str, seed: int = None) -> TrainPlan:
    plan = TrainPlan.from_dict(benchmark_dict(name))
    return plan if seed is None else plan.replace(seed=seed)
