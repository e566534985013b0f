"""Training plans, dataset mixtures and proportional task sampling."""
from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

import jsonschema

from ..data.io import load_schema
from ..data.synthetic import SyntheticSpec
from ..errors import UsageError

STAGE_KINDS = ("coarse_tune", "multi_task", "single_task")
DATASET_KINDS = ("mcqa", "pair")


@dataclass
class DatasetRef:
    """Where a dataset comes from: a JSON file or a synthetic generator spec."""

    kind: str
    path: Optional[str] = None
    synthetic: Optional[dict] = None
    speaker_normalization: bool = False

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise UsageError(f"dataset kind must be one of {DATASET_KINDS}, got {self.kind!r}")
        if (self.path is None) == (self.synthetic is None):
            raise UsageError("a dataset needs exactly one of 'path' or 'synthetic'")
        if self.synthetic is not None:
            SyntheticSpec(**self.synthetic)


@dataclass
class StageConfig:
    kind: str
    datasets: List[str]
    epochs: float = 1.0
    lr_max: float = 5e-5
    warmup: float = 0.1
    clip: Optional[float] = None
    batch_size: int = 16
    seed: Optional[int] = None
    eval_every: Optional[int] = None
    patience: Optional[int] = None
    dev: Optional[str] = None
    max_steps: Optional[int] = None

    def __post_init__(self):
        if self.kind not in STAGE_KINDS:
            raise UsageError(f"stage kind must be one of {STAGE_KINDS}, got {self.kind!r}")
        if not self.datasets:
            raise UsageError("a stage needs at least one dataset")
        if self.kind == "single_task" and len(self.datasets) != 1:
            raise UsageError("single_task stages train on exactly one dataset")
        if self.batch_size < 1 or self.epochs <= 0:
            raise UsageError("batch_size and epochs must be positive")
        if self.clip is not None and self.clip < 0:
            raise UsageError("clip must be positive, 0/None to disable")


@dataclass
class TrainPlan:
    """Ordered stages over named datasets, plus model and run settings.

    ``roles`` names the datasets the experiment harnesses rearrange
    (``target``, ``target_dev``, ``source``, ``aux``, ``aux_dev``).
    """

    stages: List[StageConfig]
    datasets: Dict[str, DatasetRef]
    encoder: dict = field(default_factory=dict)
    classifier: dict = field(default_factory=lambda: {"kind": "man", "steps": 2})
    seed: int = 0
    precision: str = "f64"
    min_freq: int = 1
    aggregation: str = "sum"
    sliding_window: bool = True
    roles: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.stages:
            raise UsageError("a plan needs at least one stage")
        for st in self.stages:
            for name in st.datasets + ([st.dev] if st.dev else []):
                if name not in self.datasets:
                    raise UsageError(f"stage refers to unknown dataset {name!r}")
        if self.precision not in ("f32", "f64"):
            raise UsageError("precision must be 'f32' or 'f64'")

    def stage_seed(self, index: int) -> int:
        st = self.stages[index]
        return st.seed if st.seed is not None else self.seed * 1000 + index

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainPlan":
        d = copy.deepcopy(d)
        errors = sorted(jsonschema.Draft202012Validator(load_schema("plan")).iter_errors(d), key=str)
        if errors:
            where = "/".join(map(str, errors[0].absolute_path)) or "<plan>"
            raise UsageError(f"invalid plan at {where}: {errors[0].message}")
        d["stages"] = [StageConfig(**s) for s in d.get("stages", [])]
        d["datasets"] = {k: DatasetRef(**v) for k, v in d.get("datasets", {}).items()}
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainPlan":
        """Read a plan file; relative dataset paths resolve against the file's directory."""
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except OSError as exc:
            raise UsageError(f"{path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid plan ({exc})") from None
        base = os.path.dirname(os.path.abspath(path))
        for ref in (d.get("datasets") or {}).values() if isinstance(d, dict) else ():
            if isinstance(ref, dict) and isinstance(ref.get("path"), str) and not os.path.isabs(ref["path"]):
                ref["path"] = os.path.join(base, ref["path"])
        try:
            return cls.from_dict(d)
        except TypeError as exc:
            raise UsageError(f"{path}: invalid plan ({exc})") from None

    def replace(self, **changes) -> "TrainPlan":
        d = self.to_dict()
        d.update(copy.deepcopy(changes))
        if "stages" in changes:
            d["stages"] = [asdict(s) if isinstance(s, StageConfig) else s for s in changes["stages"]]
        if "datasets" in changes:
            d["datasets"] = {k: asdict(v) if isinstance(v, DatasetRef) else v
                             for k, v in changes["datasets"].items()}
        return TrainPlan.from_dict(d)


@dataclass
class DatasetMixture:
    names: List[str]
    sizes: List[int]

    def __post_init__(self):
        if not self.names or len(self.names) != len(self.sizes):
            raise UsageError("mixture needs one size per dataset")
        if any(s <= 0 for s in self.sizes):
            raise UsageError("dataset sizes must be positive")

    @property
    def probabilities(self) -> np.ndarray:
        sizes = np.asarray(self.sizes, dtype=np.float64)
        return sizes / sizes.sum()


def sample_task(mixture: DatasetMixture, rng: np.random.Generator) -> int:
    """Index ``j`` with probability ``size_j / sum(sizes)``; one uniform draw per call."""
    u = rng.random()
    cdf = np.cumsum(mixture.probabilities)
    return min(int(np.searchsorted(cdf, u, side="right")), len(mixture.sizes) - 1)


def stage_total_steps(stage: StageConfig, sizes: Sequence[int]) -> int:
    """``max_steps`` if given, else epochs x batches per epoch of the largest dataset."""
    if stage.max_steps is not None:
        return int(stage.max_steps)
    per_epoch = -(-max(sizes) // stage.batch_size)
    return max(1, int(round(stage.epochs * per_epoch)))
