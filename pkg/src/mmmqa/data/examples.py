"""Record types for multiple-choice and sentence-pair datasets."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, Optional

from ..errors import UsageError

NLI_LABELS = ("entailment", "neutral", "contradiction")
MIN_OPTIONS, MAX_OPTIONS = 2, 5


@dataclass
class MCQAExample:
    id: str
    passage: List[str]
    question: str
    options: List[str]
    label: Optional[int] = None

    def __post_init__(self):
        n = len(self.options)
        if not MIN_OPTIONS <= n <= MAX_OPTIONS:
            raise UsageError(f"example {self.id!r}: need {MIN_OPTIONS}-{MAX_OPTIONS} options, got {n}")
        if self.label is not None and not 0 <= self.label < n:
            raise UsageError(f"example {self.id!r}: label {self.label} out of range for {n} options")

    @property
    def n_options(self) -> int:
        return len(self.options)

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.label is None:
            del d["label"]
        return d


@dataclass
class PairExample:
    premise: str
    hypothesis: str
    label: int
    id: str = field(default="")

    def __post_init__(self):
        if self.label not in (0, 1, 2):
            raise UsageError(f"pair label must be 0, 1 or 2, got {self.label!r}")

    @property
    def label_name(self) -> str:
        return NLI_LABELS[self.label]

    def to_dict(self) -> dict:
        d = {"premise": self.premise, "hypothesis": self.hypothesis, "label": self.label}
        if self.id:
            d = {"id": self.id, **d}
        return d
