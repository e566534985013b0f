"""scikit-learn style wrappers around the training pipeline.

``MMMClassifier`` fits on a list of multiple-choice examples and predicts
option indices. Passing ``pair_data`` adds a coarse-tuning stage on a
sentence-pair task first; passing ``source_data`` trains the target
jointly with a larger multiple-choice source task.
"""
from __future__ import annotations

from typing import List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from .data.examples import MCQAExample, PairExample
from .data.text import speaker_normalize
from .errors import DegenerateInputError, UsageError
from .model import predict
from .training.loop import DataRegistry, run_pipeline
from .training.plan import DatasetRef, StageConfig, TrainPlan


def check_examples(X, kind: str = "mcqa", require_labels: bool = False) -> list:
    """Coerce ``X`` (records or dicts) to a list of examples and validate it."""
    cls = MCQAExample if kind == "mcqa" else PairExample
    if isinstance(X, (str, bytes, dict)) or not hasattr(X, "__iter__"):
        raise UsageError(f"expected a sequence of {cls.__name__} records, got {type(X).__name__}")
    out = []
    for i, item in enumerate(X):
        if isinstance(item, cls):
            out.append(item)
        elif isinstance(item, dict):
            try:
                out.append(cls(**item))
            except TypeError as exc:
                raise UsageError(f"record {i}: {exc}") from None
        else:
            raise UsageError(f"record {i}: expected {cls.__name__} or dict, got {type(item).__name__}")
    if not out:
        raise DegenerateInputError("no examples given")
    if require_labels and any(ex.label is None for ex in out):
        raise UsageError("every training example needs a label")
    return out


def _with_labels(examples: List[MCQAExample], y) -> List[MCQAExample]:
    if y is None:
        return examples
    y = np.asarray(y)
    if y.shape != (len(examples),):
        raise UsageError(f"y has shape {y.shape}, expected ({len(examples)},)")
    return [MCQAExample(ex.id, ex.passage, ex.question, ex.options, int(lab)) for ex, lab in zip(examples, y)]


class SpeakerNormalizer(TransformerMixin, BaseEstimator):
    """Expand one-letter speaker tags in passages (and optionally questions and options).

    Works on multiple-choice examples or on plain strings; stateless.
    """

    def __init__(self, fields: Sequence[str] = ("passage",)):
        self.fields = fields

    def fit(self, X, y=None):
        bad = set(self.fields) - {"passage", "question", "options"}
        if bad:
            raise UsageError(f"unknown fields {sorted(bad)}")
        return self

    def transform(self, X):
        out = []
        for item in X:
            if isinstance(item, str):
                out.append(speaker_normalize(item))
                continue
            ex = check_examples([item])[0]
            passage = [speaker_normalize(u) for u in ex.passage] if "passage" in self.fields else ex.passage
            question = speaker_normalize(ex.question) if "question" in self.fields else ex.question
            options = [speaker_normalize(o) for o in ex.options] if "options" in self.fields else ex.options
            out.append(MCQAExample(ex.id, passage, question, options, ex.label))
        return out


class MMMClassifier(ClassifierMixin, BaseEstimator):
    """Multiple-choice reader: transformer encoder plus a multi-step attention head.

    ``classifier="fcnn"`` (or ``steps=0``) swaps in the pooled feed-forward
    head. Predictions are option indices; ``predict_proba`` pads rows with
    zeros up to the largest option count seen in ``fit``.
    """

    def __init__(self, hidden: int = 32, layers: int = 2, heads: int = 4, max_len: int = 64,
                 dropout: float = 0.1, classifier: str = "man", steps: int = 2, epochs: float = 5.0,
                 lr: float = 2e-3, warmup: float = 0.1, batch_size: int = 16, clip: Optional[float] = 5.0,
                 normalize_speakers: bool = True, aggregation: str = "sum", pair_data=None,
                 pair_epochs: float = 1.0, source_data=None, random_state: int = 0, precision: str = "f64"):
        self.hidden = hidden
        self.layers = layers
        self.heads = heads
        self.max_len = max_len
        self.dropout = dropout
        self.classifier = classifier
        self.steps = steps
        self.epochs = epochs
        self.lr = lr
        self.warmup = warmup
        self.batch_size = batch_size
        self.clip = clip
        self.normalize_speakers = normalize_speakers
        self.aggregation = aggregation
        self.pair_data = pair_data
        self.pair_epochs = pair_epochs
        self.source_data = source_data
        self.random_state = random_state
        self.precision = precision

    def _plan(self, has_pair: bool, has_source: bool) -> TrainPlan:
        def ref(kind, name, normalize=False):
            return DatasetRef(kind, path=f"<memory:{name}>", speaker_normalization=normalize)

        datasets = {"target": ref("mcqa", "target", self.normalize_speakers)}
        stage = dict(lr_max=self.lr, warmup=self.warmup, clip=self.clip, batch_size=self.batch_size)
        stages = []
        if has_pair:
            datasets["pair"] = ref("pair", "pair")
            stages.append(StageConfig("coarse_tune", ["pair"], epochs=self.pair_epochs, **stage))
        if has_source:
            datasets["source"] = ref("mcqa", "source")
            stages.append(StageConfig("multi_task", ["source", "target"], epochs=self.epochs, **stage))
        else:
            stages.append(StageConfig("single_task", ["target"], epochs=self.epochs, **stage))
        kind = "fcnn" if self.classifier == "fcnn" or self.steps == 0 else "man"
        return TrainPlan(
            stages=stages, datasets=datasets, seed=int(self.random_state), precision=self.precision,
            encoder=dict(hidden=self.hidden, layers=self.layers, heads=self.heads, max_len=self.max_len,
                         dropout=self.dropout),
            classifier={"kind": kind, "steps": int(self.steps)}, aggregation=self.aggregation,
            roles={"target": "target", **({"aux": "pair"} if has_pair else {}),
                   **({"source": "source"} if has_source else {})})

    def fit(self, X, y=None):
        examples = _with_labels(check_examples(X), y)
        if any(ex.label is None for ex in examples):
            raise UsageError("every training example needs a label (in the records or via y)")
        raw = {"target": examples}
        if self.pair_data is not None:
            raw["pair"] = check_examples(self.pair_data, "pair")
        if self.source_data is not None:
            raw["source"] = check_examples(self.source_data, require_labels=True)
        plan = self._plan("pair" in raw, "source" in raw)
        result = run_pipeline(plan, data=DataRegistry(plan, raw))
        self.model_ = result.model
        self.plan_ = plan
        self.history_ = result.rows
        self.n_options_ = max(ex.n_options for ex in examples)
        self.classes_ = np.arange(self.n_options_)
        return self

    def _logits(self, X) -> List[np.ndarray]:
        check_is_fitted(self, "model_")
        examples = check_examples(X)
        with ad.precision(self.precision):
            data = self.model_.encode_mcqa(examples, self.normalize_speakers)
            return self.model_.predict_logits(data)

    def decision_function(self, X) -> np.ndarray:
        """Option logits, one row per example, padded with ``-inf``."""
        rows = self._logits(X)
        width = max(self.n_options_, max(len(r) for r in rows))
        out = np.full((len(rows), width), -np.inf)
        for i, r in enumerate(rows):
            out[i, :len(r)] = r
        return out

    def predict_proba(self, X) -> np.ndarray:
        z = self.decision_function(X)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return np.array([predict(r) for r in self._logits(X)], dtype=np.int64)

    def score(self, X, y=None, sample_weight=None):
        """Accuracy against ``y`` or, when ``y`` is omitted, the records' own labels."""
        if y is None:
            y = [ex.label for ex in check_examples(X, require_labels=True)]
        return super().score(X, y, sample_weight)
