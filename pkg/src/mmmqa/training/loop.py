"""Stage and pipeline execution for staged / multi-task training."""
from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence

import numpy as np

from .. import autodiff as ad
from ..autodiff import Adam, LrSchedule, OptimizerState, clip_global_norm, lr_at
from ..data.io import load_dataset
from ..data.synthetic import SyntheticSpec, gen_synthetic_mcqa, gen_synthetic_nli
from ..data.text import build_vocab, speaker_normalize
from ..encoder import EncoderConfig, TransformerEncoder
from ..errors import NumericError, UsageError
from ..evaluation import evaluate
from ..model import EncodedDataset, MMMModel
from .checkpoint import load_checkpoint, save_checkpoint
from .plan import DatasetMixture, DatasetRef, StageConfig, TrainPlan, sample_task, stage_total_steps

log = logging.getLogger(__name__)

METRIC_FIELDS = ("step", "stage", "dataset", "loss", "lr", "dev_acc")
IMPROVEMENT = 1e-6


# ---------------------------------------------------------------- early stopping

@dataclass
class EarlyStopState:
    patience: Optional[int]
    best: float = -math.inf
    bad: int = 0
    evaluations: int = 0


def early_stop_update(state: EarlyStopState, metric: float) -> str:
    """Record one dev evaluation; ``"stop"`` after ``patience`` evaluations without improvement.

    Patience 0 behaves like 1: stop at the first non-improvement. ``None``
    never stops.
    """
    state.evaluations += 1
    if metric > state.best + IMPROVEMENT:
        state.best = metric
        state.bad = 0
        return "continue"
    state.bad += 1
    if state.patience is not None and state.bad >= max(state.patience, 1):
        return "stop"
    return "continue"


# ---------------------------------------------------------------- batching

class BatchIterator:
    """Epoch-wise shuffled batches; the order of epoch ``e`` depends only on (seed, e)."""

    def __init__(self, size: int, batch_size: int, seed: Sequence[int]):
        self.size = size
        self.batch_size = batch_size
        self.seed = list(seed)
        self.epoch = 0
        self.position = 0
        self._perm = self._permutation()

    def _permutation(self) -> np.ndarray:
        return np.random.default_rng(self.seed + [self.epoch]).permutation(self.size)

    def next_batch(self) -> np.ndarray:
        if self.position >= self.size:
            self.epoch += 1
            self.position = 0
            self._perm = self._permutation()
        out = self._perm[self.position:self.position + self.batch_size]
        self.position += len(out)
        return out

    def state(self) -> dict:
        return {"epoch": self.epoch, "position": self.position}

    def restore(self, state: dict) -> None:
        self.epoch = state["epoch"]
        self.position = state["position"]
        self._perm = self._permutation()


# ---------------------------------------------------------------- metrics

@dataclass
class MetricsRow:
    step: int
    stage: int
    dataset: str
    loss: float
    lr: float
    dev_acc: Optional[float] = None


def write_metrics_csv(rows: Sequence[MetricsRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_FIELDS)
        for r in rows:
            w.writerow([r.step, r.stage, r.dataset, repr(r.loss), repr(r.lr),
                        "" if r.dev_acc is None else repr(r.dev_acc)])


def read_metrics_csv(path) -> List[MetricsRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [MetricsRow(int(r["step"]), int(r["stage"]), r["dataset"], float(r["loss"]), float(r["lr"]),
                           None if r["dev_acc"] == "" else float(r["dev_acc"])) for r in csv.DictReader(fh)]


# ---------------------------------------------------------------- datasets

@lru_cache(maxsize=64)
def _synthetic(kind: str, spec: SyntheticSpec):
    return gen_synthetic_mcqa(spec) if kind == "mcqa" else gen_synthetic_nli(spec)


def resolve_dataset(ref: DatasetRef):
    if ref.synthetic is not None:
        return _synthetic(ref.kind, SyntheticSpec(**ref.synthetic))
    return load_dataset(ref.path, ref.kind)


def _texts(examples, kind: str, normalize: bool):
    for ex in examples:
        if kind == "pair":
            yield ex.premise
            yield ex.hypothesis
        else:
            for utt in ex.passage:
                yield speaker_normalize(utt) if normalize else utt
            yield ex.question
            yield from ex.options


class DataRegistry:
    """Raw and encoded datasets of a plan, encoded lazily against one vocabulary."""

    def __init__(self, plan: TrainPlan, raw: Optional[Dict[str, list]] = None):
        self.plan = plan
        self.raw = raw if raw is not None else {n: resolve_dataset(r) for n, r in plan.datasets.items()}
        self._encoded: Dict[str, EncodedDataset] = {}

    def build_vocab(self):
        train_names = {n for st in self.plan.stages for n in st.datasets}
        corpus = []
        for name in sorted(train_names):
            ref = self.plan.datasets[name]
            corpus.extend(_texts(self.raw[name], ref.kind, ref.speaker_normalization))
        if not corpus:
            raise UsageError("training datasets are empty")
        return build_vocab(corpus, self.plan.min_freq)

    def encoded(self, name: str, model: MMMModel) -> EncodedDataset:
        if name not in self._encoded:
            ref = self.plan.datasets[name]
            if ref.kind == "pair":
                self._encoded[name] = model.encode_pairs(self.raw[name])
            else:
                self._encoded[name] = model.encode_mcqa(self.raw[name], ref.speaker_normalization)
        return self._encoded[name]


# ---------------------------------------------------------------- stage

@dataclass
class StageResult:
    rows: List[MetricsRow]
    completed: bool
    state: Optional[dict] = None
    optimizer: Optional[OptimizerState] = None
    best_dev: Optional[float] = None
    steps: int = 0


def _ensure_heads(model: MMMModel, plan: TrainPlan, stage: StageConfig, kinds: Sequence[str], seed: int) -> None:
    if "mcqa" in kinds and model.classifier is None:
        clf = plan.classifier
        model.new_classifier(clf.get("kind", "man"), int(clf.get("steps", 2)), plan.seed)
    if "pair" in kinds and model.pair_head is None:
        model.new_pair_head(seed)


def run_stage(model: MMMModel, plan: TrainPlan, index: int, data: DataRegistry,
              resume: Optional[dict] = None, optimizer: Optional[OptimizerState] = None,
              stop_after: Optional[int] = None) -> StageResult:
    """Train ``model`` on stage ``index`` of ``plan``.

    Each step samples a dataset (when the stage has several), takes its next
    shuffled batch, and applies one clipped Adam update at the scheduled
    learning rate. ``stop_after`` interrupts after that many global steps of
    this stage and returns the state needed to resume.
    """
    stage = plan.stages[index]
    seed = plan.stage_seed(index)
    kinds = [plan.datasets[n].kind for n in stage.datasets]
    _ensure_heads(model, plan, stage, kinds, seed)
    encoded = [data.encoded(n, model) for n in stage.datasets]
    for name, enc in zip(stage.datasets, encoded):
        if len(enc) == 0:
            raise UsageError(f"dataset {name!r} is empty")
        if enc.kind == "mcqa" and any(inst.label is None for inst in enc.instances):
            raise UsageError(f"dataset {name!r} has unlabelled examples")
    dev = data.encoded(stage.dev, model) if stage.dev else None
    mixture = DatasetMixture(list(stage.datasets), [len(e) for e in encoded])
    total = stage_total_steps(stage, mixture.sizes)
    schedule = LrSchedule(stage.lr_max, total, stage.warmup)

    task_rng, dropout_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    iters = [BatchIterator(len(e), stage.batch_size, [seed, j]) for j, e in enumerate(encoded)]
    early = EarlyStopState(stage.patience)
    params = model.parameters()
    opt = Adam(params, optimizer)
    rows: List[MetricsRow] = []
    start = 0
    if resume is not None:
        start = resume["step"]
        task_rng.bit_generator.state = resume["task_rng"]
        dropout_rng.bit_generator.state = resume["dropout_rng"]
        for it, st in zip(iters, resume["iterators"]):
            it.restore(st)
        early = EarlyStopState(**resume["early_stop"])
        rows = [MetricsRow(**r) for r in resume["rows"]]

    def snapshot(step):
        return {"stage": index, "step": step, "task_rng": task_rng.bit_generator.state,
                "dropout_rng": dropout_rng.bit_generator.state, "iterators": [it.state() for it in iters],
                "early_stop": asdict(early), "rows": [asdict(r) for r in rows]}

    multi = len(encoded) > 1
    for step in range(start, total):
        if stop_after is not None and step >= stop_after:
            return StageResult(rows, False, snapshot(step), opt.state, None, step)
        j = sample_task(mixture, task_rng) if multi else 0
        batch = [encoded[j].instances[i] for i in iters[j].next_batch()]
        opt.zero_grad()
        loss = model.batch_loss(encoded[j].kind, batch, True, dropout_rng)
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericError(f"stage {index} step {step}: non-finite loss {value} on {stage.datasets[j]!r}")
        loss.backward()
        grads, _ = clip_global_norm([p.grad for p in params], stage.clip)
        lr = lr_at(schedule, step)
        opt.step(lr, grads)
        model.version += 1
        row = MetricsRow(step, index, stage.datasets[j], value, lr)
        rows.append(row)
        last = step + 1 == total
        if dev is not None and ((stage.eval_every and (step + 1) % stage.eval_every == 0) or last):
            row.dev_acc = evaluate(model, dev, stage.dev).accuracy
            log.info("stage %d step %d dev_acc %.4f", index, step, row.dev_acc)
            if early_stop_update(early, row.dev_acc) == "stop":
                break
    best = early.best if early.evaluations else None
    return StageResult(rows, True, None, opt.state, best, len(rows))


# ---------------------------------------------------------------- pipeline

@dataclass
class PipelineResult:
    model: MMMModel
    rows: List[MetricsRow]
    checkpoints: List[str] = field(default_factory=list)
    completed: bool = True
    dev_accuracy: Dict[int, Optional[float]] = field(default_factory=dict)


def build_model(plan: TrainPlan, data: DataRegistry) -> MMMModel:
    vocab = data.build_vocab()
    enc = dict(plan.encoder)
    enc.setdefault("max_len", 512)
    cfg = EncoderConfig(vocab_size=len(vocab), seed=plan.seed, **enc)
    return MMMModel(vocab, TransformerEncoder(cfg), aggregation=plan.aggregation,
                    sliding_window=plan.sliding_window)


def run_pipeline(plan: TrainPlan, out_dir: Optional[str] = None, data: Optional[DataRegistry] = None,
                 resume_from: Optional[str] = None, stop_after: Optional[tuple] = None,
                 metrics_name: str = "metrics.csv") -> PipelineResult:
    """Run every stage in order, carrying the encoder (and MCQA head) forward.

    The pair-classification head is dropped at the end of each stage that
    used it. With ``out_dir`` a checkpoint is written per stage
    (``stage{i}.ckpt``) along with the metrics CSV. ``stop_after=(stage, step)``
    writes ``resume.ckpt`` at that point and returns; ``resume_from`` picks
    such a checkpoint up again.
    """
    with ad.precision(plan.precision):
        data = data or DataRegistry(plan)
        first_stage, resume_state, opt_state = 0, None, None
        rows: List[MetricsRow] = []
        if resume_from is not None:
            ck = load_checkpoint(resume_from)
            model = ck.model
            trainer = ck.trainer or {}
            first_stage = trainer["stage"]
            rows = [MetricsRow(**r) for r in trainer.get("previous_rows", [])]
            resume_state = trainer
            opt_state = OptimizerState(ck.optimizer["m"], ck.optimizer["v"], ck.optimizer["step"])
        else:
            model = build_model(plan, data)
        result = PipelineResult(model, rows)
        for i in range(first_stage, len(plan.stages)):
            if i == first_stage and resume_state is not None:
                # heads must exist before the optimizer state lines up with the parameters
                res = run_stage(model, plan, i, data, resume_state, opt_state,
                                stop_after[1] if stop_after and stop_after[0] == i else None)
            else:
                if stop_after and stop_after[0] == i:
                    res = run_stage(model, plan, i, data, stop_after=stop_after[1])
                else:
                    res = run_stage(model, plan, i, data)
            if not res.completed:
                trainer = dict(res.state, previous_rows=[asdict(r) for r in result.rows])
                if out_dir:
                    path = os.path.join(out_dir, "resume.ckpt")
                    save_checkpoint(path, model, res.optimizer, trainer)
                    result.checkpoints.append(path)
                result.rows.extend(res.rows)
                result.completed = False
                break
            result.rows.extend(res.rows)
            result.dev_accuracy[i] = res.best_dev
            if out_dir:
                path = os.path.join(out_dir, f"stage{i}.ckpt")
                save_checkpoint(path, model, None, {"stage": i, "completed": True})
                result.checkpoints.append(path)
            model.pair_head = None
        if out_dir:
            write_metrics_csv(result.rows, os.path.join(out_dir, metrics_name))
        return result
