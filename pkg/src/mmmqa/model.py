"""Per-option scoring, loss, prediction and sliding-window handling."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data.examples import MCQAExample, PairExample
from .data.packing import EncodedSequence, Role, pack_pair, pack_sequence
from .data.text import Vocabulary, speaker_normalize, tokenize
from .encoder import EncoderConfig, TransformerEncoder
from .errors import ShapeError, UsageError
from .man import PairHead, build_classifier

AGGREGATIONS = ("sum", "max")


# ---------------------------------------------------------------- pure helpers

def loss(logits, label: int) -> Tensor:
    """Cross entropy ``-log softmax(logits)[label]``."""
    logits = ad.as_tensor(logits)
    n = logits.shape[-1]
    if not 0 <= label < n:
        raise UsageError(f"label {label} out of range for {n} options")
    return ad.neg(ad.getitem(ad.log_softmax(logits), label))


def predict(logits) -> int:
    """Index of the largest logit; ties go to the lowest index."""
    v = np.asarray(logits.data if isinstance(logits, Tensor) else logits)
    if v.size == 0:
        raise UsageError("predict() on an empty logit vector")
    return int(np.argmax(v))


def window_spans(length: int, window: int, overlap: int) -> List[Tuple[int, int]]:
    if window <= 0:
        raise UsageError("window must be positive")
    if not 0 <= overlap < window:
        raise UsageError("overlap must lie in [0, window)")
    stride = window - overlap
    spans = []
    for start in range(0, length, stride):
        end = min(start + window, length)
        spans.append((start, end))
        if end == length:
            break
    return spans


def sliding_window_split(tokens: Sequence, window: int, overlap: int) -> List[list]:
    """Overlapping snippets starting every ``window - overlap`` tokens; the last may be shorter."""
    return [list(tokens[a:b]) for a, b in window_spans(len(tokens), window, overlap)]


def aggregate_snippet_logits(snippet_logits: Sequence, mode: str = "sum") -> np.ndarray:
    if not snippet_logits:
        raise UsageError("no snippet logits to aggregate")
    arrs = [np.asarray(v.data if isinstance(v, Tensor) else v) for v in snippet_logits]
    if len({a.shape for a in arrs}) != 1:
        raise ShapeError("snippet logit vectors differ in length")
    stacked = np.stack(arrs)
    if mode == "sum":
        return stacked.sum(axis=0)
    if mode == "max":
        return stacked.max(axis=0)
    raise UsageError(f"unknown aggregation {mode!r}")


# ---------------------------------------------------------------- encoded data

@dataclass
class Instance:
    """Packed sequences for one training/eval unit (one snippet of one example)."""

    example: int
    sequences: List[EncodedSequence]
    label: Optional[int]


@dataclass
class EncodedDataset:
    kind: str  # "mcqa" | "pair"
    instances: List[Instance]
    n_examples: int
    ids: List[str] = field(default_factory=list)

    def __len__(self):
        return len(self.instances)

    def labels(self) -> List[Optional[int]]:
        by_example: Dict[int, Optional[int]] = {}
        for inst in self.instances:
            by_example.setdefault(inst.example, inst.label)
        return [by_example[i] for i in range(self.n_examples)]


def passage_tokens(example: MCQAExample, normalize_speakers: bool = False) -> List[str]:
    toks: List[str] = []
    for utt in example.passage:
        toks.extend(tokenize(speaker_normalize(utt) if normalize_speakers else utt))
    return toks


def encode_mcqa_example(example: MCQAExample, vocab: Vocabulary, max_len: int,
                        normalize_speakers: bool = False, sliding_window: bool = True
                        ) -> List[List[EncodedSequence]]:
    """Packed option sequences for each snippet of ``example``.

    All options share one window budget, ``max_len - |Q| - max|O| - 3``,
    so snippet boundaries line up across options; overlap is half of it.
    """
    p = passage_tokens(example, normalize_speakers)
    q = tokenize(example.question)
    opts = [tokenize(o) for o in example.options]
    if not p or not q or any(not o for o in opts):
        raise UsageError(f"example {example.id!r}: empty passage, question or option")
    budget = max_len - len(q) - max(len(o) for o in opts) - 3
    if budget < 1:
        raise UsageError(f"example {example.id!r}: question and options leave no room for the passage")
    if sliding_window and len(p) > budget:
        snippets = sliding_window_split(p, budget, budget // 2)
    else:
        snippets = [p]
    return [[pack_sequence(s, q, o, vocab, max_len).trimmed() for o in opts] for s in snippets]


def encode_mcqa(examples: Sequence[MCQAExample], vocab: Vocabulary, max_len: int,
                normalize_speakers: bool = False, sliding_window: bool = True) -> EncodedDataset:
    instances = []
    for i, ex in enumerate(examples):
        for seqs in encode_mcqa_example(ex, vocab, max_len, normalize_speakers, sliding_window):
            instances.append(Instance(i, seqs, ex.label))
    return EncodedDataset("mcqa", instances, len(examples), [ex.id for ex in examples])


def encode_pairs(examples: Sequence[PairExample], vocab: Vocabulary, max_len: int) -> EncodedDataset:
    instances = [Instance(i, [pack_pair(tokenize(ex.premise), tokenize(ex.hypothesis), vocab, max_len).trimmed()],
                          ex.label) for i, ex in enumerate(examples)]
    return EncodedDataset("pair", instances, len(examples), [ex.id or str(i) for i, ex in enumerate(examples)])


def collate(sequences: Sequence[EncodedSequence]) -> Tuple[np.ndarray, np.ndarray]:
    """Right-pad to the longest sequence; returns ``(ids, roles)``."""
    L = max(len(s) for s in sequences)
    ids = np.zeros((len(sequences), L), dtype=np.int64)
    roles = np.zeros((len(sequences), L), dtype=np.int8)
    for i, s in enumerate(sequences):
        ids[i, :len(s)] = s.token_ids
        roles[i, :len(s)] = s.roles
    return ids, roles


# ---------------------------------------------------------------- model

class MMMModel:
    """Encoder plus multiple-choice head (and an optional pair head) sharing one vocabulary.

    ``version`` counts optimizer updates applied to the shared parameter
    store; every task reads the same tensors.
    """

    def __init__(self, vocab: Vocabulary, encoder: TransformerEncoder, classifier=None,
                 pair_head: Optional[PairHead] = None, aggregation: str = "sum", sliding_window: bool = True):
        if aggregation not in AGGREGATIONS:
            raise UsageError(f"aggregation must be one of {AGGREGATIONS}")
        self.vocab = vocab
        self.encoder = encoder
        self.classifier = classifier
        self.pair_head = pair_head
        self.aggregation = aggregation
        self.sliding_window = sliding_window
        self.version = 0

    @classmethod
    def create(cls, vocab: Vocabulary, hidden: int = 64, layers: int = 2, heads: int = 4, max_len: int = 512,
               dropout: float = 0.1, seed: int = 0, classifier: str = "man", steps: int = 2,
               init_std: float = 0.02, **kw) -> "MMMModel":
        cfg = EncoderConfig(vocab_size=len(vocab), hidden=hidden, layers=layers, heads=heads, max_len=max_len,
                            dropout=dropout, seed=seed, init_std=init_std)
        model = cls(vocab, TransformerEncoder(cfg), **kw)
        model.new_classifier(classifier, steps, seed)
        return model

    @property
    def config(self) -> EncoderConfig:
        return self.encoder.config

    @property
    def max_len(self) -> int:
        return self.encoder.config.max_len

    def new_classifier(self, kind: str, steps: int, seed: int) -> None:
        rng = np.random.default_rng([seed, 202])
        c = self.encoder.config
        self.classifier = build_classifier(kind, c.hidden, steps, rng, c.dropout, c.init_std)

    def new_pair_head(self, seed: int, n_classes: int = 3) -> None:
        c = self.encoder.config
        self.pair_head = PairHead(c.hidden, np.random.default_rng([seed, 303]), n_classes, c.dropout, c.init_std)

    def named_parameters(self) -> Dict[str, Tensor]:
        out = {f"encoder.{k}": v for k, v in self.encoder.params.items()}
        if self.classifier is not None:
            out.update({f"classifier.{k}": v for k, v in self.classifier.named().items()})
        if self.pair_head is not None:
            out.update({f"pair_head.{k}": v for k, v in self.pair_head.named().items()})
        return out

    def parameters(self) -> List[Tensor]:
        return list(self.named_parameters().values())

    # -- encoding

    def encode_mcqa(self, examples, normalize_speakers: bool = False) -> EncodedDataset:
        return encode_mcqa(examples, self.vocab, self.max_len, normalize_speakers, self.sliding_window)

    def encode_pairs(self, examples) -> EncodedDataset:
        return encode_pairs(examples, self.vocab, self.max_len)

    # -- forward

    def hidden(self, sequences: Sequence[EncodedSequence], train: bool = False,
               rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, np.ndarray]:
        ids, roles = collate(sequences)
        return self.encoder.forward(ids, roles != Role.PAD, train, rng), roles

    def instance_logits(self, instances: Sequence[Instance], train: bool = False,
                        rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, np.ndarray]:
        """Option logits ``(B, n_max)`` plus a validity mask for a batch of MCQA instances."""
        if self.classifier is None:
            raise UsageError("model has no multiple-choice classifier")
        flat = [s for inst in instances for s in inst.sequences]
        H, roles = self.hidden(flat, train, rng)
        scores = self.classifier.logits(H, roles, train, rng)
        counts = [len(inst.sequences) for inst in instances]
        n_max = max(counts)
        index = np.zeros((len(instances), n_max), dtype=np.int64)
        valid = np.zeros((len(instances), n_max), dtype=bool)
        offset = 0
        for b, n in enumerate(counts):
            index[b, :n] = np.arange(offset, offset + n)
            valid[b, :n] = True
            offset += n
        return ad.getitem(scores, index), valid

    def pair_logits(self, instances: Sequence[Instance], train: bool = False,
                    rng: Optional[np.random.Generator] = None) -> Tensor:
        if self.pair_head is None:
            raise UsageError("model has no pair-classification head")
        H, _ = self.hidden([inst.sequences[0] for inst in instances], train, rng)
        return self.pair_head.logits(H, train, rng)

    def batch_loss(self, dataset_kind: str, instances: Sequence[Instance], train: bool = True,
                   rng: Optional[np.random.Generator] = None) -> Tensor:
        """Mean cross entropy over a batch drawn from one dataset."""
        labels = np.array([inst.label for inst in instances])
        if dataset_kind == "mcqa":
            logits, valid = self.instance_logits(instances, train, rng)
            logp = ad.log_softmax(logits, axis=-1, mask=valid)
        else:
            logp = ad.log_softmax(self.pair_logits(instances, train, rng), axis=-1)
        picked = ad.getitem(logp, (np.arange(len(instances)), labels))
        return ad.neg(ad.mean(picked))

    def predict_logits(self, data: EncodedDataset, batch_size: int = 64) -> List[np.ndarray]:
        """Eval-mode logits per example, snippets aggregated."""
        per_example: List[List[np.ndarray]] = [[] for _ in range(data.n_examples)]
        with ad.no_grad():
            for start in range(0, len(data), batch_size):
                chunk = data.instances[start:start + batch_size]
                if data.kind == "mcqa":
                    logits, valid = self.instance_logits(chunk)
                    rows = [logits.data[b, valid[b]] for b in range(len(chunk))]
                else:
                    rows = list(self.pair_logits(chunk).data)
                for inst, row in zip(chunk, rows):
                    per_example[inst.example].append(np.array(row))
        return [aggregate_snippet_logits(v, self.aggregation) for v in per_example]


def score_options(example: MCQAExample, model: MMMModel, train: bool = False,
                  rng: Optional[np.random.Generator] = None, normalize_speakers: bool = False,
                  sliding_window: Optional[bool] = None) -> Tensor:
    """Logit vector over ``example``'s options, one forward per option per snippet.

    With several snippets the per-snippet vectors are combined with the
    model's aggregation (sum by default).
    """
    window = model.sliding_window if sliding_window is None else sliding_window
    snippets = encode_mcqa_example(example, model.vocab, model.max_len, normalize_speakers, window)
    instances = [Instance(0, seqs, example.label) for seqs in snippets]
    logits, _ = model.instance_logits(instances, train, rng)
    if len(instances) == 1:
        return ad.reshape(logits, (logits.shape[1],))
    if model.aggregation == "sum":
        return ad.sum_(logits, axis=0)
    return ad.Tensor(aggregate_snippet_logits(list(logits.data), "max"))
