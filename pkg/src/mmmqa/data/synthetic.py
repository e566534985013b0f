"""Seeded synthetic MCQA and NLI generators that are solvable by a lookup rule.

Sentences are ``<subject> <w1> <w2> .`` over pseudo-words. A paraphrase
table (fixed by ``table_id``) maps every base word to a synonym and to an
antonym. In MCQA data the correct option is the synonym rewrite of the
evidence sentence's predicate (in ``mixed`` mode one distractor is the
antonym rewrite of that predicate, in ``negated`` mode every distractor is
an antonym rewrite of a passage predicate); in NLI data entailed hypotheses use the same
rewrite, contradictions the antonym rewrite. Both generators therefore
share one lexical relation, which is what lets pair-classification training
transfer to the multiple-choice task.
"""
from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import UsageError
from .examples import MCQAExample, PairExample
from .text import tokenize

MAX_POOL = 160
N_NAMES = 24
_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"

ENTAILMENT, NEUTRAL, CONTRADICTION = 0, 1, 2
DISTRACTOR_MODES = ("passage", "fresh", "mixed", "negated")


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int
    count: int
    vocab_pool: int = 40
    sentences: int = 3
    options: int = 3
    table_id: int = 0
    style: str = "narrative"          # narrative | dialogue
    distractors: str = "passage"      # passage | fresh | mixed | negated
    predicate_len: int = 2
    vocab_offset: int = 0

    def __post_init__(self):
        if self.count < 0 or self.sentences < 1 or self.predicate_len < 1:
            raise UsageError("synthetic spec counts must be positive")
        if self.options < 2:
            raise UsageError("synthetic spec needs at least 2 options")
        if not self.predicate_len <= self.vocab_pool <= MAX_POOL:
            raise UsageError(f"vocab_pool must lie in [{self.predicate_len}, {MAX_POOL}]")
        if self.vocab_offset < 0 or self.vocab_offset + self.vocab_pool > MAX_POOL:
            raise UsageError(f"vocab_offset + vocab_pool must not exceed {MAX_POOL}")
        if self.style not in ("narrative", "dialogue"):
            raise UsageError(f"unknown style {self.style!r}")
        if self.distractors not in DISTRACTOR_MODES:
            raise UsageError(f"unknown distractor mode {self.distractors!r}")
        if self.style == "dialogue" and self.sentences < 2:
            raise UsageError("dialogues need at least two turns")
        if self.style == "narrative" and self.sentences > N_NAMES:
            raise UsageError(f"at most {N_NAMES} sentences per passage")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ParaphraseTable:
    base: Tuple[str, ...]
    synonym: Dict[str, str]
    antonym: Dict[str, str]
    names: Tuple[str, ...]

    def rewrite(self, words: Sequence[str]) -> List[str]:
        return [self.synonym[w] for w in words]

    def negate(self, words: Sequence[str]) -> List[str]:
        return [self.antonym[w] for w in words]


@lru_cache(maxsize=None)
def paraphrase_table(table_id: int) -> ParaphraseTable:
    """The fixed word table for ``table_id`` (independent of any dataset seed)."""
    syllables = [c + v for c, v in itertools.product(_CONSONANTS, _VOWELS)]
    words = sorted({a + b for a, b in itertools.product(syllables, repeat=2)})
    rng = np.random.default_rng([7919, table_id])
    picked = [words[i] for i in rng.permutation(len(words))[:3 * MAX_POOL + N_NAMES]]
    base = tuple(picked[:MAX_POOL])
    syn = picked[MAX_POOL:2 * MAX_POOL]
    ant = picked[2 * MAX_POOL:3 * MAX_POOL]
    names = tuple(picked[3 * MAX_POOL:])
    return ParaphraseTable(base, dict(zip(base, syn)), dict(zip(base, ant)), names)


def _predicate(rng, pool: Sequence[str], k: int, avoid: frozenset = frozenset()) -> Tuple[str, ...]:
    while True:
        pred = tuple(pool[i] for i in rng.choice(len(pool), size=k, replace=False))
        if pred not in avoid:
            return pred


def _sentence(subject: str, words: Sequence[str]) -> str:
    return " ".join([subject, *words]) + " ."


def gen_synthetic_mcqa(spec: SyntheticSpec) -> List[MCQAExample]:
    """Generate ``spec.count`` labelled examples, deterministic in ``spec``."""
    table = paraphrase_table(spec.table_id)
    pool = table.base[spec.vocab_offset:spec.vocab_offset + spec.vocab_pool]
    rng = np.random.default_rng([spec.seed, spec.table_id, 1 if spec.style == "dialogue" else 0])
    out = []
    for i in range(spec.count):
        preds: List[Tuple[str, ...]] = []
        for _ in range(spec.sentences):
            preds.append(_predicate(rng, pool, spec.predicate_len, frozenset(preds)))
        if spec.style == "narrative":
            subjects = [table.names[j] for j in rng.choice(N_NAMES, size=spec.sentences, replace=False)]
            evidence = int(rng.integers(spec.sentences))
            passage = [_sentence(s, p) for s, p in zip(subjects, preds)]
            question = f"what about {subjects[evidence]} ?"
            others = [p for j, p in enumerate(preds) if j != evidence]
        else:
            first = int(rng.integers(2))
            speakers = [("man", "woman")[(first + j) % 2] for j in range(spec.sentences)]
            asked = speakers[int(rng.integers(spec.sentences))]
            evidence_turns = [j for j, s in enumerate(speakers) if s == asked]
            evidence = evidence_turns[int(rng.integers(len(evidence_turns)))]
            tags = ["m" if s == "man" else ("w", "f")[int(rng.integers(2))] for s in speakers]
            passage = [f"{t}: " + " ".join(p) + " ." for t, p in zip(tags, preds)]
            question = f"what does the {asked} say ?"
            others = [p for j, p in enumerate(preds) if speakers[j] != asked]
        n = spec.options
        label = int(rng.integers(n))
        negated: List[str] = []
        if spec.distractors == "passage":
            order = rng.permutation(len(others))
            distract = [others[j] for j in order[:n - 1]]
        else:
            distract = []
        if spec.distractors == "mixed":
            # one distractor contradicts the evidence
            negated.append(" ".join(table.negate(preds[evidence])))
        elif spec.distractors == "negated":
            # contradict the evidence first, then the other sentences
            order = rng.permutation(len(preds) - 1)
            rest = [p for j, p in enumerate(preds) if j != evidence]
            for p in [preds[evidence]] + [rest[j] for j in order]:
                if len(negated) < n - 1:
                    negated.append(" ".join(table.negate(p)))
        # fresh distractors only use words absent from the passage
        used = {w for p in preds for w in p}
        free = [w for w in pool if w not in used]
        taken = frozenset(distract)
        while len(distract) + len(negated) < n - 1:
            if len(free) < spec.predicate_len:
                raise UsageError("vocab_pool too small for fresh distractors")
            d = _predicate(rng, free, spec.predicate_len, taken)
            distract.append(d)
            taken = taken | {d}
        options = negated + [" ".join(table.rewrite(d)) for d in distract]
        options = [options[j] for j in rng.permutation(len(options))] if negated else options
        options.insert(label, " ".join(table.rewrite(preds[evidence])))
        out.append(MCQAExample(id=f"syn-{spec.seed}-{i}", passage=passage, question=question,
                               options=options, label=label))
    return out


def gen_synthetic_nli(spec: SyntheticSpec) -> List[PairExample]:
    """Premise of ``spec.sentences`` sentences; hypothesis about one subject.

    Entailment: synonym rewrite of a premise predicate. Contradiction:
    antonym rewrite. Neutral: synonym or antonym rewrite of words absent
    from the premise.
    """
    table = paraphrase_table(spec.table_id)
    pool = table.base[spec.vocab_offset:spec.vocab_offset + spec.vocab_pool]
    rng = np.random.default_rng([spec.seed, spec.table_id, 2])
    out = []
    for i in range(spec.count):
        subjects = [table.names[j] for j in rng.choice(N_NAMES, size=spec.sentences, replace=False)]
        preds: List[Tuple[str, ...]] = []
        for _ in range(spec.sentences):
            preds.append(_predicate(rng, pool, spec.predicate_len, frozenset(preds)))
        premise = " ".join(_sentence(s, p) for s, p in zip(subjects, preds))
        label = int(rng.integers(3))
        j = int(rng.integers(spec.sentences))
        if label == ENTAILMENT:
            words = table.rewrite(preds[j])
        elif label == CONTRADICTION:
            words = table.negate(preds[j])
        else:
            used = {w for p in preds for w in p}
            free = [w for w in pool if w not in used]
            if len(free) < spec.predicate_len:
                raise UsageError("vocab_pool too small for neutral hypotheses")
            fresh = _predicate(rng, free, spec.predicate_len)
            words = table.rewrite(fresh) if rng.integers(2) == 0 else table.negate(fresh)
        out.append(PairExample(premise=premise, hypothesis=_sentence(subjects[j], words), label=label,
                               id=f"nli-{spec.seed}-{i}"))
    return out


# ---------------------------------------------------------------- rule oracles

def _inverse(mapping: Dict[str, str]) -> Dict[str, str]:
    return {v: k for k, v in mapping.items()}


def oracle_mcqa(example: MCQAExample, table_id: int = 0) -> Optional[int]:
    """Answer by applying the paraphrase table; None when no option matches."""
    table = paraphrase_table(table_id)
    q = tokenize(example.question)
    subject = q[2] if q[:2] == ["what", "about"] else q[3]
    candidates = []
    for line in example.passage:
        toks = tokenize(line)
        if len(toks) >= 2 and toks[1] == ":":
            speaker = {"m": "man", "w": "woman", "f": "woman"}.get(toks[0], toks[0])
            body = toks[2:-1]
        else:
            speaker, body = toks[0], toks[1:-1]
        if speaker == subject and all(w in table.synonym for w in body):
            candidates.append(" ".join(table.rewrite(body)))
    for idx, opt in enumerate(example.options):
        if " ".join(tokenize(opt)) in candidates:
            return idx
    return None


def oracle_nli(example: PairExample, table_id: int = 0) -> int:
    table = paraphrase_table(table_id)
    syn_inv, ant_inv = _inverse(table.synonym), _inverse(table.antonym)
    hyp = tokenize(example.hypothesis)
    subject, words = hyp[0], hyp[1:-1]
    prem = tokenize(example.premise)
    sentences, cur = [], []
    for t in prem:
        if t == ".":
            sentences.append(cur)
            cur = []
        else:
            cur.append(t)
    for sent in sentences:
        if sent[0] != subject:
            continue
        body = sent[1:]
        if [syn_inv.get(w) for w in words] == body:
            return ENTAILMENT
        if [ant_inv.get(w) for w in words] == body:
            return CONTRADICTION
    return NEUTRAL
