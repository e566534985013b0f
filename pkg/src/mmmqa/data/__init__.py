from .examples import NLI_LABELS, MCQAExample, PairExample
from .io import load_dataset, load_mcqa_json, load_pair_json, load_schema, save_json
from .packing import EncodedSequence, Role, pack_pair, pack_sequence
from .synthetic import (
    SyntheticSpec,
    gen_synthetic_mcqa,
    gen_synthetic_nli,
    oracle_mcqa,
    oracle_nli,
    paraphrase_table,
)
from .text import CLS, PAD, SEP, UNK, Vocabulary, build_vocab, speaker_normalize, tokenize
