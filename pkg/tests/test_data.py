import json
from collections import Counter

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmmqa.data.io import load_mcqa_json, load_pair_json, load_schema, save_json
from mmmqa.data.packing import Role, pack_pair, pack_sequence
from mmmqa.data.synthetic import (DISTRACTOR_MODES, SyntheticSpec, gen_synthetic_mcqa, gen_synthetic_nli,
                                  oracle_mcqa, oracle_nli)
from mmmqa.data.text import CLS, PAD, SEP, UNK, build_vocab, speaker_normalize, tokenize
from mmmqa.errors import LoadError, UsageError

S, P, Q = Role.SPECIAL, Role.PASSAGE, Role.QO


# ---------------------------------------------------------------- speaker normalisation

@pytest.mark.parametrize("text, want", [
    ("m: How would he know?", "man: How would he know?"),
    ("W: fine", "woman: fine"),
    ("f: yes", "woman: yes"),
    ("woman: Hi there.", "woman: Hi there."),
    ("make: sure", "make: sure"),
    ("m:x", "man:x"),
    ("hello m: there", "hello m: there"),
])
def test_speaker_normalize(text, want):
    assert speaker_normalize(text) == want


@settings(max_examples=100, deadline=None)
@given(st.text(max_size=30))
def test_speaker_normalize_idempotent(text):
    once = speaker_normalize(text)
    assert speaker_normalize(once) == once


# ---------------------------------------------------------------- tokenize and vocab

def test_tokenize_examples():
    assert tokenize("Hello, world!") == ["hello", ",", "world", "!"]
    assert tokenize("") == []


@settings(max_examples=100, deadline=None)
@given(st.text(max_size=40))
def test_tokenize_idempotent_on_joined_output(text):
    toks = tokenize(text)
    assert tokenize(" ".join(toks)) == toks


def test_build_vocab_order_and_min_freq():
    v = build_vocab(["a a b"])
    assert (v.id_of("a"), v.id_of("b")) == (4, 5)
    assert v.to_list()[:4] == ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]
    v2 = build_vocab(["a a b"], min_freq=2)
    assert "a" in v2 and "b" not in v2
    assert v2.encode(["b"]).tolist() == [UNK]
    assert build_vocab(["b c c a a"]).to_list()[4:] == ["a", "c", "b"]


def test_build_vocab_deterministic():
    corpus = ["the cat sat", "the dog sat on the mat"]
    assert build_vocab(corpus) == build_vocab(list(corpus))


# ---------------------------------------------------------------- packing

def test_pack_layout():
    vocab = build_vocab(["p1 p2 q1 o1"])
    seq = pack_sequence(["p1", "p2"], ["q1"], ["o1"], vocab, 10)
    want = [CLS, vocab.id_of("p1"), vocab.id_of("p2"), SEP, vocab.id_of("q1"), vocab.id_of("o1"), SEP, PAD, PAD, PAD]
    assert seq.token_ids.tolist() == want
    assert seq.roles.tolist() == [S, P, P, S, Q, Q, S, Role.PAD, Role.PAD, Role.PAD]
    assert seq.attention_mask.tolist() == [1] * 7 + [0] * 3


def test_pack_truncates_passage_first():
    vocab = build_vocab(["a b c d e q o"])
    seq = pack_sequence(list("abcde"), ["q"], ["o"], vocab, 8)
    assert vocab.decode(seq.token_ids[seq.roles == P]) == ["a", "b", "c"]
    assert vocab.decode(seq.token_ids[seq.roles == Q]) == ["q", "o"]


def test_pack_then_option_then_question():
    vocab = build_vocab(["a q1 q2 o1 o2 o3"])
    seq = pack_sequence(["a", "a"], ["q1", "q2"], ["o1", "o2", "o3"], vocab, 8)
    assert vocab.decode(seq.token_ids[seq.roles == P]) == ["a"]
    assert vocab.decode(seq.token_ids[seq.roles == Q]) == ["q1", "q2", "o1", "o2"]


def test_pack_rejects_long_question_option():
    vocab = build_vocab(["a q o"])
    with pytest.raises(UsageError):
        pack_sequence(["a"], ["q"] * 4, ["o"] * 4, vocab, 10)
    with pytest.raises(UsageError):
        pack_sequence([], ["q"], ["o"], vocab, 10)


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 30), st.integers(1, 6), st.integers(1, 6), st.integers(16, 40))
def test_pack_roles_partition_and_roundtrip(np_, nq, no, max_len):
    words = [f"w{i}" for i in range(40)]
    vocab = build_vocab([" ".join(words)])
    p, q, o = words[:np_], words[np_:np_ + nq], words[20:20 + no]
    seq = pack_sequence(p, q, o, vocab, max_len)
    roles = seq.roles.tolist()
    assert len(roles) == len(seq.token_ids) == max_len
    assert seq.token_ids[0] == CLS and list(seq.token_ids).count(CLS) == 1
    n_real = seq.length
    assert all(r == Role.PAD for r in roles[n_real:]) and Role.PAD not in roles[:n_real]
    kept_p = min(np_, max_len - 3 - nq - no)
    assert vocab.decode(seq.token_ids[seq.roles == P]) == p[:kept_p]
    assert vocab.decode(seq.token_ids[seq.roles == Q]) == q + o
    assert roles.count(S) == 3


def test_pack_pair_layout():
    vocab = build_vocab(["x y z"])
    seq = pack_pair(["x", "y"], ["z"], vocab, 8)
    assert seq.roles.tolist()[:6] == [S, P, P, S, Q, S]


# ---------------------------------------------------------------- loaders

def write(tmp_path, name, obj):
    path = tmp_path / name
    path.write_text(json.dumps(obj) if not isinstance(obj, str) else obj)
    return path


MCQA_RECORDS = [
    {"id": "a", "passage": ["m: hi .", "w: bye ."], "question": "who ?", "options": ["x", "y", "z"], "label": 0},
    {"id": "b", "passage": ["one ."], "question": "what ?", "options": ["p", "q"]},
]


def test_load_mcqa_well_formed(tmp_path):
    out = load_mcqa_json(write(tmp_path, "d.json", MCQA_RECORDS))
    assert [ex.id for ex in out] == ["a", "b"] and out[1].label is None


def test_load_mcqa_label_out_of_range_names_record(tmp_path):
    bad = [MCQA_RECORDS[0], dict(MCQA_RECORDS[0], id="c", label=3)]
    with pytest.raises(LoadError, match="record 1"):
        load_mcqa_json(write(tmp_path, "d.json", bad))


def test_load_mcqa_missing_field_and_malformed(tmp_path):
    with pytest.raises(LoadError, match="record 0"):
        load_mcqa_json(write(tmp_path, "d.json", [{"id": "a", "passage": ["x"], "options": ["a", "b"]}]))
    with pytest.raises(LoadError, match="malformed"):
        load_mcqa_json(write(tmp_path, "e.json", "[{"))
    with pytest.raises(LoadError):
        load_mcqa_json(tmp_path / "missing.json")


def test_load_empty_array_is_empty(tmp_path):
    assert load_mcqa_json(write(tmp_path, "d.json", [])) == []
    assert load_pair_json(write(tmp_path, "p.json", [])) == []


def test_load_pair_cases(tmp_path):
    recs = [{"premise": "a b .", "hypothesis": "a .", "label": 0}, {"premise": "c .", "hypothesis": "d .",
                                                                  "label": "contradiction"}]
    out = load_pair_json(write(tmp_path, "p.json", recs))
    assert [ex.label for ex in out] == [0, 2]
    with pytest.raises(LoadError, match="record 1"):
        load_pair_json(write(tmp_path, "q.json", [recs[0], dict(recs[0], label=5)]))
    with pytest.raises(LoadError, match="malformed"):
        load_pair_json(write(tmp_path, "r.json", "{"))


def test_save_load_roundtrip(tmp_path):
    data = gen_synthetic_mcqa(SyntheticSpec(seed=4, count=20, style="dialogue"))
    save_json(data, tmp_path / "s.json")
    assert load_mcqa_json(tmp_path / "s.json") == data


# ---------------------------------------------------------------- synthetic generators

@pytest.mark.parametrize("mode", DISTRACTOR_MODES)
@pytest.mark.parametrize("style", ["narrative", "dialogue"])
def test_mcqa_generator_is_deterministic_and_oracle_solvable(mode, style):
    spec = SyntheticSpec(seed=11, count=300, style=style, distractors=mode, sentences=4, vocab_pool=60)
    a, b = gen_synthetic_mcqa(spec), gen_synthetic_mcqa(spec)
    assert json.dumps([e.to_dict() for e in a]) == json.dumps([e.to_dict() for e in b])
    assert all(oracle_mcqa(ex) == ex.label for ex in a)


def test_mcqa_label_histogram_uniform():
    data = gen_synthetic_mcqa(SyntheticSpec(seed=5, count=10_000))
    counts = Counter(ex.label for ex in data)
    for k in range(3):
        assert abs(counts[k] / 10_000 - 1 / 3) < 0.02


def test_nli_generator_determinism_oracle_balance():
    spec = SyntheticSpec(seed=6, count=10_000, vocab_pool=80)
    data = gen_synthetic_nli(spec)
    assert [e.to_dict() for e in data[:50]] == [e.to_dict() for e in gen_synthetic_nli(spec)[:50]]
    assert all(oracle_nli(ex) == ex.label for ex in data)
    counts = Counter(ex.label for ex in data)
    for k in range(3):
        assert abs(counts[k] / 10_000 - 1 / 3) < 0.02


def test_generated_data_passes_loader_schemas():
    mcqa = [e.to_dict() for e in gen_synthetic_mcqa(SyntheticSpec(seed=1, count=30, options=5, style="dialogue"))]
    pair = [e.to_dict() for e in gen_synthetic_nli(SyntheticSpec(seed=1, count=30))]
    jsonschema.validate(mcqa, load_schema("mcqa"))
    jsonschema.validate(pair, load_schema("pair"))


def test_vocab_offset_separates_word_pools():
    a = gen_synthetic_mcqa(SyntheticSpec(seed=1, count=50, vocab_pool=40))
    b = gen_synthetic_mcqa(SyntheticSpec(seed=1, count=50, vocab_pool=40, vocab_offset=80))

    def words(data):
        return {w for ex in data for line in ex.passage for w in tokenize(line)[1:-1]}

    assert not words(a) & words(b) - {":"}


def test_synthetic_spec_validation():
    with pytest.raises(UsageError):
        SyntheticSpec(seed=0, count=5, options=1)
    with pytest.raises(UsageError):
        SyntheticSpec(seed=0, count=5, vocab_offset=150, vocab_pool=40)
    with pytest.raises(UsageError):
        SyntheticSpec(seed=0, count=5, distractors="nope")


def test_encoded_datasets_are_bit_identical():
    from mmmqa.model import encode_mcqa
    data = gen_synthetic_mcqa(SyntheticSpec(seed=2, count=40))
    texts = [t for ex in data for t in ex.passage + [ex.question] + ex.options]
    a = encode_mcqa(data, build_vocab(texts), 64)
    b = encode_mcqa(gen_synthetic_mcqa(SyntheticSpec(seed=2, count=40)), build_vocab(list(texts)), 64)
    for x, y in zip(a.instances, b.instances):
        for s, t in zip(x.sequences, y.sequences):
            assert np.array_equal(s.token_ids, t.token_ids) and np.array_equal(s.roles, t.roles)
