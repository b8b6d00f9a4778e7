"""Synthetic-corpus generators: transduction properties, determinism,
split layout, id-level task shapes, greedy accuracy metric."""

import numpy as np

from seqforge import toydata
from seqforge.autograd import new_rng
from seqforge.decode import BeamConfig
from seqforge.tokenizer import EOS_ID

SYLLABLES = set(toydata.syllable_inventory())


def split_syllables(word):
    return [word[i:i + 2] for i in range(0, len(word), 2)]


# ---------------------------------------------------------------------------
# the transduction
# ---------------------------------------------------------------------------

def test_transduce_word_hand_cases():
    # [TRIVIAL] syllable order flips, characters inside a syllable do not
    assert toydata.transduce_word("kalu") == "luka"
    assert toydata.transduce_word("badugi") == "giduba"
    assert toydata.transduce_word("ne") == "ne"


def test_transduce_sentence_hand_case():
    # [TRIVIAL] word order reversed, each word transduced
    assert toydata.transduce_sentence("kalu bedi") == "dibe luka"
    assert toydata.transduce_sentence("ne") == "ne"


def test_transduction_is_an_involution():
    rng = new_rng(11)
    lex = toydata.make_lexicon(50, rng)
    for w in lex:
        assert toydata.transduce_word(toydata.transduce_word(w)) == w
    for s in toydata.sample_sentences(lex, 30, new_rng(12)):
        assert toydata.transduce_sentence(toydata.transduce_sentence(s)) == s


def test_transduction_is_injective_on_lexicon():
    lex = toydata.make_lexicon(200, new_rng(13))
    images = {toydata.transduce_word(w) for w in lex}
    assert len(images) == len(lex)


# ---------------------------------------------------------------------------
# lexicon / sampling
# ---------------------------------------------------------------------------

def test_lexicon_words_are_valid_and_distinct():
    lex = toydata.make_lexicon(120, new_rng(21))
    assert len(set(lex)) == 120
    for w in lex:
        assert len(w) in (4, 6)
        assert all(s in SYLLABLES for s in split_syllables(w))


def test_lexicon_deterministic():
    assert toydata.make_lexicon(40, new_rng(5)) == toydata.make_lexicon(40, new_rng(5))
    assert toydata.make_lexicon(40, new_rng(5)) != toydata.make_lexicon(40, new_rng(6))


def test_zipf_weights_shape():
    w = toydata.zipf_weights(30)
    assert abs(float(w.sum()) - 1.0) < 1e-12
    assert all(float(w[i]) > float(w[i + 1]) for i in range(29))
    # [DERIVED] straight-line recomputation of the unnormalized ratio
    expect = (2.7 / 3.7) ** 1.1
    assert abs(float(w[1] / w[0]) - expect) < 1e-12


def test_sample_sentences_bounds_and_vocabulary():
    lex = toydata.make_lexicon(25, new_rng(31))
    sents = toydata.sample_sentences(lex, 100, new_rng(32), min_len=2, max_len=5)
    lengths = {len(s.split()) for s in sents}
    assert lengths <= {2, 3, 4, 5}
    assert {2, 5} <= lengths          # both ends hit over 100 draws
    vocab = set(lex)
    for s in sents:
        assert all(w in vocab for w in s.split())


def test_sample_sentences_zipf_skew():
    # the head of the lexicon should dominate the tail under Zipf sampling
    lex = toydata.make_lexicon(50, new_rng(33))
    sents = toydata.sample_sentences(lex, 400, new_rng(34))
    counts = {w: 0 for w in lex}
    for s in sents:
        for w in s.split():
            counts[w] += 1
    head = sum(counts[w] for w in lex[:5])
    tail = sum(counts[w] for w in lex[-5:])
    assert head > 3 * tail


# ---------------------------------------------------------------------------
# the low-resource split
# ---------------------------------------------------------------------------

def test_split_pairs_are_true_transductions():
    split = toydata.transduction_split(3, n_words=40, n_mono=50, n_parallel=20,
                                       n_dev=10, n_test=10)
    for section in ("train_pairs", "dev_pairs", "test_pairs"):
        assert len(split[section]) > 0
        for a, b in split[section]:
            assert b == toydata.transduce_sentence(a)


def test_split_monolingual_sides():
    split = toydata.transduction_split(3, n_words=40, n_mono=60, n_parallel=20,
                                       n_dev=10, n_test=10)
    lex = set(split["lexicon"])
    assert len(split["mono_a"]) == 60 and len(split["mono_b"]) == 60
    for s in split["mono_a"]:
        assert all(w in lex for w in s.split())
    # language B text maps back into the lexicon under the inverse transform
    for s in split["mono_b"]:
        back = toydata.transduce_sentence(s)
        assert all(w in lex for w in back.split())
    # the two sides are not a parallel corpus in disguise
    assert split["mono_b"] != [toydata.transduce_sentence(s) for s in split["mono_a"]]


def test_split_deterministic_and_seed_sensitive():
    a = toydata.transduction_split(9, n_words=30, n_mono=40, n_parallel=10,
                                   n_dev=5, n_test=5)
    b = toydata.transduction_split(9, n_words=30, n_mono=40, n_parallel=10,
                                   n_dev=5, n_test=5)
    c = toydata.transduction_split(10, n_words=30, n_mono=40, n_parallel=10,
                                   n_dev=5, n_test=5)
    assert a == b
    assert a["train_pairs"] != c["train_pairs"]


def test_split_sections_drawn_independently():
    split = toydata.transduction_split(9, n_words=30, n_mono=40, n_parallel=10,
                                       n_dev=10, n_test=10)
    dev_src = [a for a, _ in split["dev_pairs"]]
    test_src = [a for a, _ in split["test_pairs"]]
    assert dev_src != test_src


# ---------------------------------------------------------------------------
# id-level tasks
# ---------------------------------------------------------------------------

def test_copy_examples_layout():
    exs = toydata.copy_examples(50, vocab_size=20, seed=7, min_len=2, max_len=6,
                                tag_id=5)
    assert len(exs) == 50
    for ex in exs:
        w = ex.src[:-2]
        assert 2 <= len(w) <= 6
        assert ex.src[-2:] == [EOS_ID, 5]
        assert ex.tgt_in == [5] + w
        assert ex.tgt_out == w + [EOS_ID]
        assert all(6 <= t < 20 for t in w)


def test_reverse_examples_layout():
    exs = toydata.reverse_examples(30, vocab_size=15, seed=8)
    for ex in exs:
        w = ex.src[:-2]
        assert ex.tgt_out == list(reversed(w)) + [EOS_ID]
        assert ex.tgt_in == [5] + list(reversed(w))


def test_copy_examples_deterministic():
    a = toydata.copy_examples(10, 20, seed=3)
    b = toydata.copy_examples(10, 20, seed=3)
    assert [e.src for e in a] == [e.src for e in b]


class _ScriptedModel:
    """Follows a per-source script by prefix length; greedy decoding then
    reproduces the script exactly."""

    def __init__(self, script_for, vocab):
        self.script_for = script_for
        self.vocab = vocab

    def decode_logits(self, src, prefixes):
        script = self.script_for(tuple(src))
        rows = np.zeros((len(prefixes), self.vocab), dtype=np.float64)
        for i, prefix in enumerate(prefixes):
            pos = len(prefix) - 1          # prefix includes the start symbol
            tok = script[pos] if pos < len(script) else EOS_ID
            rows[i, tok] = 9.0
        return rows


def test_greedy_token_accuracy_perfect_model():
    exs = toydata.copy_examples(20, vocab_size=16, seed=4)
    model = _ScriptedModel(
        {tuple(e.src): list(e.tgt_out) for e in exs}.__getitem__, 16)
    acc = toydata.greedy_token_accuracy(model, exs, BeamConfig(beam=1, max_len=16))
    assert acc == 1.0


def test_greedy_token_accuracy_single_error():
    exs = toydata.copy_examples(20, vocab_size=16, seed=4)
    scripts = {}
    for e in exs:
        script = list(e.tgt_out)
        script[0] = 6 if script[0] != 6 else 7      # guaranteed wrong first token
        scripts[tuple(e.src)] = script
    model = _ScriptedModel(scripts.__getitem__, 16)
    acc = toydata.greedy_token_accuracy(model, exs, BeamConfig(beam=1, max_len=16))
    # [DERIVED] straight-line expectation: one wrong position per example
    hits = sum(len(e.tgt_out) - 1 for e in exs)
    total = sum(len(e.tgt_out) for e in exs)
    assert abs(acc - hits / total) < 1e-12
    assert acc < 1.0


def test_write_lines_roundtrip(tmp_path):
    lines = ["kalu bedi", "ne", "zopu gi"]
    path = tmp_path / "x.txt"
    toydata.write_lines(str(path), lines)
    assert path.read_text(encoding="utf-8") == "kalu bedi\nne\nzopu gi\n"
