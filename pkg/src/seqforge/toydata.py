"""Deterministic synthetic corpora for tests and acceptance runs.

Two artificial languages share a syllable inventory. Language A sentences
are word sequences drawn from a Zipf-weighted lexicon; language B is a
systematic transduction of A: each word's consonant-vowel syllables are
reversed and the word order of the sentence is flipped. The mapping is
bijective and compositional, so a model can generalize it to words it
rarely (or never) saw in parallel data, which is what makes the
low-resource pre-training experiment meaningful.

Everything derives from an integer seed; the same seed always yields the
same corpora.
"""

from __future__ import annotations

import numpy as np

from .autograd import new_rng
from .corpus import Example
from .tokenizer import EOS_ID

CONSONANTS = "bdgklmnprstz"
VOWELS = "aeiou"


def syllable_inventory():
    return [c + v for c in CONSONANTS for v in VOWELS]


def make_lexicon(n_words, rng):
    """Distinct words of 2 or 3 consonant-vowel syllables."""
    syl = syllable_inventory()
    words = []
    seen = set()
    while len(words) < n_words:
        k = 2 + int(rng.integers(2))
        w = "".join(syl[int(rng.integers(len(syl)))] for _ in range(k))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def transduce_word(word):
    """Reverse the 2-character syllables: "kalu" -> "luka"."""
    syllables = [word[i:i + 2] for i in range(0, len(word), 2)]
    return "".join(reversed(syllables))


def transduce_sentence(sentence):
    """Word-level transduction plus reversed word order."""
    return " ".join(transduce_word(w) for w in reversed(sentence.split()))


def zipf_weights(n, alpha=1.1, offset=2.7):
    w = 1.0 / np.power(np.arange(n) + offset, alpha)
    return w / w.sum()


def sample_sentences(lexicon, n, rng, min_len=3, max_len=8, alpha=1.1):
    probs = zipf_weights(len(lexicon), alpha)
    out = []
    for _ in range(n):
        k = int(rng.integers(min_len, max_len + 1))
        idx = rng.choice(len(lexicon), size=k, p=probs)
        out.append(" ".join(lexicon[i] for i in idx))
    return out


def transduction_split(seed, n_words=100, n_mono=20000, n_parallel=500,
                       n_dev=200, n_test=200):
    """The low-resource setup: plentiful monolingual text in both
    languages, scarce parallel data, held-out dev/test pairs.

    The three parallel sections are sampled independently of the
    monolingual text and of each other.
    """
    lex_rng = new_rng(seed, 1)
    lexicon = make_lexicon(n_words, lex_rng)
    mono_a = sample_sentences(lexicon, n_mono, new_rng(seed, 2))
    mono_b = [transduce_sentence(s)
              for s in sample_sentences(lexicon, n_mono, new_rng(seed, 3))]

    def pairs(key, n):
        src = sample_sentences(lexicon, n, new_rng(seed, key))
        return [(s, transduce_sentence(s)) for s in src]

    return {
        "lexicon": lexicon,
        "mono_a": mono_a,
        "mono_b": mono_b,
        "train_pairs": pairs(4, n_parallel),
        "dev_pairs": pairs(5, n_dev),
        "test_pairs": pairs(6, n_test),
    }


def write_lines(path, lines):
    with open(path, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(line + "\n")


# ---------------------------------------------------------------------------
# id-level tasks (no tokenizer involved)
# ---------------------------------------------------------------------------

def copy_examples(n, vocab_size, seed, min_len=3, max_len=8, tag_id=5):
    """Sequences of random ids with target == source, in the usual layout
    (source ends with </s> + tag, decoder starts at the tag)."""
    rng = new_rng(seed)
    examples = []
    for _ in range(n):
        k = int(rng.integers(min_len, max_len + 1))
        w = [int(t) for t in rng.integers(tag_id + 1, vocab_size, size=k)]
        examples.append(Example(src=w + [EOS_ID, tag_id],
                                tgt_in=[tag_id] + w,
                                tgt_out=w + [EOS_ID]))
    return examples


def reverse_examples(n, vocab_size, seed, min_len=3, max_len=8, tag_id=5):
    rng = new_rng(seed)
    examples = []
    for _ in range(n):
        k = int(rng.integers(min_len, max_len + 1))
        w = [int(t) for t in rng.integers(tag_id + 1, vocab_size, size=k)]
        r = list(reversed(w))
        examples.append(Example(src=w + [EOS_ID, tag_id],
                                tgt_in=[tag_id] + r,
                                tgt_out=r + [EOS_ID]))
    return examples


def greedy_token_accuracy(model, examples, cfg):
    """Per-token accuracy of greedy decodes against the reference target.
    The end marker counts as a position; length mismatches count against
    the score."""
    from .decode import greedy_decode
    hits = total = 0
    for ex in examples:
        want = list(ex.tgt_out)
        hyp = greedy_decode(model, ex.src, cfg)
        got = list(hyp.tokens) + ([EOS_ID] if hyp.finished else [])
        total += max(len(want), len(got))
        hits += sum(1 for a, b in zip(want, got) if a == b)
    return hits / total
