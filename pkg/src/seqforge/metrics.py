"""BLEU-4 for dev-set selection and reporting.

Corpus score: BP * exp(mean of ln p_n over n=1..4) * 100 from clipped
n-gram counts summed over the corpus, brevity penalty
min(1, exp(1 - ref_len / hyp_len)), and no smoothing (any empty n-gram
order zeroes the corpus score). Text is split with a 13a-style tokenizer:
punctuation is separated from words (periods and commas stay attached
inside numbers) and the result is whitespace-split.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field

MAX_ORDER = 4

_PUNCT = re.compile(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])")
_DOT_BEFORE = re.compile(r"([^0-9])([\.,])")
_DOT_AFTER = re.compile(r"([\.,])([^0-9])")
_DIGIT_DASH = re.compile(r"([0-9])(-)")


def tokenize_13a(line):
    line = line.replace("<skipped>", "")
    line = line.replace("-\n", "").replace("\n", " ")
    if "&" in line:
        line = (line.replace("&quot;", '"').replace("&amp;", "&")
                .replace("&lt;", "<").replace("&gt;", ">"))
    line = f" {line} "
    line = _PUNCT.sub(r" \1 ", line)
    line = _DOT_BEFORE.sub(r"\1 \2 ", line)
    line = _DOT_AFTER.sub(r" \1 \2", line)
    line = _DIGIT_DASH.sub(r"\1 - ", line)
    return line.split()


@dataclass
class BleuStats:
    """Clipped match / total counts per order plus lengths; addition
    aggregates sentences, so corpus order cannot matter."""
    matches: list = field(default_factory=lambda: [0] * MAX_ORDER)
    totals: list = field(default_factory=lambda: [0] * MAX_ORDER)
    hyp_len: int = 0
    ref_len: int = 0

    def __add__(self, other):
        out = BleuStats()
        out.matches = [a + b for a, b in zip(self.matches, other.matches)]
        out.totals = [a + b for a, b in zip(self.totals, other.totals)]
        out.hyp_len = self.hyp_len + other.hyp_len
        out.ref_len = self.ref_len + other.ref_len
        return out


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def pair_stats(hyp_tokens, ref_tokens):
    stats = BleuStats()
    stats.hyp_len = len(hyp_tokens)
    stats.ref_len = len(ref_tokens)
    for n in range(1, MAX_ORDER + 1):
        ref_counts = _ngrams(ref_tokens, n)
        clipped = 0
        for gram, count in _ngrams(hyp_tokens, n).items():
            clipped += min(count, ref_counts[gram])
        stats.matches[n - 1] = clipped
        stats.totals[n - 1] = max(len(hyp_tokens) - n + 1, 0)
    return stats


def _brevity_penalty(hyp_len, ref_len):
    if hyp_len >= ref_len:
        return 1.0
    return math.exp(1.0 - ref_len / hyp_len)


def corpus_bleu(hypotheses, references):
    """BLEU in [0, 100] over aligned line lists."""
    if len(hypotheses) != len(references):
        raise ValueError(f"line counts differ: {len(hypotheses)} hypotheses, "
                         f"{len(references)} references")
    if not hypotheses:
        raise ValueError("cannot score an empty corpus")
    total = BleuStats()
    for hyp, ref in zip(hypotheses, references):
        total = total + pair_stats(tokenize_13a(hyp), tokenize_13a(ref))
    if total.hyp_len == 0:
        return 0.0
    if any(t == 0 or m == 0 for m, t in zip(total.matches, total.totals)):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(total.matches, total.totals))
    return _brevity_penalty(total.hyp_len, total.ref_len) \
        * math.exp(log_p / MAX_ORDER) * 100.0


def sentence_bleu(hypothesis, reference):
    """Diagnostic per-sentence score: add-one smoothing on orders >= 2
    (unigram precision stays unsmoothed, so junk still scores ~0)."""
    stats = pair_stats(tokenize_13a(hypothesis), tokenize_13a(reference))
    if stats.hyp_len == 0 or stats.matches[0] == 0:
        return 0.0
    log_p = math.log(stats.matches[0] / stats.totals[0])
    for m, t in zip(stats.matches[1:], stats.totals[1:]):
        log_p += math.log((m + 1.0) / (t + 1.0))
    return _brevity_penalty(stats.hyp_len, stats.ref_len) \
        * math.exp(log_p / MAX_ORDER) * 100.0
