"""BPE subword model with user-defined special tokens and language tags.

Words are whitespace-split; the last character of each word carries an
end-of-word marker, so merges never cross word boundaries. Special tokens
(pad/unk/bos/eos/mask plus tags like <2hi>) sit at fixed low ids, are
matched atomically in text and are never produced by merges.
"""

from __future__ import annotations

import re
from collections import Counter

PAD, UNK, BOS, EOS, MASK = "<pad>", "<unk>", "<s>", "</s>", "<mask>"
CORE_SPECIALS = (PAD, UNK, BOS, EOS, MASK)
# fixed id layout: core specials occupy the first ids in this order
PAD_ID, UNK_ID, BOS_ID, EOS_ID, MASK_ID = range(5)
WORD_MARKER = "</w>"

FILE_HEADER = "SEQFORGE-BPE v1"


def lang_tag(lang):
    """Language tag token for a language code, e.g. 'hi' -> '<2hi>'."""
    return f"<2{lang}>"


class Vocabulary:
    """Bijective id<->token table; specials occupy the lowest ids (pad=0)."""

    def __init__(self, id_to_token, special_ids):
        self.id_to_token = list(id_to_token)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate token in vocabulary")
        self.special_ids = frozenset(special_ids)

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def id(self, token):
        return self.token_to_id[token]

    def token(self, idx):
        if not 0 <= idx < len(self.id_to_token):
            raise ValueError(f"token id {idx} out of range (vocab size {len(self.id_to_token)})")
        return self.id_to_token[idx]

    @property
    def pad_id(self):
        return self.token_to_id[PAD]

    @property
    def unk_id(self):
        return self.token_to_id[UNK]

    @property
    def bos_id(self):
        return self.token_to_id[BOS]

    @property
    def eos_id(self):
        return self.token_to_id[EOS]

    @property
    def mask_id(self):
        return self.token_to_id[MASK]

    def special_tokens(self):
        return [self.id_to_token[i] for i in sorted(self.special_ids)]


class SubwordModel:
    """Trained merge list plus vocabulary; encoding is deterministic."""

    def __init__(self, merges, vocab, marker=WORD_MARKER):
        self.merges = list(merges)
        self.vocab = vocab
        self.marker = marker
        self._ranks = {pair: i for i, pair in enumerate(self.merges)}
        self._word_cache = {}
        specials = self.vocab.special_tokens()
        # longest-first so overlapping specials match greedily
        alt = "|".join(re.escape(s) for s in sorted(specials, key=len, reverse=True))
        self._special_re = re.compile(f"({alt})") if alt else None

    # -- encoding -----------------------------------------------------------

    def _word_symbols(self, word):
        cached = self._word_cache.get(word)
        if cached is not None:
            return cached
        syms = list(word[:-1]) + [word[-1] + self.marker]
        while len(syms) > 1:
            pairs = {(syms[i], syms[i + 1]) for i in range(len(syms) - 1)}
            ranked = [p for p in pairs if p in self._ranks]
            if not ranked:
                break
            first, second = min(ranked, key=self._ranks.get)
            merged, i = [], 0
            while i < len(syms):
                if i < len(syms) - 1 and syms[i] == first and syms[i + 1] == second:
                    merged.append(first + second)
                    i += 2
                else:
                    merged.append(syms[i])
                    i += 1
            syms = merged
        self._word_cache[word] = syms
        return syms

    def encode(self, text, append=()):
        """Text -> id list. Specials are matched atomically before
        segmentation; unknown characters map to unk. `append` lists extra
        special tokens (e.g. </s>, <2hi>) appended after the subwords."""
        ids = []
        chunks = self._special_re.split(text) if self._special_re else [text]
        for chunk in chunks:
            if not chunk:
                continue
            if self._special_re and self._special_re.fullmatch(chunk):
                ids.append(self.vocab.id(chunk))
                continue
            for word in chunk.split():
                for sym in self._word_symbols(word):
                    ids.append(self.vocab.token_to_id.get(sym, self.vocab.unk_id))
        for tok in append:
            ids.append(self.vocab.id(tok))
        return ids

    def decode(self, ids, keep_specials=True):
        """Id list -> text; inverse of encode up to whitespace normalization.
        Specials render literally when keep_specials, else are dropped."""
        words, buf = [], ""
        for idx in ids:
            tok = self.vocab.token(idx)
            if idx in self.vocab.special_ids:
                if buf:
                    words.append(buf)
                    buf = ""
                if keep_specials:
                    words.append(tok)
            elif tok.endswith(self.marker):
                words.append(buf + tok[: -len(self.marker)])
                buf = ""
            else:
                buf += tok
        if buf:
            words.append(buf)
        return " ".join(words)

    # -- persistence --------------------------------------------------------

    def save(self, path):
        lines = [FILE_HEADER]
        for a, b in self.merges:
            lines.append(f"{a} {b}")
        lines.append("#VOCAB")
        for i, tok in enumerate(self.vocab.id_to_token):
            if i in self.vocab.special_ids:
                lines.append(f"{tok}\t{i}\tS")
            else:
                lines.append(f"{tok}\t{i}")
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
        if not lines or lines[0] != FILE_HEADER:
            raise ValueError(f"{path}: not a {FILE_HEADER} model file")
        merges, entries, specials = [], {}, set()
        section = "merges"
        for line in lines[1:]:
            if line == "#VOCAB":
                section = "vocab"
                continue
            if not line:
                continue
            if section == "merges":
                a, b = line.split(" ")
                merges.append((a, b))
            else:
                parts = line.split("\t")
                tok, idx = parts[0], int(parts[1])
                entries[idx] = tok
                if len(parts) > 2 and parts[2] == "S":
                    specials.add(idx)
        id_to_token = [entries[i] for i in range(len(entries))]
        return cls(merges, Vocabulary(id_to_token, specials))


def _word_frequencies(lines, special_re):
    counts = Counter()
    n_lines = 0
    for line in lines:
        n_lines += 1
        chunks = special_re.split(line) if special_re else [line]
        for chunk in chunks:
            if special_re and special_re.fullmatch(chunk):
                continue  # atomic specials carry no merge statistics
            counts.update(chunk.split())
    return counts, n_lines


def train_bpe(lines, vocab_size, specials=(), marker=WORD_MARKER):
    """Learn a BPE model from an iterable of text lines.

    Most frequent pair merges first; count ties break to the
    lexicographically smallest pair. Specials (core five plus the given
    extras, e.g. language tags) occupy ids 0..len(specials)-1.
    """
    all_specials = list(CORE_SPECIALS)
    for s in specials:
        if s not in all_specials:
            all_specials.append(s)
    special_set = set(all_specials)
    alt = "|".join(re.escape(s) for s in sorted(all_specials, key=len, reverse=True))
    special_re = re.compile(f"({alt})")

    word_freq, n_lines = _word_frequencies(lines, special_re)
    if n_lines == 0 or not word_freq:
        raise ValueError("empty corpus: nothing to train on")

    words = []   # (symbols list, freq)
    for w, c in sorted(word_freq.items()):
        words.append([list(w[:-1]) + [w[-1] + marker], c])

    base = sorted({s for syms, _ in words for s in syms})
    if vocab_size <= len(all_specials) + len(base):
        raise ValueError(
            f"vocab_size {vocab_size} too small: {len(all_specials)} specials + "
            f"{len(base)} base symbols")

    # pair statistics with a word index, updated incrementally per merge
    pair_counts = Counter()
    pair_words = {}
    for wi, (syms, c) in enumerate(words):
        for p in zip(syms, syms[1:]):
            pair_counts[p] += c
            pair_words.setdefault(p, set()).add(wi)

    merges = []
    n_merges = vocab_size - len(all_specials) - len(base)
    for _ in range(n_merges):
        candidates = [(c, p) for p, c in pair_counts.items()
                      if c > 0 and (p[0] + p[1]) not in special_set]
        if not candidates:
            break
        best_count = max(c for c, _ in candidates)
        pair = min(p for c, p in candidates if c == best_count)
        merges.append(pair)
        new_sym = pair[0] + pair[1]
        for wi in sorted(pair_words.get(pair, ())):
            syms, c = words[wi]
            for p in zip(syms, syms[1:]):
                pair_counts[p] -= c
                pair_words[p].discard(wi)
            merged, i = [], 0
            while i < len(syms):
                if i < len(syms) - 1 and (syms[i], syms[i + 1]) == pair:
                    merged.append(new_sym)
                    i += 2
                else:
                    merged.append(syms[i])
                    i += 1
            words[wi][0] = merged
            for p in zip(merged, merged[1:]):
                pair_counts[p] += c
                pair_words.setdefault(p, set()).add(wi)

    id_to_token = all_specials + base
    seen = set(id_to_token)
    for a, b in merges:
        # two merge paths can yield the same symbol; the vocab keeps one id
        if a + b not in seen:
            id_to_token.append(a + b)
            seen.add(a + b)
    vocab = Vocabulary(id_to_token, range(len(all_specials)))
    return SubwordModel(merges, vocab, marker)


def train_bpe_file(path, vocab_size, specials=()):
    with open(path, encoding="utf-8") as f:
        return train_bpe(f, vocab_size, specials)
