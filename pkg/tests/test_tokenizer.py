import itertools
from collections import Counter

import pytest

from seqforge import tokenizer as tok
from seqforge.tokenizer import SubwordModel, train_bpe


# ---------------------------------------------------------------------------
# slow reference BPE: recounts every pair from scratch each iteration
# ---------------------------------------------------------------------------

def oracle_train(lines, vocab_size, specials=()):
    all_specials = list(tok.CORE_SPECIALS)
    for s in specials:
        if s not in all_specials:
            all_specials.append(s)
    words = Counter()
    for line in lines:
        for w in line.split():
            words[w] += 1
    seqs = {w: tuple(w[:-1]) + (w[-1] + "</w>",) for w in words}
    base = sorted({s for seq in seqs.values() for s in seq})
    merges = []
    budget = vocab_size - len(all_specials) - len(base)
    for _ in range(budget):
        counts = Counter()
        for w, freq in words.items():
            seq = seqs[w]
            for i in range(len(seq) - 1):
                counts[(seq[i], seq[i + 1])] += freq
        counts = {p: c for p, c in counts.items() if p[0] + p[1] not in all_specials}
        if not counts:
            break
        top = max(counts.values())
        pair = min(p for p, c in counts.items() if c == top)
        merges.append(pair)
        for w in seqs:
            seq, new = list(seqs[w]), []
            i = 0
            while i < len(seq):
                if i + 1 < len(seq) and (seq[i], seq[i + 1]) == pair:
                    new.append(seq[i] + seq[i + 1])
                    i += 2
                else:
                    new.append(seq[i])
                    i += 1
            seqs[w] = tuple(new)
    vocab = list(all_specials) + list(base)
    for a, b in merges:
        if a + b not in vocab:
            vocab.append(a + b)
    return merges, vocab


def oracle_segment(word, merges):
    seq = list(word[:-1]) + [word[-1] + "</w>"]
    for pair in merges:
        changed = True
        while changed:
            changed = False
            for i in range(len(seq) - 1):
                if (seq[i], seq[i + 1]) == pair:
                    seq = seq[:i] + [seq[i] + seq[i + 1]] + seq[i + 2:]
                    changed = True
                    break
    return seq


TOY_LINES = [
    "the cat sat on the mat",
    "the dog sat on the log",
    "a cat and a dog met on the mat",
    "low lower lowest",
    "new newer newest",
    "the newest cat sat lower",
] * 9  # ~50 lines with stable statistics
TOY_LINES += ["dogs chase cats", "cats chase nothing"]


def test_single_dominant_pair():
    model = train_bpe(["aa aa aa"], vocab_size=10)
    assert model.merges[0] == ("a", "a</w>")


def test_specials_atomic_ids():
    model = train_bpe(TOY_LINES, 120, specials=["<2hi>", "<2en>"])
    for s in ["<2hi>", "<2en>", "<mask>"]:
        assert s in model.vocab
        assert model.vocab.id(s) in model.vocab.special_ids
    assert model.vocab.pad_id == 0
    assert model.vocab.unk_id == 1
    assert model.vocab.bos_id == 2
    assert model.vocab.eos_id == 3
    assert model.vocab.mask_id == 4


def test_train_matches_oracle():
    model = train_bpe(TOY_LINES, 140, specials=["<2xx>"])
    merges, vocab = oracle_train(TOY_LINES, 140, specials=["<2xx>"])
    assert model.merges == merges
    assert model.vocab.id_to_token == vocab


def test_encode_matches_oracle_segmentation():
    model = train_bpe(TOY_LINES, 140)
    for word in ["lowest", "newest", "chase", "cat", "mat", "on"]:
        ours = [model.vocab.token(i) for i in model.encode(word)]
        assert ours == oracle_segment(word, model.merges)


def test_encode_decode_roundtrip():
    model = train_bpe(TOY_LINES, 140)
    for line in TOY_LINES[:8]:
        ids = model.encode(line)
        assert model.decode(ids) == line
        assert model.encode(model.decode(ids)) == ids


def test_mask_token_atomic_in_text():
    model = train_bpe(TOY_LINES, 140)
    ids = model.encode("the <mask> sat")
    assert ids.count(model.vocab.mask_id) == 1
    assert model.decode(ids) == "the <mask> sat"


def test_unknown_character_maps_to_unk():
    model = train_bpe(TOY_LINES, 140)
    ids = model.encode("cat Δ")
    assert model.vocab.unk_id in ids


def test_decode_empty():
    model = train_bpe(TOY_LINES, 140)
    assert model.decode([]) == ""


def test_decode_strip_specials():
    model = train_bpe(TOY_LINES, 140, specials=["<2en>"])
    ids = model.encode("the cat", append=[tok.EOS, "<2en>"])
    assert model.decode(ids, keep_specials=False) == "the cat"
    assert model.decode(ids).endswith("</s> <2en>")


def test_decode_out_of_range():
    model = train_bpe(TOY_LINES, 140)
    with pytest.raises(ValueError):
        model.decode([len(model.vocab) + 5])


def test_append_convention():
    model = train_bpe(TOY_LINES, 140, specials=["<2en>"])
    ids = model.encode("the cat", append=[tok.EOS, "<2en>"])
    assert ids[-2] == model.vocab.eos_id
    assert ids[-1] == model.vocab.id("<2en>")


def test_empty_corpus_errors():
    with pytest.raises(ValueError):
        train_bpe([], 50)
    with pytest.raises(ValueError):
        train_bpe(["", "   "], 50)


def test_vocab_size_too_small_errors():
    with pytest.raises(ValueError):
        train_bpe(TOY_LINES, 10)


def test_no_merge_crosses_word_boundary():
    model = train_bpe(TOY_LINES, 160)
    for a, b in model.merges:
        # the marker may only terminate the merged symbol
        assert "</w>" not in a
        assert "</w>" not in b[:-4] or b.endswith("</w>")
        sym = a + b
        assert sym.count("</w>") <= 1
        if "</w>" in sym:
            assert sym.endswith("</w>")


def test_model_file_roundtrip(tmp_path):
    model = train_bpe(TOY_LINES, 140, specials=["<2hi>", "<2en>"])
    path = tmp_path / "bpe.model"
    model.save(path)
    text = path.read_text()
    assert text.startswith("SEQFORGE-BPE v1\n")
    assert "#VOCAB" in text
    loaded = SubwordModel.load(path)
    assert loaded.merges == model.merges
    assert loaded.vocab.id_to_token == model.vocab.id_to_token
    assert loaded.vocab.special_ids == model.vocab.special_ids
    sample = "the lowest dog <mask>"
    assert loaded.encode(sample) == model.encode(sample)


def test_retrain_byte_identical(tmp_path):
    p1, p2 = tmp_path / "a.model", tmp_path / "b.model"
    train_bpe(TOY_LINES, 140, specials=["<2hi>"]).save(p1)
    train_bpe(list(TOY_LINES), 140, specials=["<2hi>"]).save(p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_specials_never_produced_by_merges():
    lines = ["< m a s k >", "<mask> inline"] * 20
    model = train_bpe(lines, 60)
    for a, b in model.merges:
        assert a + b not in tok.CORE_SPECIALS


def test_vocab_size_cap():
    model = train_bpe(TOY_LINES, 90)
    assert len(model.vocab) <= 90
