"""Inference: greedy and beam search with length penalty, wait-k streaming
decoding, forced scoring, masked-input decoding, and representation /
attention extraction.

Conventions. The encoder input follows the tag convention (subwords,
end marker, target-language tag), so the decoder's start symbol is simply
the last source id. A Hypothesis holds the generated surface ids without
the start symbol and without the end marker; its log-probability sums the
log-softmax of every emitted step, end marker included when finished.
Penalized score = logprob / steps^alpha where steps counts emitted tokens
(the end marker counts as a step).

Models are duck-typed: anything exposing ``decode_logits(src, prefixes)``
returning one logits row per prefix can be decoded, which is how the test
rigs drive the search; TransformerModel goes through its encoder/decoder.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax

from . import autograd as ag
from .autograd import Tensor
from .corpus import Batch
from .tokenizer import EOS_ID, MASK_ID


@dataclass
class BeamConfig:
    beam: int = 4
    alpha: float = 1.0
    max_len: int = 64
    k: int | None = None     # wait-k cross-attention mask during search

    def __post_init__(self):
        if self.beam < 1:
            raise ValueError("beam size must be >= 1")
        if self.max_len < 1:
            raise ValueError("max length must be >= 1")
        if self.alpha < 0:
            raise ValueError("length penalty must be >= 0")
        if self.k is not None and self.k < 1:
            raise ValueError("wait-k must be >= 1")


@dataclass
class Hypothesis:
    tokens: list
    logprob: float
    finished: bool
    score: float = 0.0

    def steps(self):
        return len(self.tokens) + (1 if self.finished else 0)


def _penalized(logprob, steps, alpha):
    return logprob / max(steps, 1) ** alpha


# ---------------------------------------------------------------------------
# model stepping
# ---------------------------------------------------------------------------

def _make_stepper(model, src_ids, wait_k=None):
    """Returns step(prefixes) -> [B, V] log-softmax rows for the next token
    after each prefix (prefixes include the start symbol, equal lengths)."""
    src_ids = [int(t) for t in src_ids]
    if hasattr(model, "decode_logits"):
        def step(prefixes):
            logits = np.asarray(model.decode_logits(src_ids, prefixes), dtype=np.float64)
            return log_softmax(logits, axis=-1)
        return step

    src = np.asarray(src_ids, dtype=np.int64)[None, :]
    src_mask = np.ones_like(src, dtype=bool)
    with ag.no_grad():
        enc = model.encode(src, src_mask)

    def step(prefixes):
        b = len(prefixes)
        tgt = np.asarray(prefixes, dtype=np.int64)
        tgt_mask = np.ones_like(tgt, dtype=bool)
        enc_b = Tensor(np.repeat(enc.data, b, axis=0))
        mask_b = np.repeat(src_mask, b, axis=0)
        with ag.no_grad():
            final, _ = model.decode(tgt, tgt_mask, enc_b, mask_b, wait_k=wait_k)
            logits = model.project(final)
        return log_softmax(logits.data[:, -1, :].astype(np.float64), axis=-1)
    return step


def _start_symbol(src_ids):
    return int(src_ids[-1])


# ---------------------------------------------------------------------------
# greedy
# ---------------------------------------------------------------------------

def greedy_decode(model, src_ids, cfg: BeamConfig, eos_id=EOS_ID):
    step = _make_stepper(model, src_ids, wait_k=cfg.k)
    prefix = [_start_symbol(src_ids)]
    tokens = []
    logprob = 0.0
    finished = False
    for _ in range(cfg.max_len):
        row = step([prefix])[0]
        tok = int(np.argmax(row))
        logprob += float(row[tok])
        if tok == eos_id:
            finished = True
            break
        tokens.append(tok)
        prefix.append(tok)
    hyp = Hypothesis(tokens, logprob, finished)
    hyp.score = _penalized(logprob, hyp.steps(), cfg.alpha)
    return hyp


# ---------------------------------------------------------------------------
# beam search
# ---------------------------------------------------------------------------

@dataclass
class _Live:
    tokens: list
    logprob: float


def beam_search(model, src_ids, cfg: BeamConfig, eos_id=EOS_ID):
    """Synchronous beam search. Finished hypotheses are ranked by
    logprob / steps^alpha; the search stops once no live hypothesis's upper
    bound (its current logprob at the most favourable remaining length)
    can beat the worst of a full finished set."""
    step = _make_stepper(model, src_ids, wait_k=cfg.k)
    start = _start_symbol(src_ids)
    live = [_Live([], 0.0)]
    finished = []
    counter = 1
    for t in range(1, cfg.max_len + 1):
        rows = step([[start] + h.tokens for h in live])
        candidates = []
        for i, h in enumerate(live):
            # top-beam per hypothesis; with beam=1 an end-marker argmax
            # empties the live set, which is what makes beam=1 == greedy
            for v in np.argsort(-rows[i], kind="stable")[:cfg.beam]:
                candidates.append((h.logprob + float(rows[i][v]), i, int(v)))
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
        next_live = []
        for lp, i, v in candidates:
            if v == eos_id:
                hyp = Hypothesis(list(live[i].tokens), lp, True)
                hyp.score = _penalized(lp, hyp.steps(), cfg.alpha)
                finished.append((hyp, counter))
                counter += 1
            elif len(next_live) < cfg.beam:
                next_live.append(_Live(live[i].tokens + [v], lp))
                counter += 1
        finished.sort(key=lambda fc: (-fc[0].score, fc[1]))
        del finished[cfg.beam:]
        live = next_live
        if not live:
            break
        if len(finished) == cfg.beam and t < cfg.max_len:
            worst = finished[-1][0].score
            best_bound = max(
                _penalized(h.logprob, cfg.max_len, cfg.alpha) if h.logprob < 0
                else _penalized(h.logprob, len(h.tokens) + 1, cfg.alpha)
                for h in live)
            if best_bound <= worst:
                break
    else:
        for i, h in enumerate(live):
            hyp = Hypothesis(h.tokens, h.logprob, False)
            hyp.score = _penalized(h.logprob, hyp.steps(), cfg.alpha)
            finished.append((hyp, counter + i))
        finished.sort(key=lambda fc: (-fc[0].score, fc[1]))
        del finished[cfg.beam:]
    return [hyp for hyp, _ in finished]


# ---------------------------------------------------------------------------
# forced scoring
# ---------------------------------------------------------------------------

def score_pair(model, src_ids, tgt_ids, normalize=False):
    """Forced-decoding log-probability of exactly the given target ids
    (pass the end marker yourself to score a complete translation)."""
    tgt_ids = [int(t) for t in tgt_ids]
    if not tgt_ids:
        return 0.0
    start = _start_symbol(src_ids)
    if hasattr(model, "decode_logits"):
        step = _make_stepper(model, src_ids)
        total = 0.0
        prefix = [start]
        for tok in tgt_ids:
            row = step([prefix])[0]
            total += float(row[tok])
            prefix.append(tok)
    else:
        src = np.asarray([int(t) for t in src_ids], dtype=np.int64)[None, :]
        tgt_in = np.asarray([start] + tgt_ids[:-1], dtype=np.int64)[None, :]
        with ag.no_grad():
            enc = model.encode(src, np.ones_like(src, dtype=bool))
            final, _ = model.decode(tgt_in, np.ones_like(tgt_in, dtype=bool),
                                    enc, np.ones_like(src, dtype=bool))
            logits = model.project(final)
        rows = log_softmax(logits.data[0].astype(np.float64), axis=-1)
        total = float(sum(rows[i, tok] for i, tok in enumerate(tgt_ids)))
    return total / len(tgt_ids) if normalize else total


# ---------------------------------------------------------------------------
# wait-k streaming decode
# ---------------------------------------------------------------------------

def wait_k_decode(model, src_ids, k, cfg: BeamConfig, eos_id=EOS_ID):
    """Greedy streaming decode: the token emitted at step t is computed
    from the literal source prefix of length min(k+t-1, S), re-encoded
    from scratch (no caching). The decoder's start symbol still comes from
    the full source's trailing language tag."""
    if k < 1:
        raise ValueError("wait-k must be >= 1")
    src_ids = [int(t) for t in src_ids]
    s = len(src_ids)
    start = _start_symbol(src_ids)
    tokens = []
    logprob = 0.0
    finished = False
    for t in range(1, cfg.max_len + 1):
        prefix_len = min(k + t - 1, s)
        step = _make_stepper(model, src_ids[:prefix_len])
        row = step([[start] + tokens])[0]
        tok = int(np.argmax(row))
        logprob += float(row[tok])
        if tok == eos_id:
            finished = True
            break
        tokens.append(tok)
    hyp = Hypothesis(tokens, logprob, finished)
    hyp.score = _penalized(logprob, hyp.steps(), cfg.alpha)
    return hyp


# ---------------------------------------------------------------------------
# masked-input decoding
# ---------------------------------------------------------------------------

def masked_input_decode(model, src_ids, spans, cfg: BeamConfig, mask_id=MASK_ID):
    """Replace each (start, end) source span with one mask token, then beam
    decode the noised source. Spans are half-open, must lie inside the
    source context, and must not overlap."""
    src_ids = [int(t) for t in src_ids]
    spans = sorted((int(a), int(b)) for a, b in spans)
    prev_end = 0
    for a, b in spans:
        if not (0 <= a < b <= len(src_ids)):
            raise ValueError(f"span ({a}, {b}) out of range for source length {len(src_ids)}")
        if a < prev_end:
            raise ValueError(f"span ({a}, {b}) overlaps a previous span")
        prev_end = b
    noised = list(src_ids)
    for a, b in reversed(spans):
        noised[a:b] = [mask_id]
    return beam_search(model, noised, cfg)


# ---------------------------------------------------------------------------
# representation / attention extraction
# ---------------------------------------------------------------------------

STATE_KINDS = ("enc_state", "dec_state")
ATTN_KINDS = ("enc_self_attn", "dec_self_attn", "dec_cross_attn")


def extract(model, src_ids, tgt_ids=None, what=("enc", "dec", "attn"),
            layers=None, cfg=None, sentence_index=0):
    """Dump per-layer states and attention maps for one sentence.

    what: any of "enc" (encoder states), "dec" (decoder states), "attn"
    (all attention kinds). When target ids are omitted they come from a
    greedy decode. Returns a list of JSON-serializable records:
    {sentence_index, kind, layer, head, shape, values(row-major)}.
    """
    cfg = cfg or BeamConfig()
    if tgt_ids is None:
        tgt_ids = greedy_decode(model, src_ids, cfg).tokens
    src = np.asarray([int(t) for t in src_ids], dtype=np.int64)[None, :]
    tgt_in = np.asarray([_start_symbol(src_ids)] + [int(t) for t in tgt_ids],
                        dtype=np.int64)[None, :]
    batch = Batch(src=src, tgt_in=tgt_in, tgt_out=np.zeros_like(tgt_in),
                  src_mask=np.ones_like(src, dtype=bool),
                  tgt_mask=np.ones_like(tgt_in, dtype=bool),
                  token_count=int(max(src.shape[1], tgt_in.shape[1])))
    with ag.no_grad():
        out = model.forward(batch)

    def keep(layer):
        return layers is None or layer in layers

    def rec(kind, layer, head, arr):
        arr = np.asarray(arr, dtype=np.float32)
        return {"sentence_index": sentence_index, "kind": kind, "layer": layer,
                "head": head, "shape": list(arr.shape),
                "values": [float(x) for x in arr.reshape(-1)]}

    records = []
    if "enc" in what:
        for l, st in enumerate(out.enc_states):
            if keep(l):
                records.append(rec("enc_state", l, None, st.data[0]))
    if "dec" in what:
        for l, st in enumerate(out.dec_states):
            if keep(l):
                records.append(rec("dec_state", l, None, st.data[0]))
    if "attn" in what:
        for kind, probs in (("enc_self_attn", out.enc_self_attn),
                            ("dec_self_attn", out.dec_self_attn),
                            ("dec_cross_attn", out.dec_cross_attn)):
            for l, p in enumerate(probs):
                if keep(l):
                    for h in range(p.data.shape[1]):
                        records.append(rec(kind, l, h, p.data[0, h]))
    return records


def dump_records(records, fp):
    for r in records:
        fp.write(json.dumps(r) + "\n")


def load_records(lines):
    return [json.loads(line) for line in lines if line.strip()]


def record_array(record):
    return np.asarray(record["values"], dtype=np.float32).reshape(record["shape"])
