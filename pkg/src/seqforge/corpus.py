"""Data ingestion, sharding, denoising noise and token-budget batching.

Sequence conventions used throughout:
  encoder input  = source subwords + </s> + <2tgtlang>
  decoder input  = <2tgtlang> + target subwords
  decoder target = target subwords + </s>
Plain corpora are one sentence per line; document corpora separate
documents with blank lines; parallel data is two aligned files, with an
optional third aligned file carrying document/multi-source context.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tokenizer import EOS, lang_tag


@dataclass
class NoiseConfig:
    """Text-infilling and sentence-permutation settings."""
    mask_id: int
    mask_fraction: float = 0.35
    span_lambda: float = 3.5
    permute_sentences: bool = False

    def __post_init__(self):
        if not 0.0 <= self.mask_fraction <= 1.0:
            raise ValueError(f"mask_fraction must be in [0, 1], got {self.mask_fraction}")
        if self.span_lambda <= 0:
            raise ValueError(f"span_lambda must be > 0, got {self.span_lambda}")


@dataclass
class SamplerConfig:
    """Temperature-based language sampling over per-language corpus sizes."""
    temperature: float
    sizes: dict

    def __post_init__(self):
        if self.temperature < 1.0:
            raise ValueError(f"sampling temperature must be >= 1, got {self.temperature}")
        for lang, d in self.sizes.items():
            if d <= 0:
                raise ValueError(f"corpus size for {lang!r} must be positive, got {d}")


@dataclass
class Example:
    """One tokenized training example (ids only)."""
    src: list
    tgt_in: list
    tgt_out: list
    ctx: list | None = None

    @property
    def src_len(self):
        return len(self.src)

    @property
    def tgt_len(self):
        return len(self.tgt_in)


@dataclass
class Batch:
    """Padded id arrays plus masks; token_count is the padded max of the
    source and target sides (the budget the packer enforced)."""
    src: np.ndarray          # [B, S] int
    tgt_in: np.ndarray       # [B, T] int
    tgt_out: np.ndarray      # [B, T] int
    src_mask: np.ndarray     # [B, S] bool, True at real tokens
    tgt_mask: np.ndarray     # [B, T] bool
    token_count: int
    ctx: np.ndarray | None = None       # [B, C] int
    ctx_mask: np.ndarray | None = None
    label: str = ""

    @property
    def size(self):
        return self.src.shape[0]


# ---------------------------------------------------------------------------
# file ingestion / sharding
# ---------------------------------------------------------------------------

def read_lines(path):
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


def read_documents(path):
    """Blank-line-separated documents, one sentence per line."""
    docs, cur = [], []
    for line in read_lines(path):
        if line.strip():
            cur.append(line)
        elif cur:
            docs.append(cur)
            cur = []
    if cur:
        docs.append(cur)
    return docs


def shard(path, num_workers, worker_id):
    """Worker w's shard: lines whose index mod num_workers == w.

    Shards partition the corpus: pairwise disjoint, union complete."""
    if not 0 <= worker_id < num_workers:
        raise ValueError(f"worker_id {worker_id} not in [0, {num_workers})")
    return [line for i, line in enumerate(read_lines(path)) if i % num_workers == worker_id]


def shard_list(items, num_workers, worker_id):
    if not 0 <= worker_id < num_workers:
        raise ValueError(f"worker_id {worker_id} not in [0, {num_workers})")
    return [x for i, x in enumerate(items) if i % num_workers == worker_id]


# ---------------------------------------------------------------------------
# denoising noise
# ---------------------------------------------------------------------------

def infill(tokens, cfg: NoiseConfig, rng, special_ids=frozenset()):
    """Replace sampled token spans with single mask tokens until at least
    mask_fraction of the original tokens are consumed.

    Span lengths are Poisson(span_lambda) clamped to [1, remaining budget];
    span starts are uniform over still-maskable positions; special tokens
    are never masked and cap a span."""
    n = len(tokens)
    target = cfg.mask_fraction * n
    work = list(tokens)
    if n == 0 or target <= 0:
        return work
    maskable = [t not in special_ids for t in work]
    consumed = 0
    while consumed < target:
        positions = [i for i, ok in enumerate(maskable) if ok]
        if not positions:
            break
        remaining = math.ceil(target - consumed)
        span = min(max(1, int(rng.poisson(cfg.span_lambda))), remaining)
        start = positions[int(rng.integers(len(positions)))]
        end = start
        while end < len(work) and maskable[end] and end - start < span:
            end += 1
        work[start:end] = [cfg.mask_id]
        maskable[start:end] = [False]
        consumed += end - start
    return work


def permute_sentences(document, rng):
    """Uniform random permutation of sentence order within a document."""
    if len(document) < 1:
        raise ValueError("document must contain at least one sentence")
    perm = rng.permutation(len(document))
    return [document[i] for i in perm]


# ---------------------------------------------------------------------------
# language sampling
# ---------------------------------------------------------------------------

def language_sample_probs(cfg: SamplerConfig):
    """p_l proportional to (D_l / sum D)^(1/T), normalized.

    Invariant under rescaling all sizes by a constant."""
    langs = list(cfg.sizes)
    total = float(sum(cfg.sizes.values()))
    raw = np.array([(cfg.sizes[l] / total) ** (1.0 / cfg.temperature) for l in langs],
                   dtype=np.float64)
    raw /= raw.sum()
    return dict(zip(langs, raw))


# ---------------------------------------------------------------------------
# example construction
# ---------------------------------------------------------------------------

def build_translation_example(model, src_text, tgt_text, tgt_lang, ctx_text=None):
    """Parallel pair -> Example with the tag convention above."""
    tag = lang_tag(tgt_lang)
    src = model.encode(src_text, append=[EOS, tag])
    tgt = model.encode(tgt_text)
    tag_id = model.vocab.id(tag)
    ex = Example(src=src, tgt_in=[tag_id] + tgt, tgt_out=tgt + [model.vocab.eos_id])
    if ctx_text is not None:
        ex.ctx = model.encode(ctx_text, append=[EOS])
    return ex


def build_denoising_example(model, sentence, lang, cfg: NoiseConfig, rng):
    """Monolingual sentence -> (noised source, clean target) Example."""
    tag = lang_tag(lang)
    tag_id = model.vocab.id(tag)
    clean = model.encode(sentence)
    noised = infill(clean, cfg, rng, special_ids=model.vocab.special_ids)
    return Example(
        src=noised + [model.vocab.eos_id, tag_id],
        tgt_in=[tag_id] + clean,
        tgt_out=clean + [model.vocab.eos_id],
    )


def build_denoising_document(model, document, lang, cfg: NoiseConfig, rng):
    """Document -> one Example per sentence, after optional permutation."""
    sentences = permute_sentences(document, rng) if cfg.permute_sentences else document
    return [build_denoising_example(model, s, lang, cfg, rng) for s in sentences]


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def _padded_count(n_rows, max_src, max_tgt):
    return n_rows * max(max_src, max_tgt)


def make_batches(examples, token_budget, pad_id=0, label=""):
    """Greedy length-bucketed packing under a padded-token budget.

    Returns (batches, skipped): every packable example lands in exactly one
    batch; examples longer than the budget are skipped and counted."""
    packable, skipped = [], 0
    for ex in examples:
        if max(ex.src_len, ex.tgt_len) > token_budget:
            skipped += 1
        else:
            packable.append(ex)
    packable.sort(key=lambda e: (max(e.src_len, e.tgt_len), e.src_len, e.tgt_len))

    batches, cur, cur_s, cur_t = [], [], 0, 0
    for ex in packable:
        s = max(cur_s, ex.src_len)
        t = max(cur_t, ex.tgt_len)
        if cur and _padded_count(len(cur) + 1, s, t) > token_budget:
            batches.append(pad_batch(cur, pad_id, label))
            cur, cur_s, cur_t = [], 0, 0
            s, t = ex.src_len, ex.tgt_len
        cur.append(ex)
        cur_s, cur_t = s, t
    if cur:
        batches.append(pad_batch(cur, pad_id, label))
    return batches, skipped


def pad_batch(examples, pad_id=0, label=""):
    b = len(examples)
    max_s = max(e.src_len for e in examples)
    max_t = max(e.tgt_len for e in examples)
    src = np.full((b, max_s), pad_id, dtype=np.int64)
    tgt_in = np.full((b, max_t), pad_id, dtype=np.int64)
    tgt_out = np.full((b, max_t), pad_id, dtype=np.int64)
    for i, ex in enumerate(examples):
        src[i, :ex.src_len] = ex.src
        tgt_in[i, :ex.tgt_len] = ex.tgt_in
        tgt_out[i, :len(ex.tgt_out)] = ex.tgt_out
    ctx = ctx_mask = None
    if any(e.ctx is not None for e in examples):
        max_c = max(len(e.ctx or [pad_id]) for e in examples)
        ctx = np.full((b, max_c), pad_id, dtype=np.int64)
        for i, ex in enumerate(examples):
            if ex.ctx:
                ctx[i, :len(ex.ctx)] = ex.ctx
        ctx_mask = ctx != pad_id
    return Batch(
        src=src, tgt_in=tgt_in, tgt_out=tgt_out,
        src_mask=src != pad_id, tgt_mask=tgt_in != pad_id,
        token_count=_padded_count(b, max_s, max_t),
        ctx=ctx, ctx_mask=ctx_mask, label=label,
    )


# ---------------------------------------------------------------------------
# epoch mixing under temperature sampling
# ---------------------------------------------------------------------------

def mix_epoch(per_label_batches, sampler: SamplerConfig | None, rng):
    """Interleave per-language batch lists into one epoch.

    Languages are drawn per batch from the temperature-sampling
    distribution; smaller languages cycle. The epoch ends when the largest
    language has been consumed once, so one epoch can exceed the raw
    corpus size."""
    labels = list(per_label_batches)
    if len(labels) == 1:
        return list(per_label_batches[labels[0]])
    if sampler is None:
        sampler = SamplerConfig(1.0, {l: sum(b.size for b in bs)
                                      for l, bs in per_label_batches.items()})
    probs = language_sample_probs(sampler)
    p = np.array([probs[l] for l in labels])
    largest = max(labels, key=lambda l: len(per_label_batches[l]))
    cursors = {l: 0 for l in labels}
    out = []
    while cursors[largest] < len(per_label_batches[largest]):
        l = labels[int(rng.choice(len(labels), p=p))]
        bs = per_label_batches[l]
        out.append(bs[cursors[l] % len(bs)])
        cursors[l] += 1
    return out
