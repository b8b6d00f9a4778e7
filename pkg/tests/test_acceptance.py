"""Acceptance gate: one test per release criterion, each printing a single
PASS/FAIL line with its measured numbers.

These are end-to-end properties (gradient integrity, trainability, search
and metric oracles, reproducibility), so several tests train real models
and take minutes rather than seconds. Run with -s to watch the lines
appear; the slowest test is the low-resource pretraining experiment.
"""

import math
import time

import numpy as np

from seqforge import autograd as ag
from seqforge import checkpoint as ckpt
from seqforge import toydata
from seqforge.autograd import Tensor, new_rng
from seqforge.corpus import (NoiseConfig, SamplerConfig,
                             build_denoising_example,
                             build_translation_example, make_batches,
                             mix_epoch, pad_batch)
from seqforge.decode import (BeamConfig, beam_search, greedy_decode,
                             score_pair, wait_k_decode)
from seqforge.distill import DistillConfig, combined_loss, logit_distill_loss
from seqforge.metrics import corpus_bleu
from seqforge.model import ModelConfig, build_wait_k_cross_mask, init_model
from seqforge.tokenizer import EOS, EOS_ID, lang_tag, train_bpe
from seqforge.train import (STREAM_EPOCH, AdamState, TrainConfig, batch_loss,
                            resume_from, train_loop, train_step)
from seqforge.transfer import apply_transfer, identity_map, remap_embeddings

from helpers import max_rel_err, numeric_grads
from test_decode import EOS as RIG_EOS
from test_decode import TableModel, enumerate_best
from test_metrics import CASES, oracle_bleu
from test_model import BASE, toy_batch


def report(num, name, ok, detail):
    print(f"\n[acceptance] criterion {num:2d} {name}: "
          f"{'PASS' if ok else 'FAIL'}  ({detail})")
    assert ok, f"criterion {num} ({name}): {detail}"


# ---------------------------------------------------------------------------
# 1. gradient integrity
# ---------------------------------------------------------------------------

def _op_cases(rng):
    """(name, arrays, loss builder) for every differentiable op. The loss
    builder re-reads the arrays so finite differences see mutations."""
    a = rng.normal(0, 1, (3, 4))
    b = rng.normal(0, 1, (3, 4))
    c = rng.normal(0, 1, (4, 5))
    pos = np.abs(rng.normal(0, 1, (3, 4))) + 0.5
    w = rng.normal(0, 1, (7, 4))
    gain = rng.normal(1, 0.2, 4)
    bias = rng.normal(0, 0.2, 4)
    logits = rng.normal(0, 2, (6, 9))
    mask = np.array([[True] * 4, [True, True, False, False],
                     [True, False, False, False]])
    ids = np.array([[1, 3, 6], [0, 2, 4]])
    targets = np.array([1, 0, 3, 8, 2, 0])

    def weighted(t):
        k = Tensor(np.linspace(0.3, 1.1, t.data.size).reshape(t.shape))
        return ag.tsum(t * k)

    return [
        ("add", [a, b], lambda A: weighted(ag.add(A[0](), A[1]()))),
        ("mul", [a, b], lambda A: weighted(ag.mul(A[0](), A[1]()))),
        ("div", [a, pos], lambda A: weighted(ag.div(A[0](), A[1]()))),
        ("neg", [a], lambda A: weighted(ag.neg(A[0]()))),
        ("relu", [a], lambda A: weighted(ag.relu(A[0]()))),
        ("gelu", [a], lambda A: weighted(ag.gelu(A[0]()))),
        ("sigmoid", [a], lambda A: weighted(ag.sigmoid(A[0]()))),
        ("exp", [a], lambda A: weighted(ag.exp(A[0]()))),
        ("log", [pos], lambda A: weighted(ag.log(A[0]()))),
        ("reshape", [a], lambda A: weighted(ag.reshape(A[0](), (4, 3)))),
        ("transpose", [a], lambda A: weighted(ag.transpose(A[0]()))),
        ("swapaxes", [a], lambda A: weighted(ag.swapaxes(A[0](), 0, 1))),
        ("slice", [a], lambda A: weighted(ag.tslice(A[0](), (slice(1, 3),)))),
        ("concat", [a, b], lambda A: weighted(ag.concat([A[0](), A[1]()], 0))),
        ("sum", [a], lambda A: ag.tsum(A[0]())),
        ("mean", [a], lambda A: weighted(ag.tmean(A[0](), axis=1))),
        ("matmul", [a, c], lambda A: weighted(ag.matmul(A[0](), A[1]()))),
        ("embedding", [w], lambda A: weighted(ag.embedding(A[0](), ids))),
        ("softmax", [a], lambda A: weighted(ag.softmax(A[0]()))),
        ("log_softmax", [a], lambda A: weighted(ag.log_softmax(A[0]()))),
        ("masked_softmax", [a],
         lambda A: weighted(ag.masked_softmax(A[0](), mask))),
        ("layer_norm", [a, gain, bias],
         lambda A: weighted(ag.layer_norm(A[0](), A[1](), A[2]()))),
        ("cross_entropy", [logits],
         lambda A: ag.cross_entropy_label_smoothed(A[0](), targets, 0.1,
                                                   pad_id=0)),
        ("dropout", [a],
         lambda A: weighted(ag.dropout(A[0](), 0.35, new_rng(55), True))),
    ]


def _fd_check_ops(tol, eps):
    worst = 0.0
    for name, arrays, build in _op_cases(new_rng(31)):
        tensors = None

        def loss_fn():
            nonlocal tensors
            tensors = [Tensor(arr, requires_grad=True) for arr in arrays]
            getters = [(lambda t=t: t) for t in tensors]
            return build(getters)

        loss = loss_fn()
        loss.backward()
        analytic = [t.grad.copy() for t in tensors]

        for arr, an in zip(arrays, analytic):
            num = np.zeros_like(arr)
            flat_a, flat_n = arr.reshape(-1), num.reshape(-1)
            for i in range(flat_a.size):
                keep = flat_a[i]
                flat_a[i] = keep + eps
                up = float(loss_fn().data)
                flat_a[i] = keep - eps
                dn = float(loss_fn().data)
                flat_a[i] = keep
                flat_n[i] = (up - dn) / (2 * eps)
            err = max_rel_err(an, num)
            worst = max(worst, err)
            assert err < tol, f"op {name}: rel err {err:.2e} >= {tol}"
    return worst


def _fd_check_model(cfg_kw, tol, eps, floor):
    """Full central differences over every parameter of a 2-layer
    encoder-decoder loss (tiny widths keep this a few seconds)."""
    cfg = ModelConfig(vocab_size=7, hidden=4, ffn=6, heads=2, enc_layers=2,
                      dec_layers=2, dropout=0.0, max_len=8, **cfg_kw)
    model = init_model(cfg, new_rng(5))
    batch = toy_batch(new_rng(6), bsz=2, s=3, t=3, vocab=7)

    def run():
        loss, _ = batch_loss(model, batch, smoothing=0.1)
        return loss

    run().backward()
    names = list(model.params)
    analytic = {n: model.params[n].grad.copy() for n in names}
    arrays = [model.params[n].data for n in names]
    nums = numeric_grads(lambda: float(run().data), arrays, eps=eps)
    worst = 0.0
    for n, num in zip(names, nums):
        err = max_rel_err(analytic[n], num, floor=floor)
        worst = max(worst, err)
        assert err < tol, f"param {n}: rel err {err:.2e} >= {tol}"
    return worst


def test_criterion_01_gradient_integrity():
    t0 = time.monotonic()
    w32_ops = _fd_check_ops(tol=1e-3, eps=1e-3)
    with ag.use_dtype(np.float64):
        w64_ops = _fd_check_ops(tol=1e-4, eps=1e-6)
    tied = {"unique_enc_layers": 1, "unique_dec_layers": 1}
    # 32-bit: fd noise is ~(loss ulp)/eps absolute, so near-zero entries
    # are compared under an absolute floor rather than a relative one
    w32_m = max(_fd_check_model({}, 1e-3, eps=1e-2, floor=0.05),
                _fd_check_model(tied, 1e-3, eps=1e-2, floor=0.05))
    with ag.use_dtype(np.float64):
        w64_m = max(_fd_check_model({}, 1e-4, eps=1e-5, floor=1e-6),
                    _fd_check_model(tied, 1e-4, eps=1e-5, floor=1e-6))
    dt = time.monotonic() - t0
    report(1, "gradient integrity", dt < 120,
           f"op rel err 32-bit {w32_ops:.1e}, 64-bit {w64_ops:.1e}; "
           f"model 32-bit {w32_m:.1e}, 64-bit {w64_m:.1e}; {dt:.0f}s < 120s")


# ---------------------------------------------------------------------------
# 2 & 7. copy-task overfit, layer-tying compactness
# ---------------------------------------------------------------------------

def _train_copy(unique, max_steps, seed=42):
    examples = toydata.copy_examples(200, vocab_size=20, seed=seed)
    batches, _ = make_batches(examples, 512, label="copy")
    cfg = ModelConfig(vocab_size=20, hidden=64, ffn=128, heads=4,
                      enc_layers=2, dec_layers=2,
                      unique_enc_layers=unique, unique_dec_layers=unique,
                      dropout=0.0, max_len=32)
    model = init_model(cfg, new_rng(7, 0))
    opt = AdamState(model)
    tcfg = TrainConfig(max_steps=max_steps, peak_lr=0.003, warmup=100,
                       label_smoothing=0.0, seed=7)
    bc = BeamConfig(beam=1, max_len=16)
    step, epoch = 0, 0
    while step < max_steps:
        order = new_rng(7, STREAM_EPOCH, epoch).permutation(len(batches))
        for i in order:
            if step >= max_steps:
                break
            step += 1
            train_step(model, [batches[int(i)]], opt, tcfg, step)
            if step % 250 == 0:
                acc = toydata.greedy_token_accuracy(model, examples, bc)
                if acc >= 0.99:
                    return acc, step
        epoch += 1
    return toydata.greedy_token_accuracy(model, examples, bc), step


def test_criterion_02_copy_overfit():
    t0 = time.monotonic()
    acc, steps = _train_copy(unique=0, max_steps=2000)
    dt = time.monotonic() - t0
    report(2, "copy-task overfit", acc >= 0.99 and dt < 300,
           f"token accuracy {acc:.4f} at step {steps}; {dt:.0f}s < 300s")


def test_criterion_07_tying_compactness():
    t0 = time.monotonic()

    def layer_params(unique):
        cfg = ModelConfig(vocab_size=100, hidden=64, ffn=128, heads=4,
                          enc_layers=6, dec_layers=6,
                          unique_enc_layers=unique, unique_dec_layers=unique)
        model = init_model(cfg, new_rng(1))
        return sum(t.data.size for n, t in model.params.items()
                   if n.startswith(("encoder.layer.", "decoder.layer.")))

    untied, tied = layer_params(0), layer_params(1)
    # [DERIVED] six recurrences over one parameter set keep exactly 1/6
    formula_ok = untied == 6 * tied
    reduction = 1 - tied / untied
    acc, steps = _train_copy(unique=1, max_steps=4000)
    dt = time.monotonic() - t0
    report(7, "layer-tying compactness",
           formula_ok and abs(reduction - 5 / 6) < 1e-12 and acc >= 0.99,
           f"layer params {untied} -> {tied} (-{reduction:.4f}); "
           f"tied copy accuracy {acc:.4f} at step {steps}; {dt:.0f}s")


# ---------------------------------------------------------------------------
# 3. pre-training helps the low-resource pair
# ---------------------------------------------------------------------------

def _dev_bleu(model, tok, dev_pairs):
    tag = lang_tag("bb")
    bc = BeamConfig(beam=1, max_len=24)
    hyps = []
    for a, _ in dev_pairs:
        hyp = greedy_decode(model, tok.encode(a, append=[EOS, tag]), bc)
        hyps.append(tok.decode(hyp.tokens, keep_specials=False))
    return corpus_bleu(hyps, [b for _, b in dev_pairs])


def _fit(model, per_label, sampler, steps, seed):
    cfg = TrainConfig(max_steps=steps, peak_lr=0.001, warmup=100,
                      label_smoothing=0.1, seed=seed)

    def plan(epoch):
        rng = new_rng(seed, STREAM_EPOCH, epoch)
        return [[b] for b in mix_epoch(per_label, sampler, rng)]

    train_loop(model, AdamState(model), cfg, plan)
    return model


def _lowresource_gain(seed, pre_steps=600, ft_steps=1000):
    split = toydata.transduction_split(seed)
    tok = train_bpe(split["mono_a"][:3000] + split["mono_b"][:3000], 220,
                    specials=[lang_tag("aa"), lang_tag("bb")])

    noise = NoiseConfig(mask_id=tok.vocab.mask_id)
    den, sizes = {}, {}
    for i, (lang, lines) in enumerate((("aa", split["mono_a"]),
                                       ("bb", split["mono_b"]))):
        rng = new_rng(seed, 11, i)
        exs = [build_denoising_example(tok, s, lang, noise, rng)
               for s in lines]
        den[f"denoise:{lang}"], _ = make_batches(exs, 4096,
                                                 label=f"denoise:{lang}")
        sizes[f"denoise:{lang}"] = len(exs)
    den_sampler = SamplerConfig(5.0, sizes)

    par_exs = [build_translation_example(tok, a, b, "bb")
               for a, b in split["train_pairs"]]
    par = {"aa-bb": make_batches(par_exs, 2048, label="aa-bb")[0]}
    par_sampler = SamplerConfig(1.0, {"aa-bb": len(par_exs)})

    mcfg = ModelConfig(vocab_size=len(tok.vocab), hidden=64, ffn=128,
                       heads=4, enc_layers=2, dec_layers=2, dropout=0.1,
                       max_len=64)

    baseline = _fit(init_model(mcfg, new_rng(seed, 0)),
                    par, par_sampler, ft_steps, seed)
    b_base = _dev_bleu(baseline, tok, split["dev_pairs"])

    pretrained = _fit(init_model(mcfg, new_rng(seed, 0)),
                      den, den_sampler, pre_steps, seed + 1000)
    pretrained = _fit(pretrained, par, par_sampler, ft_steps, seed)
    b_pre = _dev_bleu(pretrained, tok, split["dev_pairs"])
    return b_base, b_pre


def test_criterion_03_pretraining_helps():
    t0 = time.monotonic()
    results = [_lowresource_gain(seed) for seed in (0, 1, 2)]
    gains = [pre - base for base, pre in results]
    med = float(np.median(gains))
    dt = time.monotonic() - t0
    detail = ", ".join(f"seed{s}: {b:.1f}->{p:.1f}"
                       for s, (b, p) in enumerate(results))
    report(3, "pre-training helps", med >= 2.0 and dt < 1800,
           f"{detail}; median gain {med:+.2f} >= +2; {dt:.0f}s < 1800s")


# ---------------------------------------------------------------------------
# 4. wait-k causality
# ---------------------------------------------------------------------------

def test_criterion_04_wait_k():
    t0 = time.monotonic()
    rng = new_rng(88)
    # mask oracle: target step t (1-based) may read source positions
    # 0..k+t-2 only; the additive mask is 0 there and -inf beyond
    for _ in range(200):
        k = int(rng.integers(1, 9))
        S = int(rng.integers(2, 15))
        T = int(rng.integers(1, 12))
        mask = build_wait_k_cross_mask(k, S, T)
        assert mask.shape == (T, S)
        for t in range(T):
            visible = min(k + t, S)       # row t is step t+1
            assert np.all(mask[t, :visible] == 0.0)
            assert np.all(np.isneginf(mask[t, visible:]))

    # attention mass through a real forward: zero beyond the boundary
    cfg = ModelConfig(**BASE)
    model = init_model(cfg, new_rng(3))
    batch = toy_batch(new_rng(4), vocab=cfg.vocab_size)
    with ag.no_grad():
        out = model.forward(batch, wait_k=2)
    T_len = batch.tgt_in.shape[1]
    S_len = batch.src.shape[1]
    for layer in out.dec_cross_attn:
        probs = layer.data       # [B, heads, T, S]
        for t in range(T_len):
            beyond = probs[:, :, t, min(2 + t, S_len):]
            assert float(np.abs(beyond).max() if beyond.size else 0.0) == 0.0

    # streaming decode ignores source tokens it has not been shown yet
    k = 2
    src_rng = new_rng(9)
    bc = BeamConfig(beam=1, max_len=8, k=k)
    mismatches = 0
    for _ in range(20):
        n = int(src_rng.integers(5, 9))
        body = [int(x) for x in src_rng.integers(6, cfg.vocab_size, size=n)]
        src = body + [EOS_ID, 5]
        base = wait_k_decode(model, src, k, bc)
        p = int(src_rng.integers(k, n))          # mutate positions p..n-1
        mut = list(src)
        for j in range(p, n):
            mut[j] = int(src_rng.integers(6, cfg.vocab_size))
        alt = wait_k_decode(model, mut, k, bc)
        keep = max(0, p - k + 1)                 # steps t <= p-k+1 saw only src[:p]
        if base.tokens[:keep] != alt.tokens[:keep]:
            mismatches += 1
    dt = time.monotonic() - t0
    report(4, "wait-k causality", mismatches == 0 and dt < 60,
           f"200 mask configs exact, cross-attention mass zero beyond k+t-1, "
           f"{mismatches} prefix mismatches under suffix mutation; {dt:.0f}s < 60s")


# ---------------------------------------------------------------------------
# 5. data-parallel equivalence
# ---------------------------------------------------------------------------

def test_criterion_05_data_parallel():
    t0 = time.monotonic()
    worst = 0.0
    for workers in (2, 4):
        cfg = ModelConfig(**{**BASE, "dropout": 0.0})
        rng = new_rng(20 + workers)
        # equal-token shards: every example the same length
        exs = toydata.copy_examples(8 * workers, vocab_size=cfg.vocab_size,
                                    seed=workers, min_len=6, max_len=6)
        shard_size = len(exs) // workers
        shards = [pad_batch(exs[i * shard_size:(i + 1) * shard_size])
                  for i in range(workers)]
        combined = pad_batch(exs)

        tcfg = TrainConfig(max_steps=10, peak_lr=0.01, warmup=5,
                           label_smoothing=0.1, seed=1, num_workers=workers)
        m_multi = init_model(cfg, new_rng(6))
        m_single = m_multi.copy()
        train_step(m_multi, shards, AdamState(m_multi), tcfg, step=1)
        single_cfg = TrainConfig(max_steps=10, peak_lr=0.01, warmup=5,
                                 label_smoothing=0.1, seed=1, num_workers=1)
        train_step(m_single, [combined], AdamState(m_single), single_cfg,
                   step=1)
        for name in m_multi.params:
            diff = float(np.abs(m_multi.params[name].data
                                - m_single.params[name].data).max())
            worst = max(worst, diff)
    dt = time.monotonic() - t0
    report(5, "data-parallel equivalence", worst <= 1e-5 and dt < 120,
           f"max param diff {worst:.2e} <= 1e-5 for W in {{2,4}}; {dt:.0f}s < 120s")


# ---------------------------------------------------------------------------
# 6. distillation identities
# ---------------------------------------------------------------------------

def test_criterion_06_distillation_identities():
    t0 = time.monotonic()
    with ag.use_dtype(np.float64):
        cfg = ModelConfig(**BASE)
        teacher = init_model(cfg, new_rng(12))
        student = teacher.copy()
        batch = toy_batch(new_rng(13), vocab=cfg.vocab_size)
        dcfg = DistillConfig(w_ce=0.0, w_logit=1.0, w_hidden=1.0, w_attn=1.0,
                             temperature=1.0)
        loss, parts = combined_loss(batch, teacher, student, dcfg)
        zeros = max(abs(parts["logit"]), abs(parts["hidden"]),
                    abs(parts["attn"]))

        # V=2 hand case: teacher (ln 3, 0), student (0, 0), tau=1
        t_log = Tensor(np.array([[math.log(3.0), 0.0]]))
        s_log = Tensor(np.array([[0.0, 0.0]]), requires_grad=True)
        hand = float(logit_distill_loss(t_log, s_log).data)
        hand_want = 0.75 * math.log(1.5) + 0.25 * math.log(0.5)

        # teacher must receive no gradient from the combined objective
        teacher.zero_grad()
        student.zero_grad()
        loss2, _ = combined_loss(batch, teacher, student,
                                 DistillConfig(w_ce=1.0, w_logit=1.0))
        loss2.backward()
        t_grad = max((0.0 if t.grad is None else float(np.abs(t.grad).max()))
                     for t in teacher.params.values())
    dt = time.monotonic() - t0
    ok = zeros < 1e-7 and abs(hand - hand_want) < 1e-6 \
        and abs(hand - 0.13082) < 1e-5 and t_grad == 0.0
    report(6, "distillation identities", ok,
           f"self-distillation losses {zeros:.1e} < 1e-7; hand KL {hand:.5f} "
           f"vs {hand_want:.5f}; teacher grad {t_grad}; {dt:.0f}s")


# ---------------------------------------------------------------------------
# 8. search correctness
# ---------------------------------------------------------------------------

def test_criterion_08_search():
    t0 = time.monotonic()
    bc = BeamConfig(beam=4, alpha=1.0, max_len=4)
    exact = 0
    score_gap = 0.0
    for seed in range(20):
        model = TableModel(vocab=5, seed=seed)
        hyp = beam_search(model, [1, 2, 4], bc)[0]
        best = enumerate_best(model, 4, bc)
        if hyp.tokens == best[1] and abs(hyp.score - best[0]) < 1e-9:
            exact += 1
        rescored = score_pair(model, [1, 2, 4],
                              hyp.tokens + ([RIG_EOS] if hyp.finished else []))
        score_gap = max(score_gap, abs(rescored - hyp.logprob))

    cfg = ModelConfig(**BASE)
    agree = 0
    rng = new_rng(77)
    models = [init_model(cfg, new_rng(s)) for s in (1, 2)]
    for i in range(100):
        model = models[i % 2]
        n = int(rng.integers(3, 9))
        src = [int(x) for x in rng.integers(6, cfg.vocab_size, size=n)] \
            + [EOS_ID, 5]
        g = greedy_decode(model, src, BeamConfig(beam=1, max_len=10))
        b = beam_search(model, src, BeamConfig(beam=1, max_len=10))[0]
        if g.tokens == b.tokens and g.finished == b.finished:
            agree += 1
    dt = time.monotonic() - t0
    report(8, "search correctness",
           exact == 20 and agree == 100 and score_gap < 1e-5,
           f"beam=4 matched enumeration {exact}/20; beam=1==greedy "
           f"{agree}/100; re-score gap {score_gap:.1e} < 1e-5; {dt:.0f}s")


# ---------------------------------------------------------------------------
# 9. BLEU oracle
# ---------------------------------------------------------------------------

def test_criterion_09_bleu_oracle():
    t0 = time.monotonic()
    worst = 0.0
    for (hyps, refs), want in CASES:
        got = corpus_bleu(hyps, refs)
        worst = max(worst, abs(got - want), abs(got - oracle_bleu(hyps, refs)))
    identical = corpus_bleu(["the cat sat on the mat", "b c d"],
                            ["the cat sat on the mat", "b c d"])
    dt = time.monotonic() - t0
    report(9, "BLEU oracle", worst < 1e-6 and identical == 100.0,
           f"{len(CASES)} cases, worst diff {worst:.1e} < 1e-6; "
           f"identical corpora {identical}; {dt:.0f}s")


# ---------------------------------------------------------------------------
# 10. transfer fidelity
# ---------------------------------------------------------------------------

class _FakeVocab:
    def __init__(self, tokens):
        self.id_to_token = list(tokens)


def test_criterion_10_transfer():
    t0 = time.monotonic()
    cfg = ModelConfig(**BASE)
    source = init_model(cfg, new_rng(40))
    target = apply_transfer(source, cfg, identity_map(), new_rng(41))
    rng = new_rng(42)
    exact = True
    for _ in range(20):
        n = int(rng.integers(3, 8))
        src = [int(x) for x in rng.integers(6, cfg.vocab_size, size=n)] \
            + [EOS_ID, 5]
        a = greedy_decode(source, src, BeamConfig(beam=1, max_len=10))
        b = greedy_decode(target, src, BeamConfig(beam=1, max_len=10))
        exact = exact and a.tokens == b.tokens and a.finished == b.finished

    # 1k-token vocab remap: shared subwords keep their rows bitwise
    specials = ["<pad>", "<unk>", "<s>", "</s>", "<mask>"]
    old_tokens = specials + [f"tok{i}" for i in range(995)]
    keep = [f"tok{i}" for i in range(0, 995, 2)]
    new_tokens = specials + keep + [f"new{i}" for i in range(995 - len(keep))]
    old_matrix = new_rng(43).normal(0, 1, (1000, 16)).astype(np.float32)
    new_matrix = remap_embeddings(_FakeVocab(old_tokens),
                                  _FakeVocab(new_tokens), old_matrix,
                                  new_rng(44))
    shared_ok = all(
        np.array_equal(new_matrix[i], old_matrix[old_tokens.index(tok)])
        for i, tok in enumerate(new_tokens) if tok in set(old_tokens))
    n_shared = sum(1 for tok in new_tokens if tok in set(old_tokens))
    dt = time.monotonic() - t0
    report(10, "transfer fidelity", exact and shared_ok,
           f"identity transfer token-exact on 20 inputs; {n_shared} shared "
           f"rows bitwise in 1000-token remap; {dt:.0f}s")


# ---------------------------------------------------------------------------
# 11. checkpoint round-trip and resume
# ---------------------------------------------------------------------------

def test_criterion_11_checkpoint_resume(tmp_path):
    t0 = time.monotonic()
    cfg = ModelConfig(vocab_size=20, hidden=32, ffn=64, heads=2,
                      enc_layers=1, dec_layers=1, dropout=0.1, max_len=32)
    exs = toydata.copy_examples(60, vocab_size=20, seed=9)
    batches, _ = make_batches(exs, 256, label="copy")

    def plan(epoch):
        order = new_rng(3, STREAM_EPOCH, epoch).permutation(len(batches))
        return [[batches[int(i)]] for i in order]

    def tc(steps):
        return TrainConfig(max_steps=steps, peak_lr=0.002, warmup=50, seed=3)

    # bit-identical round trip
    model = init_model(cfg, new_rng(30))
    opt = AdamState(model)
    state = train_loop(model, opt, tc(100), plan)
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    ckpt.save_model(str(p1), model, opt, {"train_state": state.to_dict()})
    loaded, opt_arrays, meta = ckpt.load_model(str(p1))
    bitwise = all(np.array_equal(loaded.params[n].data, model.params[n].data)
                  for n in model.params)
    ckpt.save_model(str(p2), loaded,
                    AdamState.from_arrays(loaded, opt_arrays,
                                          meta["opt_step"]),
                    {"train_state": meta["train_state"]})
    bytes_equal = p1.read_bytes() == p2.read_bytes()

    # interrupted + resumed matches the straight 600-step run
    straight = init_model(cfg, new_rng(30))
    s_opt = AdamState(straight)
    train_loop(straight, s_opt, tc(600), plan)

    resumed, r_opt, r_state = resume_from(str(p1))
    train_loop(resumed, r_opt, tc(600), plan, state=r_state)
    worst = max(float(np.abs(resumed.params[n].data
                             - straight.params[n].data).max())
                for n in straight.params)
    dt = time.monotonic() - t0
    report(11, "checkpoint round-trip and resume",
           bitwise and bytes_equal and worst <= 1e-6,
           f"round trip bitwise={bitwise}, bytes equal={bytes_equal}, "
           f"resume diff {worst:.1e} <= 1e-6 after 500 further steps; {dt:.0f}s")
