"""Single command-line entry point.

Subcommands mirror the toolkit surface: create-tokenizer, pretrain, train,
distill, seqdistill, decode, score, extract, bleu. Training commands write
a manifest.json (resolved flags, seed, input hashes) into the output
directory before the first step; replaying the recorded argv reproduces
the run. SEQFORGE_SEED in the environment overrides --seed everywhere.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import checkpoint as ckpt
from .autograd import new_rng
from .corpus import (NoiseConfig, SamplerConfig, build_denoising_document,
                     build_denoising_example, build_translation_example,
                     make_batches, mix_epoch, read_documents, read_lines)
from .decode import (BeamConfig, beam_search, dump_records, extract,
                     greedy_decode, masked_input_decode, score_pair,
                     wait_k_decode)
from .distill import DistillConfig, combined_loss, sequence_distill
from .metrics import corpus_bleu
from .model import ModelConfig, TransformerModel, init_model
from .tokenizer import EOS, SubwordModel, lang_tag, train_bpe
from .train import (STREAM_DROPOUT, STREAM_EPOCH, AdamState, TrainConfig,
                    TrainState, adam_update, evaluate_and_checkpoint, lr_at,
                    train_loop)
from .transfer import apply_transfer, identity_map, parse_transfer_map

MODEL_DEFAULTS = {
    "hidden": 128, "ffn": 256, "heads": 4, "enc_layers": 2, "dec_layers": 2,
    "unique_enc_layers": 0, "unique_dec_layers": 0, "dropout": 0.1,
    "max_len": 256, "tie_embeddings": True, "multi_layer_softmax": False,
    "unidirectional_encoder": False, "wait_k_train": None,
    "context_mode": "none",
}


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

def file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(args, input_paths):
    """Recorded before the first training step; `replay` re-dispatches the
    stored argv, which reproduces single-worker runs bit-exactly."""
    os.makedirs(args.out, exist_ok=True)
    flags = {k: v for k, v in vars(args).items()
             if k not in ("func", "argv") and not k.startswith("_")}
    manifest = {
        "command": args.argv[0],
        "argv": list(args.argv),
        "flags": flags,
        "seed": args.seed,
        "inputs": {p: file_hash(p) for p in input_paths if p},
        "out": args.out,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    path = os.path.join(args.out, "manifest.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def replay(manifest_path):
    with open(manifest_path, encoding="utf-8") as f:
        manifest = json.load(f)
    return dispatch(manifest["argv"])


def add_model_flags(p):
    g = p.add_argument_group("model")
    g.add_argument("--hidden", type=int, help="model width (source config or 128)")
    g.add_argument("--ffn", type=int, help="feed-forward width (source config or 256)")
    g.add_argument("--heads", type=int, help="attention heads (source config or 4)")
    g.add_argument("--enc-layers", type=int, help="encoder depth (source config or 2)")
    g.add_argument("--dec-layers", type=int, help="decoder depth (source config or 2)")
    g.add_argument("--unique-enc-layers", type=int,
                   help="distinct encoder layer parameter sets; 0 = all distinct (default 0)")
    g.add_argument("--unique-dec-layers", type=int,
                   help="distinct decoder layer parameter sets; 0 = all distinct (default 0)")
    g.add_argument("--dropout", type=float, help="dropout rate (source config or 0.1)")
    g.add_argument("--model-max-len", type=int, dest="model_max_len",
                   help="positional table length (source config or 256)")
    g.add_argument("--untied-embeddings", action="store_true", default=None,
                   help="separate output projection instead of tied embeddings")
    g.add_argument("--multi-layer-softmax", action="store_true", default=None,
                   help="train the output loss from every decoder layer")
    g.add_argument("--unidirectional-encoder", action="store_true", default=None,
                   help="left-to-right encoder self-attention")
    g.add_argument("--wait-k", dest="wait_k",
                   help="wait-k training: one integer or comma list to sample from")
    g.add_argument("--context-mode", choices=["none", "decoder_combination",
                                              "encoder_gate"],
                   help="document/multi-source context integration (default none)")


def parse_wait_k(text):
    if text is None:
        return None
    parts = [int(x) for x in str(text).split(",") if x != ""]
    if not parts:
        return None
    return parts[0] if len(parts) == 1 else parts


def resolve_model_config(args, vocab_size, base_cfg=None):
    base = dict(MODEL_DEFAULTS) if base_cfg is None else base_cfg.to_dict()
    base.pop("vocab_size", None)
    overrides = {
        "hidden": args.hidden, "ffn": args.ffn, "heads": args.heads,
        "enc_layers": args.enc_layers, "dec_layers": args.dec_layers,
        "unique_enc_layers": args.unique_enc_layers,
        "unique_dec_layers": args.unique_dec_layers,
        "dropout": args.dropout, "max_len": args.model_max_len,
        "multi_layer_softmax": args.multi_layer_softmax,
        "unidirectional_encoder": args.unidirectional_encoder,
        "context_mode": args.context_mode,
    }
    for key, value in overrides.items():
        if value is not None:
            base[key] = value
    if args.untied_embeddings:
        base["tie_embeddings"] = False
    if args.wait_k is not None:
        base["wait_k_train"] = parse_wait_k(args.wait_k)
    return ModelConfig(vocab_size=vocab_size, **base)


def add_train_flags(p, budget):
    g = p.add_argument_group("training")
    g.add_argument("--steps", type=int, required=True, help="optimizer steps to run")
    g.add_argument("--peak-lr", type=float, default=0.001)
    g.add_argument("--warmup", type=int, default=16000)
    g.add_argument("--label-smoothing", type=float, default=0.1)
    g.add_argument("--token-budget", type=int, default=budget,
                   help="padded tokens per batch")
    g.add_argument("--workers", type=int, default=1,
                   help="simulated data-parallel workers (gradients averaged)")
    g.add_argument("--eval-every", type=int, default=1000)
    g.add_argument("--seed", type=int, default=1234)
    g.add_argument("--out", required=True, help="checkpoint/manifest directory")


def load_tokenizer(path):
    return SubwordModel.load(path)


def load_checkpoint_model(path):
    model, opt_arrays, meta = ckpt.load_model(path)
    return model, opt_arrays, meta


def group_batches(batches, workers):
    """Chunk an epoch's batches into groups of `workers`; a too-short epoch
    cycles so at least one full group exists."""
    if workers == 1:
        return [[b] for b in batches]
    groups = [batches[i:i + workers]
              for i in range(0, len(batches) - workers + 1, workers)]
    if not groups and batches:
        reps = (workers + len(batches) - 1) // len(batches)
        groups = [(batches * reps)[:workers]]
    return groups


def make_bleu_eval(tok, dev_src, dev_ref, tgt_lang, direction, beam, max_len):
    tag = lang_tag(tgt_lang)
    cfg = BeamConfig(beam=max(beam, 1), max_len=max_len)

    def eval_fn(model):
        hyps = []
        for line in dev_src:
            ids = tok.encode(line, append=[EOS, tag])
            if cfg.beam == 1:
                hyp = greedy_decode(model, ids, cfg)
            else:
                hyp = beam_search(model, ids, cfg)[0]
            hyps.append(tok.decode(hyp.tokens, keep_specials=False))
        return {direction: corpus_bleu(hyps, dev_ref)}
    return eval_fn


def parse_lang_files(specs):
    """--mono LANG:PATH occurrences -> ordered (lang, path) list."""
    out = []
    for spec in specs or []:
        lang, sep, path = spec.partition(":")
        if not sep or not lang or not path:
            raise ValueError(f"expected LANG:PATH, got {spec!r}")
        out.append((lang, path))
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_create_tokenizer(args):
    lines = []
    for path in args.input:
        lines.extend(read_lines(path))
    specials = [lang_tag(l) for l in args.langs.split(",")] if args.langs else []
    model = train_bpe(lines, args.vocab_size, specials=specials)
    model.save(args.output)
    print(f"tokenizer: {len(model.vocab)} tokens, {len(model.merges)} merges "
          f"-> {args.output}")
    return 0


def _denoise_batches(tok, args):
    noise = NoiseConfig(mask_id=tok.vocab.mask_id,
                        mask_fraction=args.mask_fraction,
                        span_lambda=args.span_lambda,
                        permute_sentences=args.permute_sentences)
    per_label = {}
    sizes = {}
    for i, (lang, path) in enumerate(parse_lang_files(args.mono)):
        rng = new_rng(args.seed, 11, i)
        if args.permute_sentences:
            examples = []
            for doc in read_documents(path):
                examples.extend(build_denoising_document(tok, doc, lang, noise, rng))
        else:
            examples = [build_denoising_example(tok, line, lang, noise, rng)
                        for line in read_lines(path) if line.strip()]
        label = f"denoise:{lang}"
        batches, skipped = make_batches(examples, args.token_budget, label=label)
        if skipped:
            print(f"{label}: skipped {skipped} over-budget sentences")
        per_label[label] = batches
        sizes[label] = len(examples)
    if not per_label:
        raise ValueError("no monolingual corpora given (use --mono LANG:PATH)")
    return per_label, SamplerConfig(args.sampling_temperature, sizes)


def cmd_pretrain(args):
    tok = load_tokenizer(args.tokenizer)
    per_label, sampler = _denoise_batches(tok, args)
    cfg = resolve_model_config(args, len(tok.vocab))
    model = init_model(cfg, new_rng(args.seed, 0))
    write_manifest(args, [args.tokenizer] + [p for _, p in parse_lang_files(args.mono)])

    tcfg = TrainConfig(max_steps=args.steps, peak_lr=args.peak_lr,
                       warmup=args.warmup, label_smoothing=args.label_smoothing,
                       seed=args.seed, num_workers=args.workers,
                       eval_every=args.eval_every)

    def epoch_plan(epoch):
        rng = new_rng(args.seed, STREAM_EPOCH, epoch)
        return group_batches(mix_epoch(per_label, sampler, rng), args.workers)

    opt = AdamState(model)
    train_loop(model, opt, tcfg, epoch_plan, out_dir=args.out, log=print)
    print(f"done: {args.steps} steps -> {os.path.join(args.out, 'last.ckpt')}")
    return 0


def _init_train_model(args, tok):
    """Fresh init, plain checkpoint load, or mapped transfer."""
    if not args.init_from:
        cfg = resolve_model_config(args, len(tok.vocab))
        return init_model(cfg, new_rng(args.seed, 0))
    source, _, _ = load_checkpoint_model(args.init_from)
    cfg = resolve_model_config(args, len(tok.vocab), base_cfg=source.cfg)
    tmap = identity_map()
    if args.transfer_map:
        with open(args.transfer_map, encoding="utf-8") as f:
            tmap = parse_transfer_map(f.read())
    source_vocab = tok.vocab
    if args.source_tokenizer:
        source_vocab = load_tokenizer(args.source_tokenizer).vocab
    return apply_transfer(source, cfg, tmap, new_rng(args.seed, 12),
                          source_vocab=source_vocab, target_vocab=tok.vocab)


def cmd_train(args):
    tok = load_tokenizer(args.tokenizer)
    src_lines = read_lines(args.src)
    tgt_lines = read_lines(args.tgt)
    if len(src_lines) != len(tgt_lines):
        raise ValueError(f"parallel files differ: {len(src_lines)} vs {len(tgt_lines)} lines")
    ctx_lines = read_lines(args.ctx) if args.ctx else [None] * len(src_lines)
    examples = [build_translation_example(tok, s, t, args.tgt_lang, ctx)
                for s, t, ctx in zip(src_lines, tgt_lines, ctx_lines)]
    direction = f"{args.src_lang}-{args.tgt_lang}"
    batches, skipped = make_batches(examples, args.token_budget, label=direction)
    if skipped:
        print(f"{direction}: skipped {skipped} over-budget pairs")
    per_label = {direction: batches}
    sizes = {direction: len(examples)}
    if args.mono:
        dn_args = args
        mono_labels, mono_sampler = _denoise_batches(tok, dn_args)
        per_label.update(mono_labels)
        sizes.update(mono_sampler.sizes)
    sampler = SamplerConfig(args.sampling_temperature, sizes)

    model = _init_train_model(args, tok)
    inputs = [args.tokenizer, args.src, args.tgt, args.ctx, args.init_from,
              args.transfer_map, args.dev_src, args.dev_tgt]
    write_manifest(args, inputs)

    tcfg = TrainConfig(max_steps=args.steps, peak_lr=args.peak_lr,
                       warmup=args.warmup, label_smoothing=args.label_smoothing,
                       seed=args.seed, num_workers=args.workers,
                       eval_every=args.eval_every, loss_mix=args.loss_mix)

    def epoch_plan(epoch):
        rng = new_rng(args.seed, STREAM_EPOCH, epoch)
        return group_batches(mix_epoch(per_label, sampler, rng), args.workers)

    eval_fn = None
    if args.dev_src and args.dev_tgt:
        eval_fn = make_bleu_eval(tok, read_lines(args.dev_src),
                                 read_lines(args.dev_tgt), args.tgt_lang,
                                 direction, args.dev_beam, args.dev_max_len)
    opt = AdamState(model)
    train_loop(model, opt, tcfg, epoch_plan, eval_fn=eval_fn,
               out_dir=args.out, log=print)
    print(f"done: {args.steps} steps -> {os.path.join(args.out, 'last.ckpt')}")
    return 0


def parse_layer_map(text):
    if not text:
        return None
    pairs = []
    for part in text.split(","):
        t, sep, s = part.partition(":")
        if not sep:
            raise ValueError(f"layer map entries are TEACHER:STUDENT, got {part!r}")
        pairs.append((int(t), int(s)))
    return pairs


def cmd_distill(args):
    tok = load_tokenizer(args.tokenizer)
    teacher, _, _ = load_checkpoint_model(args.teacher)
    if args.student_init:
        student, _, _ = load_checkpoint_model(args.student_init)
    else:
        student = init_model(resolve_model_config(args, len(tok.vocab)),
                             new_rng(args.seed, 0))
    src_lines = read_lines(args.src)
    tgt_lines = read_lines(args.tgt)
    if len(src_lines) != len(tgt_lines):
        raise ValueError(f"parallel files differ: {len(src_lines)} vs {len(tgt_lines)} lines")
    examples = [build_translation_example(tok, s, t, args.tgt_lang)
                for s, t in zip(src_lines, tgt_lines)]
    direction = f"{args.src_lang}-{args.tgt_lang}"
    batches, _ = make_batches(examples, args.token_budget, label=direction)
    write_manifest(args, [args.tokenizer, args.teacher, args.student_init,
                          args.src, args.tgt, args.dev_src, args.dev_tgt])

    dcfg = DistillConfig(w_ce=args.w_ce, w_logit=args.w_logit,
                         w_hidden=args.w_hidden, w_attn=args.w_attn,
                         temperature=args.temperature,
                         layer_map=parse_layer_map(args.layer_map),
                         label_smoothing=args.label_smoothing)
    eval_fn = None
    if args.dev_src and args.dev_tgt:
        eval_fn = make_bleu_eval(tok, read_lines(args.dev_src),
                                 read_lines(args.dev_tgt), args.tgt_lang,
                                 direction, args.dev_beam, args.dev_max_len)

    opt = AdamState(student)
    state = TrainState()
    t0 = time.monotonic()
    step = 0
    while step < args.steps:
        plan_rng = new_rng(args.seed, STREAM_EPOCH, state.epoch)
        order = plan_rng.permutation(len(batches))
        for idx in order:
            if step >= args.steps:
                break
            step += 1
            student.zero_grad()
            rng = new_rng(args.seed, STREAM_DROPOUT, step)
            loss, parts = combined_loss(batches[int(idx)], teacher, student,
                                        dcfg, train=True, rng=rng)
            loss.backward()
            # feature-only objectives leave some params untouched; zero-fill
            grads = {n: (t.grad if t.grad is not None else np.zeros_like(t.data))
                     for n, t in student.params.items()}
            adam_update(student, grads, opt,
                        lr_at(step, args.peak_lr, args.warmup))
            state.step = step
            if step % 50 == 0 or step == args.steps:
                parts_txt = " ".join(f"{k}={v:.4f}" for k, v in parts.items() if v)
                print(f"step={step} loss={float(loss.data):.4f} "
                      f"lr={lr_at(step, args.peak_lr, args.warmup):.6g} {parts_txt}")
            if eval_fn and step % args.eval_every == 0:
                scores = eval_fn(student)
                evaluate_and_checkpoint(student, opt, state, scores, args.out,
                                        log=print)
        state.epoch += 1
    os.makedirs(args.out, exist_ok=True)
    ckpt.save_model(os.path.join(args.out, "last.ckpt"), student, opt,
                    {"train_state": state.to_dict()})
    print(f"done: {args.steps} steps in {time.monotonic() - t0:.1f}s "
          f"-> {os.path.join(args.out, 'last.ckpt')}")
    return 0


def cmd_seqdistill(args):
    tok = load_tokenizer(args.tokenizer)
    teacher, _, _ = load_checkpoint_model(args.teacher)
    tag = lang_tag(args.tgt_lang)
    lines = read_lines(args.input)
    sources = [tok.encode(line, append=[EOS, tag]) for line in lines]
    bc = BeamConfig(beam=args.beam, alpha=args.length_penalty, max_len=args.max_len)
    targets, failures = sequence_distill(teacher, sources, bc,
                                         log=lambda m: print(m, file=sys.stderr))
    with open(args.output, "w", encoding="utf-8") as f:
        for ids in targets:
            f.write(tok.decode(ids, keep_specials=False) + "\n")
    print(f"decoded {len(lines)} lines ({failures} failures) -> {args.output}")
    return 0


def parse_spans(text):
    spans = []
    for part in text.split(","):
        a, sep, b = part.partition(":")
        if not sep:
            raise ValueError(f"spans are START:END, got {part!r}")
        spans.append((int(a), int(b)))
    return spans


def cmd_decode(args):
    tok = load_tokenizer(args.tokenizer)
    model, _, _ = load_checkpoint_model(args.model)
    tag = lang_tag(args.tgt_lang)
    bc = BeamConfig(beam=args.beam, alpha=args.length_penalty, max_len=args.max_len)
    out = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    try:
        for line in read_lines(args.input):
            ids = tok.encode(line, append=[EOS, tag])
            if args.wait_k is not None:
                hyp = wait_k_decode(model, ids, args.wait_k, bc)
            elif args.mask_spans:
                hyp = masked_input_decode(model, ids, parse_spans(args.mask_spans),
                                          bc, mask_id=tok.vocab.mask_id)[0]
            elif args.beam == 1:
                hyp = greedy_decode(model, ids, bc)
            else:
                hyp = beam_search(model, ids, bc)[0]
            out.write(tok.decode(hyp.tokens, keep_specials=False) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_score(args):
    tok = load_tokenizer(args.tokenizer)
    model, _, _ = load_checkpoint_model(args.model)
    tag = lang_tag(args.tgt_lang)
    src_lines = read_lines(args.src)
    tgt_lines = read_lines(args.tgt)
    if len(src_lines) != len(tgt_lines):
        raise ValueError(f"parallel files differ: {len(src_lines)} vs {len(tgt_lines)} lines")
    for s, t in zip(src_lines, tgt_lines):
        src_ids = tok.encode(s, append=[EOS, tag])
        tgt_ids = tok.encode(t, append=[EOS])
        print(f"{score_pair(model, src_ids, tgt_ids, normalize=args.normalize):.6f}")
    return 0


def cmd_extract(args):
    tok = load_tokenizer(args.tokenizer)
    model, _, _ = load_checkpoint_model(args.model)
    tag = lang_tag(args.tgt_lang)
    what = tuple(args.what.split(","))
    layers = [int(x) for x in args.layers.split(",")] if args.layers else None
    tgt_lines = read_lines(args.tgt) if args.tgt else None
    out = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    try:
        for i, line in enumerate(read_lines(args.input)):
            src_ids = tok.encode(line, append=[EOS, tag])
            tgt_ids = tok.encode(tgt_lines[i]) if tgt_lines else None
            records = extract(model, src_ids, tgt_ids=tgt_ids, what=what,
                              layers=layers,
                              cfg=BeamConfig(max_len=args.max_len),
                              sentence_index=i)
            dump_records(records, out)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_bleu(args):
    score = corpus_bleu(read_lines(args.hyp), read_lines(args.ref))
    print(f"BLEU = {score:.2f}")
    return 0


# ---------------------------------------------------------------------------
# parser / dispatch
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="seqforge",
        description="Desk-scale multilingual seq2seq toolkit")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("create-tokenizer", help="train a subword vocabulary")
    p.add_argument("--input", nargs="+", required=True, help="text files")
    p.add_argument("--vocab-size", type=int, required=True)
    p.add_argument("--langs", help="comma list; adds a <2xx> tag per language")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_create_tokenizer)

    p = sub.add_parser("pretrain", help="denoising pre-training on monolingual text")
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--mono", action="append", metavar="LANG:PATH", required=True)
    p.add_argument("--mask-fraction", type=float, default=0.35)
    p.add_argument("--span-lambda", type=float, default=3.5)
    p.add_argument("--permute-sentences", action="store_true",
                   help="treat inputs as blank-line-separated documents and shuffle")
    p.add_argument("--sampling-temperature", type=float, default=5.0)
    add_model_flags(p)
    add_train_flags(p, budget=4096)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="supervised training / fine-tuning")
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--src-lang", required=True)
    p.add_argument("--tgt-lang", required=True)
    p.add_argument("--ctx", help="aligned context file (document/multi-source)")
    p.add_argument("--dev-src")
    p.add_argument("--dev-tgt")
    p.add_argument("--dev-beam", type=int, default=1)
    p.add_argument("--dev-max-len", type=int, default=64)
    p.add_argument("--init-from", help="checkpoint to start from")
    p.add_argument("--source-tokenizer",
                   help="tokenizer of --init-from when it differs")
    p.add_argument("--transfer-map",
                   help="file of TARGET_GLOB=SOURCE lines controlling transfer")
    p.add_argument("--mono", action="append", metavar="LANG:PATH",
                   help="mix denoising batches into training")
    p.add_argument("--loss-mix", type=float, default=1.0,
                   help="scale on the denoising loss when mixing")
    p.add_argument("--mask-fraction", type=float, default=0.35)
    p.add_argument("--span-lambda", type=float, default=3.5)
    p.add_argument("--permute-sentences", action="store_true")
    p.add_argument("--sampling-temperature", type=float, default=5.0)
    add_model_flags(p)
    add_train_flags(p, budget=2048)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("distill", help="teacher-student training")
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--student-init", help="checkpoint for the student (else fresh)")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--src-lang", required=True)
    p.add_argument("--tgt-lang", required=True)
    p.add_argument("--dev-src")
    p.add_argument("--dev-tgt")
    p.add_argument("--dev-beam", type=int, default=1)
    p.add_argument("--dev-max-len", type=int, default=64)
    p.add_argument("--w-ce", type=float, default=1.0)
    p.add_argument("--w-logit", type=float, default=0.0)
    p.add_argument("--w-hidden", type=float, default=0.0)
    p.add_argument("--w-attn", type=float, default=0.0)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--layer-map", help='pairs "TEACHER:STUDENT,..."')
    add_model_flags(p)
    add_train_flags(p, budget=2048)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("seqdistill",
                       help="teacher beam-decodes a corpus into synthetic targets")
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--tgt-lang", required=True)
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--length-penalty", type=float, default=1.0)
    p.add_argument("--max-len", type=int, default=64)
    p.set_defaults(func=cmd_seqdistill)

    p = sub.add_parser("decode", help="translate a file")
    p.add_argument("--model", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", help="default: stdout")
    p.add_argument("--tgt-lang", required=True)
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--length-penalty", type=float, default=1.0)
    p.add_argument("--max-len", type=int, default=64)
    p.add_argument("--wait-k", type=int, help="simultaneous decoding with this k")
    p.add_argument("--mask-spans", help='replace source spans "i:j,..." with <mask>')
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("score", help="forced-decoding log-probabilities")
    p.add_argument("--model", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--tgt-lang", required=True)
    p.add_argument("--normalize", action="store_true", help="per-token average")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("extract", help="dump states / attention maps")
    p.add_argument("--model", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--tgt", help="forced targets (else greedy)")
    p.add_argument("--tgt-lang", required=True)
    p.add_argument("--what", default="enc,dec,attn")
    p.add_argument("--layers", help='comma list, e.g. "0,2"')
    p.add_argument("--max-len", type=int, default=64)
    p.add_argument("--output", help="default: stdout")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("bleu", help="corpus BLEU of a hypothesis file")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.set_defaults(func=cmd_bleu)

    return parser


def dispatch(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help, 2 for usage errors
        return 0 if exc.code in (0, None) else 2
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 2
    if "SEQFORGE_SEED" in os.environ and hasattr(args, "seed"):
        args.seed = int(os.environ["SEQFORGE_SEED"])
    args.argv = list(argv)
    try:
        return int(args.func(args) or 0)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
