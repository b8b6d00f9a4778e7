"""Teacher-student compression.

Three representation-level losses (output distributions, hidden states,
attention maps), their weighted combination with the usual CE objective,
and sequence-level distillation where the teacher beam-decodes a corpus
to produce synthetic training targets.

The distribution losses use KL(teacher || student), which differs from
cross-entropy only by the teacher-entropy constant (identical gradients)
and is exactly zero under self-distillation. Hidden and attention losses
require matching hidden size / head count; there are no bridging
projections. Teacher outputs are computed without gradient tracking, so
only the student receives gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax as np_log_softmax

from . import autograd as ag
from .autograd import Tensor
from .decode import BeamConfig, beam_search
from .tokenizer import EOS_ID
from .train import output_loss

ATTENTION_KINDS = ("enc_self", "dec_self", "dec_cross")


@dataclass
class DistillConfig:
    w_ce: float = 1.0
    w_logit: float = 0.0
    w_hidden: float = 0.0
    w_attn: float = 0.0
    temperature: float = 1.0
    # (teacher layer, student layer) pairs, shared by the hidden and
    # attention losses; None picks a uniform-stride map per stack
    layer_map: list | None = None
    attention_kinds: tuple = ATTENTION_KINDS
    label_smoothing: float = 0.1

    def __post_init__(self):
        weights = (self.w_ce, self.w_logit, self.w_hidden, self.w_attn)
        if any(w < 0 for w in weights):
            raise ValueError("loss weights must be >= 0")
        if not any(w > 0 for w in weights):
            raise ValueError("at least one loss weight must be > 0")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        for kind in self.attention_kinds:
            if kind not in ATTENTION_KINDS:
                raise ValueError(f"unknown attention kind {kind!r}")
        if self.layer_map is not None:
            self.layer_map = [(int(t), int(s)) for t, s in self.layer_map]
            if any(t < 0 or s < 0 for t, s in self.layer_map):
                raise ValueError("layer map indices must be >= 0")


def default_layer_map(teacher_layers, student_layers):
    """Uniform-stride assignment: student layer j (1-based) learns from
    teacher layer ceil(j * Lt / Ls). Identity when depths are equal."""
    return [(math.ceil((j + 1) * teacher_layers / student_layers) - 1, j)
            for j in range(student_layers)]


def _check_map(layer_map, teacher_layers, student_layers, stack):
    for t, s in layer_map:
        if t >= teacher_layers or s >= student_layers:
            raise ValueError(
                f"layer map entry ({t}, {s}) out of range for {stack} "
                f"stacks of {teacher_layers} teacher / {student_layers} student layers")


def _detached(x):
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def logit_distill_loss(teacher_logits, student_logits, tau=1.0, pad_mask=None):
    """Mean over non-pad positions of KL(softmax(t/tau) || softmax(s/tau)),
    scaled by tau^2 so the gradient magnitude is temperature-independent
    near tau=1. Teacher side is treated as a constant."""
    t = _detached(teacher_logits)
    if not isinstance(student_logits, Tensor):
        student_logits = Tensor(student_logits)
    if t.shape != tuple(student_logits.shape):
        raise ValueError(f"logit shapes differ: teacher {t.shape}, "
                         f"student {tuple(student_logits.shape)}")
    if pad_mask is None:
        pad_mask = np.ones(t.shape[:-1], dtype=bool)
    mask = np.asarray(pad_mask, dtype=np.float64)
    n = max(float(mask.sum()), 1.0)

    lt = np_log_softmax(t / tau, axis=-1)
    pt = np.exp(lt)
    const = float(np.sum(np.sum(pt * lt, axis=-1) * mask))
    ls = ag.log_softmax(student_logits * (1.0 / tau), axis=-1)
    cross = ag.tsum(ag.mul(ag.tsum(ag.mul(ls, pt), axis=-1), mask))
    return (const - cross) * (tau * tau / n)


def hidden_mse_loss(teacher_states, student_states, layer_map, pad_mask):
    """Mean over mapped layer pairs, non-pad positions, and hidden units of
    the squared difference. One call covers one stack (one mask)."""
    mask = np.asarray(pad_mask, dtype=np.float64)
    total = None
    units = None
    for tl, sl in layer_map:
        t = _detached(teacher_states[tl])
        s = student_states[sl]
        if t.shape[-1] != s.shape[-1]:
            raise ValueError(f"hidden sizes differ: teacher {t.shape[-1]}, "
                             f"student {s.shape[-1]}")
        units = t.shape[-1]
        diff = s - t
        term = ag.tsum(ag.mul(ag.mul(diff, diff), mask[:, :, None]))
        total = term if total is None else total + term
    denom = max(len(layer_map) * float(mask.sum()) * units, 1.0)
    return total * (1.0 / denom)


def _row_kl(t_probs, s_probs, query_mask):
    """Sum over valid query rows and heads of KL(teacher row || student row)
    plus the number of rows counted. Columns where the teacher puts zero
    mass contribute nothing (0 log 0 = 0); the student is clamped to 1
    there so its own zeros at masked columns stay out of the log."""
    ind = (t_probs > 0).astype(np.float64)
    safe_t = np.where(t_probs > 0, t_probs, 1.0)
    const_rows = np.sum(t_probs * np.log(safe_t), axis=-1)        # [B, H, Tq]
    mask = np.asarray(query_mask, dtype=np.float64)[:, None, :]   # [B, 1, Tq]
    const = float(np.sum(const_rows * mask))
    s_safe = ag.mul(s_probs, ind) + (1.0 - ind)
    cross_rows = ag.tsum(ag.mul(ag.log(s_safe), t_probs), axis=-1)
    cross = ag.tsum(ag.mul(cross_rows, mask))
    n_rows = t_probs.shape[1] * float(np.sum(query_mask))
    return (const - cross), n_rows


def attention_distill_loss(teacher_attn, student_attn, layer_map, kinds,
                           query_masks):
    """Mean over mapped layer pairs, attention kinds, heads, and valid query
    rows of KL(teacher row || student row).

    teacher_attn / student_attn: {kind: [per-layer [B, heads, Tq, Tk]]};
    query_masks: {kind: bool [B, Tq]}. layer_map may be one list shared by
    every kind or a {kind: list} dict.
    """
    total = None
    count = 0.0
    for kind in kinds:
        lmap = layer_map[kind] if isinstance(layer_map, dict) else layer_map
        for tl, sl in lmap:
            t = _detached(teacher_attn[kind][tl])
            s = student_attn[kind][sl]
            if t.shape[1] != s.shape[1]:
                raise ValueError(f"head counts differ: teacher {t.shape[1]}, "
                                 f"student {s.shape[1]}")
            term, rows = _row_kl(t, s, query_masks[kind])
            total = term if total is None else total + term
            count += rows
    return total * (1.0 / max(count, 1.0))


# ---------------------------------------------------------------------------
# combined objective
# ---------------------------------------------------------------------------

def combined_loss(batch, teacher, student, cfg: DistillConfig, train=False,
                  rng=None):
    """w_ce*CE + w_logit*L_logit + w_hidden*L_hidden + w_attn*L_attn on one
    batch. Returns (loss tensor, parts) where parts holds the unweighted
    component values as floats. Zero-weight components are skipped, so
    their compatibility requirements only apply when actually used."""
    if cfg.w_logit > 0 and teacher.cfg.vocab_size != student.cfg.vocab_size:
        raise ValueError("output distillation needs equal vocabulary sizes")
    if cfg.w_hidden > 0 and teacher.cfg.hidden != student.cfg.hidden:
        raise ValueError("hidden-state distillation needs equal hidden sizes")
    if cfg.w_attn > 0 and teacher.cfg.heads != student.cfg.heads:
        raise ValueError("attention distillation needs equal head counts")

    with ag.no_grad():
        t_out = teacher.forward(batch)
    s_out = student.forward(batch, train=train, rng=rng)

    def stack_map(teacher_layers, student_layers, stack):
        lmap = cfg.layer_map or default_layer_map(teacher_layers, student_layers)
        _check_map(lmap, teacher_layers, student_layers, stack)
        return lmap

    parts = {"ce": 0.0, "logit": 0.0, "hidden": 0.0, "attn": 0.0}
    total = None

    def contribute(name, weight, term):
        nonlocal total
        parts[name] = float(term.data)
        weighted = term * weight
        total = weighted if total is None else total + weighted

    if cfg.w_ce > 0:
        contribute("ce", cfg.w_ce,
                   output_loss(student, s_out, batch.tgt_out, cfg.label_smoothing))
    if cfg.w_logit > 0:
        contribute("logit", cfg.w_logit,
                   logit_distill_loss(t_out.logits, s_out.logits,
                                      cfg.temperature, batch.tgt_mask))
    if cfg.w_hidden > 0:
        enc_map = stack_map(teacher.cfg.enc_layers, student.cfg.enc_layers, "encoder")
        dec_map = stack_map(teacher.cfg.dec_layers, student.cfg.dec_layers, "decoder")
        enc = hidden_mse_loss(t_out.enc_states, s_out.enc_states, enc_map,
                              batch.src_mask)
        dec = hidden_mse_loss(t_out.dec_states, s_out.dec_states, dec_map,
                              batch.tgt_mask)
        contribute("hidden", cfg.w_hidden, (enc + dec) * 0.5)
    if cfg.w_attn > 0:
        enc_map = stack_map(teacher.cfg.enc_layers, student.cfg.enc_layers, "encoder")
        dec_map = stack_map(teacher.cfg.dec_layers, student.cfg.dec_layers, "decoder")
        t_attn = {"enc_self": t_out.enc_self_attn, "dec_self": t_out.dec_self_attn,
                  "dec_cross": t_out.dec_cross_attn}
        s_attn = {"enc_self": s_out.enc_self_attn, "dec_self": s_out.dec_self_attn,
                  "dec_cross": s_out.dec_cross_attn}
        masks = {"enc_self": batch.src_mask, "dec_self": batch.tgt_mask,
                 "dec_cross": batch.tgt_mask}
        lmap = {"enc_self": enc_map, "dec_self": dec_map, "dec_cross": dec_map}
        contribute("attn", cfg.w_attn,
                   attention_distill_loss(t_attn, s_attn, lmap,
                                          cfg.attention_kinds, masks))
    return total, parts


# ---------------------------------------------------------------------------
# sequence-level distillation
# ---------------------------------------------------------------------------

def sequence_distill(teacher, sources, cfg: BeamConfig, eos_id=EOS_ID, log=None):
    """Beam-decode every source id sequence with the teacher, keeping the
    outputs aligned with the inputs. A line that fails to decode (for
    example an empty source) yields an empty target and bumps the failure
    count instead of aborting the run."""
    targets = []
    failures = 0
    for i, src in enumerate(sources):
        try:
            hyps = beam_search(teacher, src, cfg, eos_id=eos_id)
            if not hyps:
                raise RuntimeError("search returned no hypothesis")
            targets.append(list(hyps[0].tokens))
        except Exception as exc:
            failures += 1
            targets.append([])
            if log is not None:
                log(f"line {i}: decode failed: {exc}")
    return targets, failures
