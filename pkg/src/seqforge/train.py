"""Training loop: Adam with inverse-sqrt warmup, per-token loss
normalization, optional simulated data-parallel workers (gradient
averaging), periodic dev scoring with best-checkpoint tracking, and
deterministic resume.

Determinism contract: the batch plan for epoch e and every per-step rng
stream derive from (seed, purpose, index) only, so a run restarted from a
checkpoint replays the exact same trajectory.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import new_rng
from . import checkpoint as ckpt

# rng stream ids (second SeedSequence key)
STREAM_DROPOUT = 1
STREAM_WAITK = 2
STREAM_EPOCH = 3


@dataclass
class TrainConfig:
    max_steps: int
    peak_lr: float = 0.001
    warmup: int = 16000
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-9
    label_smoothing: float = 0.1
    seed: int = 1234
    num_workers: int = 1
    eval_every: int = 1000
    loss_mix: float = 1.0        # weight on denoising batches in joint training
    denoise_prefix: str = "denoise:"

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.num_workers < 1:
            raise ValueError("num_workers must be >= 1")
        if self.warmup < 1:
            raise ValueError("warmup must be >= 1")


def lr_at(step, peak, warmup):
    """Inverse square-root schedule: linear warmup to `peak` at `warmup`
    steps, then decay as sqrt(warmup / step). step is 1-based."""
    if step < 1:
        raise ValueError("step is 1-based")
    return peak * min(step / warmup, math.sqrt(warmup / step))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class AdamState:

    def __init__(self, model):
        self.m = {n: np.zeros_like(t.data) for n, t in model.params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in model.params.items()}
        self.t = 0

    @classmethod
    def from_arrays(cls, model, arrays, t):
        state = cls(model)
        for n in state.m:
            state.m[n] = np.array(arrays["m"][n], dtype=state.m[n].dtype)
            state.v[n] = np.array(arrays["v"][n], dtype=state.v[n].dtype)
        state.t = t
        return state


def adam_update(model, grads, state: AdamState, lr, beta1=0.9, beta2=0.98, eps=1e-9):
    """One bias-corrected Adam step in place. Raises on non-finite
    gradients rather than poisoning the parameters."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise RuntimeError(f"non-finite gradient in {name}; aborting update")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, t in model.params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        t.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# ---------------------------------------------------------------------------
# loss / gradients
# ---------------------------------------------------------------------------

def output_loss(model, out, tgt_out, smoothing):
    """Label-smoothed CE normalized per non-pad target token, computed from
    an existing forward output. With a multi-layer softmax the loss is the
    mean over the per-layer losses."""
    v = model.cfg.vocab_size
    targets = tgt_out.reshape(-1)

    def ce(logits):
        return ag.cross_entropy_label_smoothed(logits.reshape(-1, v), targets,
                                               smoothing=smoothing, pad_id=0)
    if model.cfg.multi_layer_softmax:
        losses = [ce(l) for l in out.per_layer_logits]
        loss = losses[0]
        for l in losses[1:]:
            loss = loss + l
        loss = loss * (1.0 / len(losses))
    else:
        loss = ce(out.logits)
    return loss


def batch_loss(model, batch, smoothing, train=False, rng=None, wait_k=None):
    out = model.forward(batch, train=train, rng=rng, wait_k=wait_k)
    loss = output_loss(model, out, batch.tgt_out, smoothing)
    n_tokens = int(np.sum(batch.tgt_out.reshape(-1) != 0))
    return loss, n_tokens


def pick_wait_k(model, cfg, step):
    wk = model.cfg.wait_k_train
    if isinstance(wk, list):
        rng = new_rng(cfg.seed, STREAM_WAITK, step)
        return int(wk[int(rng.integers(len(wk)))])
    return None     # fixed / off handled inside forward


def compute_gradients(model, batch, cfg: TrainConfig, step, worker=0):
    """Forward/backward on one batch; returns (loss value, grads, tokens)."""
    rng = new_rng(cfg.seed, STREAM_DROPOUT, step, worker)
    loss, n_tokens = batch_loss(model, batch, cfg.label_smoothing, train=True,
                                rng=rng, wait_k=pick_wait_k(model, cfg, step))
    if batch.label.startswith(cfg.denoise_prefix) and cfg.loss_mix != 1.0:
        loss = loss * cfg.loss_mix
    loss.backward()
    grads = {n: t.grad for n, t in model.params.items()}
    model_loss = float(loss.data)
    return model_loss, grads, n_tokens


def average_gradients(grad_dicts):
    """Plain mean over workers, name by name."""
    if len(grad_dicts) == 1:
        return grad_dicts[0]
    scale = 1.0 / len(grad_dicts)
    out = {}
    for name in grad_dicts[0]:
        acc = grad_dicts[0][name].copy()
        for gd in grad_dicts[1:]:
            acc += gd[name]
        out[name] = acc * scale
    return out


def train_step(model, group, opt, cfg: TrainConfig, step):
    """One optimizer step over a worker group of batches (len == workers).

    Each worker normalizes its loss per token; gradients are averaged,
    which matches the combined batch exactly when token counts agree."""
    grad_dicts = []
    losses = []
    tokens = 0
    for w, batch in enumerate(group):
        model.zero_grad()
        loss, grads, n = compute_gradients(model, batch, cfg, step, worker=w)
        grad_dicts.append({k: g.copy() for k, g in grads.items()} if len(group) > 1 else grads)
        losses.append(loss)
        tokens += n
    avg = average_gradients(grad_dicts)
    adam_update(model, avg, opt, lr_at(step, cfg.peak_lr, cfg.warmup),
                cfg.beta1, cfg.beta2, cfg.adam_eps)
    return float(np.mean(losses)), tokens


# ---------------------------------------------------------------------------
# dev scoring / best checkpoints
# ---------------------------------------------------------------------------

@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    cursor: int = 0
    best_scores: dict = field(default_factory=dict)
    best_avg: float = -math.inf

    def to_dict(self):
        return {"step": self.step, "epoch": self.epoch, "cursor": self.cursor,
                "best_scores": self.best_scores, "best_avg": self.best_avg}

    @classmethod
    def from_dict(cls, d):
        return cls(step=d["step"], epoch=d["epoch"], cursor=d["cursor"],
                   best_scores=dict(d["best_scores"]), best_avg=d["best_avg"])


def evaluate_and_checkpoint(model, opt, state: TrainState, scores: dict,
                            out_dir, metadata=None, log=None):
    """Track the best dev score per direction plus the best average; save a
    checkpoint file for each new best. Strict improvement only, so a tie
    keeps the earlier checkpoint. Returns the list of files written."""
    os.makedirs(out_dir, exist_ok=True)
    meta = dict(metadata or {})
    meta["train_state"] = state.to_dict()
    meta["dev_scores"] = scores
    written = []

    def save(tag):
        path = os.path.join(out_dir, f"best_{tag}.ckpt")
        ckpt.save_model(path, model, opt, meta)
        written.append(path)

    for direction, score in scores.items():
        if score > state.best_scores.get(direction, -math.inf):
            state.best_scores[direction] = score
            save(direction)
    if scores:
        avg = sum(scores.values()) / len(scores)
        if avg > state.best_avg:
            state.best_avg = avg
            save("avg")
    if log:
        log(f"eval step={state.step} " +
            " ".join(f"{d}={s:.2f}" for d, s in sorted(scores.items())))
    return written


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------

def train_loop(model, opt, cfg: TrainConfig, epoch_plan, state=None,
               eval_fn=None, out_dir=None, log=None, checkpoint_every=None):
    """Generic training driver.

    epoch_plan(epoch) -> list of worker groups (each a list of
    cfg.num_workers batches). Must be deterministic in `epoch` so that
    resuming from (epoch, cursor) replays the identical run.

    eval_fn(model) -> {direction: score}, called every cfg.eval_every steps
    when provided; new bests are checkpointed under out_dir. A rolling
    ``last.ckpt`` is written there as well.
    """
    state = state or TrainState()
    t0 = time.monotonic()
    tokens_done = 0
    while state.step < cfg.max_steps:
        plan = epoch_plan(state.epoch)
        if not plan:
            raise ValueError(f"epoch {state.epoch} produced no batches")
        while state.cursor < len(plan) and state.step < cfg.max_steps:
            group = plan[state.cursor]
            step = state.step + 1        # 1-based for the lr schedule
            loss, tokens = train_step(model, group, opt, cfg, step)
            state.step = step
            state.cursor += 1
            tokens_done += tokens
            if log and (step % 50 == 0 or step == cfg.max_steps):
                dt = max(time.monotonic() - t0, 1e-9)
                log(f"step={step} loss={loss:.4f} "
                    f"lr={lr_at(step, cfg.peak_lr, cfg.warmup):.6g} "
                    f"tok/s={tokens_done / dt:.0f}")
            if eval_fn and out_dir and step % cfg.eval_every == 0:
                scores = eval_fn(model)
                evaluate_and_checkpoint(model, opt, state, scores, out_dir, log=log)
            if checkpoint_every and out_dir and step % checkpoint_every == 0:
                os.makedirs(out_dir, exist_ok=True)
                ckpt.save_model(os.path.join(out_dir, "last.ckpt"), model, opt,
                                {"train_state": state.to_dict()})
        if state.cursor >= len(plan):
            state.epoch += 1
            state.cursor = 0
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        ckpt.save_model(os.path.join(out_dir, "last.ckpt"), model, opt,
                        {"train_state": state.to_dict()})
    return state


def resume_from(path):
    """Load (model, opt, state) from a checkpoint written by train_loop."""
    model, opt_arrays, meta = ckpt.load_model(path)
    opt = AdamState.from_arrays(model, opt_arrays, meta["opt_step"]) \
        if opt_arrays else AdamState(model)
    state = TrainState.from_dict(meta["train_state"]) \
        if "train_state" in meta else TrainState()
    return model, opt, state


def plan_single(batches, shuffle_seed=None, epoch=0):
    """Wrap a flat batch list into single-worker groups, optionally
    shuffled deterministically per epoch."""
    order = list(range(len(batches)))
    if shuffle_seed is not None:
        new_rng(shuffle_seed, STREAM_EPOCH, epoch).shuffle(order)
    return [[batches[i]] for i in order]
