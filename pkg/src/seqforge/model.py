"""Pre-norm transformer encoder-decoder with the structural extensions this
toolkit is about: recurrently tied layers, multi-layer softmax, wait-k /
unidirectional attention masks, and gated context combination for
document / multi-source translation.

Parameter names form a flat namespace (e.g. ``decoder.layer.1.cross_attn.wq``)
used verbatim by checkpointing and transfer maps. Tied layers share one
parameter set: layer i reads the unique-layer store at ``i mod unique``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autograd as ag
from .autograd import Tensor

CONTEXT_MODES = ("none", "decoder_combination", "encoder_gate")


@dataclass
class ModelConfig:
    vocab_size: int
    hidden: int = 64
    ffn: int = 128
    heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    unique_enc_layers: int = 0       # 0 means untied (== enc_layers)
    unique_dec_layers: int = 0
    dropout: float = 0.1
    max_len: int = 256
    tie_embeddings: bool = True
    multi_layer_softmax: bool = False
    unidirectional_encoder: bool = False
    wait_k_train: object = None      # None | int k | list of k to sample from
    context_mode: str = "none"
    norm_eps: float = 1e-5

    def __post_init__(self):
        if self.unique_enc_layers == 0:
            self.unique_enc_layers = self.enc_layers
        if self.unique_dec_layers == 0:
            self.unique_dec_layers = self.dec_layers
        if self.enc_layers % self.unique_enc_layers != 0:
            raise ValueError(f"enc_layers {self.enc_layers} not divisible by "
                             f"unique_enc_layers {self.unique_enc_layers}")
        if self.dec_layers % self.unique_dec_layers != 0:
            raise ValueError(f"dec_layers {self.dec_layers} not divisible by "
                             f"unique_dec_layers {self.unique_dec_layers}")
        if self.hidden % self.heads != 0:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.context_mode not in CONTEXT_MODES:
            raise ValueError(f"unknown context_mode {self.context_mode!r}")
        if isinstance(self.wait_k_train, (list, tuple)):
            self.wait_k_train = [int(k) for k in self.wait_k_train]
            if any(k < 1 for k in self.wait_k_train):
                raise ValueError("wait-k values must be >= 1")
        elif self.wait_k_train is not None:
            self.wait_k_train = int(self.wait_k_train)
            if self.wait_k_train < 1:
                raise ValueError("wait-k must be >= 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class ForwardOutput:
    logits: Tensor                       # [B, T, V]
    per_layer_logits: list | None        # when multi_layer_softmax
    enc_states: list                     # per layer [B, S, H]
    dec_states: list                     # per layer [B, T, H]
    enc_final: Tensor
    dec_final: Tensor
    enc_self_attn: list                  # per layer [B, heads, S, S]
    dec_self_attn: list                  # per layer [B, heads, T, T]
    dec_cross_attn: list                 # per layer [B, heads, T, S]
    enc_ctx_attn: list = field(default_factory=list)
    dec_ctx_attn: list = field(default_factory=list)
    gates: list = field(default_factory=list)   # per layer [B, *, 1]
    wait_k: int | None = None


# ---------------------------------------------------------------------------
# attention masks (additive, entries exactly 0 or -inf)
# ---------------------------------------------------------------------------

NEG_INF = -np.inf


def build_wait_k_cross_mask(k, src_len, tgt_len):
    """[T, S] additive mask: decoder step t (1-based) sees source positions
    1..min(k+t-1, S)."""
    if k < 1:
        raise ValueError(f"wait-k must be >= 1, got {k}")
    mask = np.zeros((tgt_len, src_len), dtype=np.float32)
    for t in range(tgt_len):
        visible = min(k + t, src_len)
        mask[t, visible:] = NEG_INF
    return mask


def build_causal_mask(n):
    """[n, n] additive lower-triangular mask."""
    mask = np.zeros((n, n), dtype=np.float32)
    mask[np.triu_indices(n, k=1)] = NEG_INF
    return mask


def build_unidirectional_encoder_mask(src_len):
    return build_causal_mask(src_len)


def pad_key_mask(bool_mask):
    """[B, L] True-at-real-token mask -> additive [B, 1, 1, L]."""
    add = np.where(bool_mask, 0.0, NEG_INF).astype(np.float32)
    return add[:, None, None, :]


# ---------------------------------------------------------------------------
# parameter schema / init
# ---------------------------------------------------------------------------

def _attn_params(prefix, h):
    names = []
    for part in "qkvo":
        names.append((f"{prefix}.w{part}", (h, h), "weight"))
        names.append((f"{prefix}.b{part}", (h,), "bias"))
    return names


def param_schema(cfg: ModelConfig):
    """Ordered (name, shape, kind) list; kind drives initialization."""
    h, f = cfg.hidden, cfg.ffn
    schema = [("embed.tokens", (cfg.vocab_size, h), "weight"),
              ("embed.positions", (cfg.max_len, h), "positions")]

    def norm(prefix):
        return [(f"{prefix}.gain", (h,), "gain"), (f"{prefix}.bias", (h,), "bias")]

    def ffn_block(prefix):
        return [(f"{prefix}.w1", (h, f), "weight"), (f"{prefix}.b1", (f,), "bias"),
                (f"{prefix}.w2", (f, h), "weight"), (f"{prefix}.b2", (h,), "bias")]

    for u in range(cfg.unique_enc_layers):
        p = f"encoder.layer.{u}"
        schema += norm(f"{p}.self_attn_norm") + _attn_params(f"{p}.self_attn", h)
        if cfg.context_mode == "encoder_gate":
            schema += _attn_params(f"{p}.ctx_attn", h)
            schema += [(f"{p}.gate.weight", (2 * h, 1), "weight"),
                       (f"{p}.gate.bias", (1,), "bias")]
        schema += norm(f"{p}.ffn_norm") + ffn_block(f"{p}.ffn")
    schema += norm("encoder.final_norm")

    for u in range(cfg.unique_dec_layers):
        p = f"decoder.layer.{u}"
        schema += norm(f"{p}.self_attn_norm") + _attn_params(f"{p}.self_attn", h)
        schema += norm(f"{p}.cross_attn_norm") + _attn_params(f"{p}.cross_attn", h)
        if cfg.context_mode == "decoder_combination":
            schema += _attn_params(f"{p}.ctx_attn", h)
            schema += [(f"{p}.gate.weight", (2 * h, 1), "weight"),
                       (f"{p}.gate.bias", (1,), "bias")]
        schema += norm(f"{p}.ffn_norm") + ffn_block(f"{p}.ffn")
    schema += norm("decoder.final_norm")

    if not cfg.tie_embeddings:
        schema.append(("out_proj.weight", (h, cfg.vocab_size), "weight"))
    return schema


def sinusoid_table(max_len, hidden):
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    i = np.arange(hidden, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * (i // 2) / hidden)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table


INIT_STD = 0.02


def init_param(shape, kind, rng):
    if kind == "weight":
        return rng.normal(0.0, INIT_STD, size=shape)
    if kind == "bias":
        return np.zeros(shape)
    if kind == "gain":
        return np.ones(shape)
    if kind == "positions":
        return sinusoid_table(*shape)
    raise ValueError(f"unknown parameter kind {kind!r}")


def init_model(cfg: ModelConfig, rng):
    params = {}
    for name, shape, kind in param_schema(cfg):
        params[name] = Tensor(init_param(shape, kind, rng), requires_grad=True)
    return TransformerModel(cfg, params)


def parameter_count(model):
    return sum(int(np.prod(t.shape)) for t in model.params.values())


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

def gated_blend(c_s, c_x, gate_w, gate_b):
    """Per-position scalar gate over two context vectors:
    g = sigmoid([c_s; c_x] @ w + b), out = g * c_s + (1 - g) * c_x."""
    g = ag.sigmoid(ag.concat([c_s, c_x], axis=-1) @ gate_w + gate_b)
    return g * c_s + (1.0 - g) * c_x, g


class TransformerModel:

    def __init__(self, cfg: ModelConfig, params):
        self.cfg = cfg
        self.params = params
        expected = [n for n, _, _ in param_schema(cfg)]
        if list(params) != expected:
            missing = set(expected) - set(params)
            extra = set(params) - set(expected)
            raise ValueError(f"parameter namespace mismatch: missing={sorted(missing)} "
                             f"extra={sorted(extra)}")

    def p(self, name):
        return self.params[name]

    def named_parameters(self):
        return self.params

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()

    def copy(self):
        params = {n: Tensor(t.data.copy(), requires_grad=True) for n, t in self.params.items()}
        return TransformerModel(self.cfg, params)

    def grads(self):
        return {n: t.grad for n, t in self.params.items()}

    # -- building blocks ----------------------------------------------------

    def _norm(self, prefix, x):
        return ag.layer_norm(x, self.p(f"{prefix}.gain"), self.p(f"{prefix}.bias"),
                             eps=self.cfg.norm_eps)

    def _heads_split(self, x, b, t):
        h, dh = self.cfg.heads, self.cfg.hidden // self.cfg.heads
        return ag.transpose(x.reshape(b, t, h, dh), (0, 2, 1, 3))

    def _heads_join(self, x, b, t):
        return ag.transpose(x, (0, 2, 1, 3)).reshape(b, t, self.cfg.hidden)

    def _attend(self, prefix, q_in, kv_in, add_mask):
        """Multi-head attention; returns (output [B,Tq,H], probs [B,h,Tq,Tk])."""
        b, tq = q_in.shape[0], q_in.shape[1]
        tk = kv_in.shape[1]
        q = self._heads_split(q_in @ self.p(f"{prefix}.wq") + self.p(f"{prefix}.bq"), b, tq)
        k = self._heads_split(kv_in @ self.p(f"{prefix}.wk") + self.p(f"{prefix}.bk"), b, tk)
        v = self._heads_split(kv_in @ self.p(f"{prefix}.wv") + self.p(f"{prefix}.bv"), b, tk)
        scale = 1.0 / math.sqrt(self.cfg.hidden // self.cfg.heads)
        scores = (q @ ag.swapaxes(k, -1, -2)) * scale
        probs = ag.masked_softmax(scores, add_mask, axis=-1)
        if probs.fully_masked:
            raise RuntimeError(f"{prefix}: attention row fully masked; "
                               "check pad masks and wait-k settings")
        out = self._heads_join(probs @ v, b, tq)
        return out @ self.p(f"{prefix}.wo") + self.p(f"{prefix}.bo"), probs

    def _embed(self, ids):
        b, t = ids.shape
        if t > self.cfg.max_len:
            raise ValueError(f"sequence length {t} exceeds max_len {self.cfg.max_len}")
        x = ag.embedding(self.p("embed.tokens"), ids) * math.sqrt(self.cfg.hidden)
        return x + self.p("embed.positions")[:t]

    def _drop(self, x, train, rng):
        return ag.dropout(x, self.cfg.dropout, rng, train and rng is not None)

    def project(self, x):
        if self.cfg.tie_embeddings:
            return x @ ag.transpose(self.p("embed.tokens"))
        return x @ self.p("out_proj.weight")

    # -- encoder ------------------------------------------------------------

    def encode(self, src_ids, src_mask, ctx_states=None, ctx_add_mask=None,
               train=False, rng=None, out=None):
        cfg = self.cfg
        b, s = src_ids.shape
        add_mask = pad_key_mask(src_mask)
        if cfg.unidirectional_encoder:
            add_mask = add_mask + build_unidirectional_encoder_mask(s)[None, None, :, :]
        x = self._drop(self._embed(src_ids), train, rng)
        gated = cfg.context_mode == "encoder_gate" and ctx_states is not None
        for i in range(cfg.enc_layers):
            p = f"encoder.layer.{i % cfg.unique_enc_layers}"
            h = self._norm(f"{p}.self_attn_norm", x)
            attn_out, probs = self._attend(f"{p}.self_attn", h, h, add_mask)
            if out is not None:
                out.enc_self_attn.append(probs)
            if gated:
                ctx_out, ctx_probs = self._attend(f"{p}.ctx_attn", h, ctx_states, ctx_add_mask)
                attn_out, g = gated_blend(attn_out, ctx_out,
                                          self.p(f"{p}.gate.weight"), self.p(f"{p}.gate.bias"))
                if out is not None:
                    out.enc_ctx_attn.append(ctx_probs)
                    out.gates.append(g)
            x = x + self._drop(attn_out, train, rng)
            h = self._norm(f"{p}.ffn_norm", x)
            h = ag.gelu(h @ self.p(f"{p}.ffn.w1") + self.p(f"{p}.ffn.b1"))
            x = x + self._drop(h @ self.p(f"{p}.ffn.w2") + self.p(f"{p}.ffn.b2"), train, rng)
            if out is not None:
                out.enc_states.append(x)
        return self._norm("encoder.final_norm", x)

    # -- decoder ------------------------------------------------------------

    def decode(self, tgt_in, tgt_mask, enc_final, src_mask, ctx_states=None,
               ctx_add_mask=None, wait_k=None, train=False, rng=None, out=None):
        cfg = self.cfg
        b, t = tgt_in.shape
        s = enc_final.shape[1]
        self_mask = pad_key_mask(tgt_mask) + build_causal_mask(t)[None, None, :, :]
        cross_mask = pad_key_mask(src_mask)
        if wait_k is not None:
            cross_mask = cross_mask + build_wait_k_cross_mask(wait_k, s, t)[None, None, :, :]
        y = self._drop(self._embed(tgt_in), train, rng)
        combine = cfg.context_mode == "decoder_combination" and ctx_states is not None
        layer_outs = []
        for i in range(cfg.dec_layers):
            p = f"decoder.layer.{i % cfg.unique_dec_layers}"
            h = self._norm(f"{p}.self_attn_norm", y)
            attn_out, probs = self._attend(f"{p}.self_attn", h, h, self_mask)
            if out is not None:
                out.dec_self_attn.append(probs)
            y = y + self._drop(attn_out, train, rng)
            h = self._norm(f"{p}.cross_attn_norm", y)
            cross_out, cprobs = self._attend(f"{p}.cross_attn", h, enc_final, cross_mask)
            if out is not None:
                out.dec_cross_attn.append(cprobs)
            if combine:
                ctx_out, xprobs = self._attend(f"{p}.ctx_attn", h, ctx_states, ctx_add_mask)
                cross_out, g = gated_blend(cross_out, ctx_out,
                                           self.p(f"{p}.gate.weight"), self.p(f"{p}.gate.bias"))
                if out is not None:
                    out.dec_ctx_attn.append(xprobs)
                    out.gates.append(g)
            y = y + self._drop(cross_out, train, rng)
            h = self._norm(f"{p}.ffn_norm", y)
            h = ag.gelu(h @ self.p(f"{p}.ffn.w1") + self.p(f"{p}.ffn.b1"))
            y = y + self._drop(h @ self.p(f"{p}.ffn.w2") + self.p(f"{p}.ffn.b2"), train, rng)
            layer_outs.append(y)
            if out is not None:
                out.dec_states.append(y)
        return self._norm("decoder.final_norm", y), layer_outs

    # -- full forward -------------------------------------------------------

    def forward(self, batch, train=False, rng=None, wait_k=None):
        """Run the full encoder-decoder on a Batch.

        wait_k overrides the config (used at decode time); during training
        a fixed configured k applies automatically, while sampled-k
        training expects the caller to draw k per batch and pass it."""
        cfg = self.cfg
        if (batch.ctx is not None) != (cfg.context_mode != "none"):
            raise ValueError(f"batch context={'present' if batch.ctx is not None else 'absent'} "
                             f"inconsistent with context_mode={cfg.context_mode!r}")
        if wait_k is None and isinstance(cfg.wait_k_train, int):
            wait_k = cfg.wait_k_train
        out = ForwardOutput(logits=None, per_layer_logits=None, enc_states=[], dec_states=[],
                            enc_final=None, dec_final=None, enc_self_attn=[], dec_self_attn=[],
                            dec_cross_attn=[], wait_k=wait_k)
        ctx_states = ctx_add_mask = None
        if batch.ctx is not None:
            # context is encoded by the plain (ungated) shared encoder
            ctx_states = self.encode(batch.ctx, batch.ctx_mask, train=train, rng=rng)
            ctx_add_mask = pad_key_mask(batch.ctx_mask)
        enc_final = self.encode(batch.src, batch.src_mask, ctx_states, ctx_add_mask,
                                train=train, rng=rng, out=out)
        dec_final, layer_outs = self.decode(batch.tgt_in, batch.tgt_mask, enc_final,
                                            batch.src_mask, ctx_states, ctx_add_mask,
                                            wait_k=wait_k, train=train, rng=rng, out=out)
        out.enc_final = enc_final
        out.dec_final = dec_final
        out.logits = self.project(dec_final)
        if cfg.multi_layer_softmax:
            out.per_layer_logits = [self.project(self._norm("decoder.final_norm", lo))
                                    for lo in layer_outs]
        return out
