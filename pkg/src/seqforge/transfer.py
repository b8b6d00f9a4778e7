"""Controlled parameter initialization: build a new model that takes some
components from a trained source model, some freshly initialized, with
cross-vocabulary embedding remapping and layer growing/shrinking.

Map files are UTF-8 ``target=source`` lines matched against parameter
names. ``*`` is a wildcard; captures substitute positionally into the
source side. The right-hand side may also be the keyword ``source`` (same
name) or ``random`` (fresh init). Later lines win, so a catch-all default
goes first:

    *=source
    decoder.layer.3.*=decoder.layer.1.*
    embed.positions=random
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, new_rng
from .model import TransformerModel, init_model

KEYWORD_SOURCE = "source"
KEYWORD_RANDOM = "random"

# parameters carrying a vocabulary axis, bridged by remap when sizes differ
VOCAB_AXIS = {"embed.tokens": 0, "out_proj.weight": 1}
POSITIONS = "embed.positions"


@dataclass
class TransferMap:
    entries: list      # (target pattern, source spec) in file order

    def __post_init__(self):
        for tgt, src in self.entries:
            if src not in (KEYWORD_SOURCE, KEYWORD_RANDOM) \
                    and src.count("*") > tgt.count("*"):
                raise ValueError(f"map line {tgt}={src}: source side has more "
                                 "wildcards than the target side")


def parse_transfer_map(text) -> TransferMap:
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"map line {lineno}: expected target=source, got {raw!r}")
        tgt, src = line.split("=", 1)
        tgt, src = tgt.strip(), src.strip()
        if not tgt or not src:
            raise ValueError(f"map line {lineno}: empty side in {raw!r}")
        entries.append((tgt, src))
    return TransferMap(entries)


def identity_map() -> TransferMap:
    return TransferMap([("*", KEYWORD_SOURCE)])


def _pattern_re(pattern):
    return re.compile("^" + "(.*)".join(re.escape(p) for p in pattern.split("*")) + "$")


def _substitute(spec, captures):
    parts = spec.split("*")
    out = [parts[0]]
    for i, part in enumerate(parts[1:]):
        out.append(captures[i])
        out.append(part)
    return "".join(out)


def resolve_map(tmap: TransferMap, target_names):
    """Map every target parameter name to a source name or None (random).
    Last matching line wins; uncovered names are an error."""
    assignment = {}
    for name in target_names:
        hit = None
        for tgt, src in tmap.entries:
            m = _pattern_re(tgt).match(name)
            if not m:
                continue
            if src == KEYWORD_RANDOM:
                hit = None
            elif src == KEYWORD_SOURCE:
                hit = name
            else:
                hit = _substitute(src, m.groups())
            assignment[name] = hit
        if name not in assignment:
            raise ValueError(f"transfer map covers no assignment for {name!r}; "
                             "add a default line like *=random")
    return assignment


def _token_seed(token):
    return int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "little")


def _vocab_tokens(vocab):
    if hasattr(vocab, "id_to_token"):
        return list(vocab.id_to_token)
    if isinstance(vocab, dict):
        return [t for t, _ in sorted(vocab.items(), key=lambda kv: kv[1])]
    return list(vocab)


def remap_embeddings(old_vocab, new_vocab, old_matrix, rng):
    """Rows for tokens shared between the vocabularies are copied bitwise;
    rows for new tokens are drawn from a stream keyed by (rng seed, token),
    so a token's fresh row does not depend on its id or neighbours."""
    old_tokens = _vocab_tokens(old_vocab)
    new_tokens = _vocab_tokens(new_vocab)
    old_matrix = np.asarray(old_matrix)
    if old_matrix.shape[0] != len(old_tokens):
        raise ValueError(f"old matrix has {old_matrix.shape[0]} rows, "
                         f"old vocab has {len(old_tokens)} tokens")
    hidden = old_matrix.shape[1]
    base = int(rng.integers(2 ** 63))
    old_index = {t: i for i, t in enumerate(old_tokens)}
    out = np.empty((len(new_tokens), hidden), dtype=old_matrix.dtype)
    for i, token in enumerate(new_tokens):
        j = old_index.get(token)
        if j is not None:
            out[i] = old_matrix[j]
        else:
            fresh = new_rng(base, _token_seed(token)).normal(0.0, 0.02, size=hidden)
            out[i] = fresh.astype(old_matrix.dtype)
    return out


def apply_transfer(source: TransformerModel, target_cfg, tmap: TransferMap, rng,
                   source_vocab=None, target_vocab=None) -> TransformerModel:
    """Build a target model per the map. Copies are by value (no storage
    shared with the source). Vocabulary-axis parameters of differing size
    go through remap_embeddings and require both vocabularies; positional
    parameters copy up to the shorter length, the rest keeping their fresh
    initialization. Any other shape mismatch is an error naming the
    component."""
    target = init_model(target_cfg, rng)
    assignment = resolve_map(tmap, list(target.params))
    for name, src_name in assignment.items():
        if src_name is None:
            continue
        if src_name not in source.params:
            raise ValueError(f"transfer target {name!r}: source parameter "
                             f"{src_name!r} does not exist")
        src = source.params[src_name].data
        dst = target.params[name].data
        if name == POSITIONS and src.shape[1:] == dst.shape[1:]:
            n = min(src.shape[0], dst.shape[0])
            dst[:n] = src[:n]
            continue
        axis = VOCAB_AXIS.get(name)
        if axis is not None and source_vocab is not None and target_vocab is not None \
                and _vocab_tokens(source_vocab) != _vocab_tokens(target_vocab):
            old = src if axis == 0 else src.T
            new = remap_embeddings(source_vocab, target_vocab, old, rng)
            dst[...] = new if axis == 0 else new.T
            continue
        if src.shape == dst.shape:
            dst[...] = src
            continue
        if axis is not None:
            raise ValueError(f"transfer target {name!r}: vocabulary sizes differ "
                             f"({src.shape} -> {dst.shape}) and no vocabularies "
                             "were given for remapping")
        raise ValueError(f"transfer target {name!r}: shape mismatch "
                         f"{src.shape} -> {dst.shape}")
    return target
