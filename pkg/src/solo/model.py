"""Desk-scale decoder-only transformer over packed multimodal sequences.

Parameters live in a flat ``dict`` of named torch tensors so that gradient
checks and checkpointing can address every coordinate directly. Positions
restart at zero at each segment start, which makes a packed forward pass
agree with separate per-example passes.
"""
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from ._validation import check_positive_int
from .encoding import Pad, Patch, Text, Vocabulary
from .errors import ConfigurationError, DimensionError, InvalidInputError
from .packing import PackedSequence

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_dim: int = 256
    text_vocab_size: int = 256
    patch_size: int = 32
    max_seq_len: int = 512
    tie_embeddings: bool = False

    def __post_init__(self):
        for name in ("d_model", "n_layers", "n_heads", "ffn_dim", "text_vocab_size",
                     "patch_size", "max_seq_len"):
            check_positive_int(getattr(self, name), name, ConfigurationError)
        if self.d_model % self.n_heads:
            raise ConfigurationError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")

    @property
    def vocab(self):
        return Vocabulary(self.text_vocab_size)

    @property
    def vocab_size(self):
        """Output classes: text tokens plus the vision special tokens."""
        return self.vocab.size

    @property
    def patch_dim(self):
        return self.patch_size * self.patch_size * 3


@dataclass(frozen=True)
class TrainConfig:
    peak_lr: float = 5e-5
    min_lr: float = 5e-6
    warmup_steps: int = 200
    total_steps: int = 1000
    weight_decay: float = 0.1
    batch_size: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    checkpoint_every: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if not 0 < self.min_lr <= self.peak_lr:
            raise ConfigurationError(f"need 0 < min_lr <= peak_lr, got {self.min_lr}, {self.peak_lr}")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ConfigurationError(
                f"need 0 <= warmup_steps < total_steps, got {self.warmup_steps}, {self.total_steps}"
            )
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be nonnegative")
        check_positive_int(self.batch_size, "batch_size", ConfigurationError)
        if self.dtype not in _DTYPES:
            raise ConfigurationError(f"dtype must be one of {sorted(_DTYPES)}")


def lr_at_step(step, cfg):
    """Linear warmup from 0 to ``peak_lr``, then cosine decay to ``min_lr`` at ``total_steps``."""
    if not 0 <= step <= cfg.total_steps:
        raise InvalidInputError(f"step {step} outside [0, {cfg.total_steps}]")
    if step < cfg.warmup_steps:
        return cfg.peak_lr * (step / cfg.warmup_steps)
    progress = (step - cfg.warmup_steps) / (cfg.total_steps - cfg.warmup_steps)
    return cfg.min_lr + 0.5 * (cfg.peak_lr - cfg.min_lr) * (1.0 + math.cos(math.pi * progress))


def param_shapes(config):
    d, f, v = config.d_model, config.ffn_dim, config.vocab_size
    shapes = {
        "tok_emb": (v, d),
        "pos_emb": (config.max_seq_len, d),
        "proj.weight": (config.patch_dim, d),
        "proj.bias": (d,),
    }
    for i in range(config.n_layers):
        p = f"layers.{i}."
        shapes.update({
            p + "ln1.weight": (d,), p + "ln1.bias": (d,),
            p + "attn.qkv": (d, 3 * d), p + "attn.qkv_bias": (3 * d,),
            p + "attn.out": (d, d), p + "attn.out_bias": (d,),
            p + "ln2.weight": (d,), p + "ln2.bias": (d,),
            p + "ffn.w1": (d, f), p + "ffn.b1": (f,),
            p + "ffn.w2": (f, d), p + "ffn.b2": (d,),
        })
    shapes.update({"ln_f.weight": (d,), "ln_f.bias": (d,)})
    if not config.tie_embeddings:
        shapes["head"] = (d, v)
    return shapes


def init_params(config, seed=0, dtype=torch.float64):
    """GPT-2 style init: N(0, 0.02) matrices, residual outputs scaled by depth, unit norms."""
    gen = torch.Generator().manual_seed(int(seed))
    params = {}
    resid_std = 0.02 / math.sqrt(2 * config.n_layers)
    for name, shape in param_shapes(config).items():
        if name.endswith(("ln1.weight", "ln2.weight", "ln_f.weight")):
            t = torch.ones(shape, dtype=dtype)
        elif len(shape) == 1:
            t = torch.zeros(shape, dtype=dtype)
        elif name == "proj.weight":
            t = torch.randn(shape, generator=gen, dtype=dtype) * config.patch_dim ** -0.5
        else:
            std = resid_std if name.endswith(("attn.out", "ffn.w2")) else 0.02
            t = torch.randn(shape, generator=gen, dtype=dtype) * std
        params[name] = t.requires_grad_()
    return params


def check_params(params, config):
    expected = param_shapes(config)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise DimensionError(f"parameter names differ: missing {missing}, unexpected {extra}")
    for name, shape in expected.items():
        if tuple(params[name].shape) != shape:
            raise DimensionError(f"{name} has shape {tuple(params[name].shape)}, expected {shape}")
        if not torch.isfinite(params[name]).all():
            raise InvalidInputError(f"{name} has non-finite entries")


@dataclass
class Batch:
    """Tensor view of equal-length packed sequences."""

    ids: torch.Tensor
    positions: torch.Tensor
    segment_ids: torch.Tensor
    live: torch.Tensor
    patch_rows: torch.Tensor
    patch_cols: torch.Tensor
    patches: torch.Tensor
    targets: torch.Tensor
    loss_mask: torch.Tensor
    has_vision: torch.Tensor

    def __len__(self):
        return self.ids.shape[0]


def encode_batch(seqs, config, dtype=torch.float64):
    if isinstance(seqs, PackedSequence):
        seqs = [seqs]
    if not seqs:
        raise InvalidInputError("empty batch")
    length = max(len(s) for s in seqs)
    if length > config.max_seq_len:
        raise DimensionError(f"sequence length {length} exceeds max_seq_len {config.max_seq_len}")
    vocab = config.vocab
    b = len(seqs)
    ids = np.zeros((b, length), np.int64)
    positions = np.zeros((b, length), np.int64)
    seg = np.zeros((b, length), np.int64)
    live = np.zeros((b, length), bool)
    loss_mask = np.zeros((b, length), bool)
    has_vision = np.zeros((b, length), bool)
    is_text = np.zeros((b, length), bool)
    patch_rows, patch_cols, patches = [], [], []
    for i, s in enumerate(seqs):
        n = len(s)
        seg[i, :n] = s.segment_ids
        if n < length:
            seg[i, n:] = (s.segment_ids[-1] + 1) if n else 0
        loss_mask[i, :n] = s.loss_mask
        start = 0
        seg_vision = {}
        for t, el in enumerate(s.elements):
            if t and s.segment_ids[t] != s.segment_ids[t - 1]:
                start = t
            if isinstance(el, Pad):
                continue
            live[i, t] = True
            positions[i, t] = t - start
            if isinstance(el, Patch):
                if el.patch_size != config.patch_size:
                    raise DimensionError(
                        f"patch size {el.patch_size} does not match model patch size {config.patch_size}"
                    )
                patch_rows.append(i)
                patch_cols.append(t)
                patches.append(np.frombuffer(el.data, np.uint8))
                seg_vision[s.segment_ids[t]] = True
            else:
                ids[i, t] = vocab.id_of(el)
                is_text[i, t] = isinstance(el, Text)
        for t in range(n):
            has_vision[i, t] = seg_vision.get(s.segment_ids[t], False)
    targets = np.zeros_like(ids)
    targets[:, :-1] = ids[:, 1:]
    if loss_mask[:, -1].any() or np.any(loss_mask[:, :-1] & ~is_text[:, 1:]):
        raise InvalidInputError("loss mask selects a position whose target is not text")
    if patches:
        pix = torch.from_numpy(np.stack(patches).astype(np.float64) / 255.0 * 2.0 - 1.0).to(dtype)
    else:
        pix = torch.zeros((0, config.patch_dim), dtype=dtype)
    return Batch(
        ids=torch.from_numpy(ids),
        positions=torch.from_numpy(positions),
        segment_ids=torch.from_numpy(seg),
        live=torch.from_numpy(live),
        patch_rows=torch.tensor(patch_rows, dtype=torch.long),
        patch_cols=torch.tensor(patch_cols, dtype=torch.long),
        patches=pix,
        targets=torch.from_numpy(targets),
        loss_mask=torch.from_numpy(loss_mask),
        has_vision=torch.from_numpy(has_vision),
    )


def embed(params, batch):
    """Token rows for text/special, projected pixels for patches, zeros for padding."""
    tok = params["tok_emb"]
    x = tok[batch.ids] * batch.live.unsqueeze(-1).to(tok.dtype)
    if len(batch.patches):
        proj = batch.patches @ params["proj.weight"] + params["proj.bias"]
        x = x.index_put((batch.patch_rows, batch.patch_cols), proj)
    return x


def attention_allowed(batch):
    """``(B, L, L)`` boolean: causal, same segment, neither side padding."""
    seg = batch.segment_ids
    n = seg.shape[1]
    causal = torch.ones((n, n), dtype=torch.bool).tril()
    same = seg.unsqueeze(2) == seg.unsqueeze(1)
    live = batch.live
    return causal & same & live.unsqueeze(2) & live.unsqueeze(1)


def _attention(x, params, prefix, allowed, n_heads):
    b, n, d = x.shape
    dh = d // n_heads
    qkv = x @ params[prefix + "qkv"] + params[prefix + "qkv_bias"]
    q, k, v = qkv.split(d, dim=-1)
    q = q.view(b, n, n_heads, dh).transpose(1, 2)
    k = k.view(b, n, n_heads, dh).transpose(1, 2)
    v = v.view(b, n, n_heads, dh).transpose(1, 2)
    scores = (q @ k.transpose(-1, -2)) / math.sqrt(dh)
    mask = allowed.unsqueeze(1)
    # finite fill keeps fully masked (padding) rows NaN free; they are zeroed below
    scores = scores.masked_fill(~mask, torch.finfo(scores.dtype).min)
    probs = torch.softmax(scores, dim=-1) * mask.any(-1, keepdim=True).to(scores.dtype)
    out = (probs @ v).transpose(1, 2).reshape(b, n, d)
    return out @ params[prefix + "out"] + params[prefix + "out_bias"]


def forward_batch(params, batch, config):
    x = embed(params, batch) + params["pos_emb"][batch.positions]
    allowed = attention_allowed(batch)
    d = config.d_model
    for i in range(config.n_layers):
        p = f"layers.{i}."
        h = F.layer_norm(x, (d,), params[p + "ln1.weight"], params[p + "ln1.bias"])
        x = x + _attention(h, params, p + "attn.", allowed, config.n_heads)
        h = F.layer_norm(x, (d,), params[p + "ln2.weight"], params[p + "ln2.bias"])
        h = F.gelu(h @ params[p + "ffn.w1"] + params[p + "ffn.b1"])
        x = x + h @ params[p + "ffn.w2"] + params[p + "ffn.b2"]
    x = F.layer_norm(x, (d,), params["ln_f.weight"], params["ln_f.bias"])
    head = params["tok_emb"].T if config.tie_embeddings else params["head"]
    return x @ head


def forward(seq, params, config):
    """Logits ``(L, vocab + specials)`` for one packed sequence."""
    dtype = params["tok_emb"].dtype
    return forward_batch(params, encode_batch([seq], config, dtype), config)[0]


def masked_loss(logits, targets, loss_mask):
    """Mean next-token cross-entropy over active positions; 0 when none are active."""
    ce = torch.logsumexp(logits, dim=-1) - logits.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    m = loss_mask.to(logits.dtype)
    return (ce * m).sum() / m.sum().clamp(min=1.0)


def sequence_loss(params, seq, config):
    batch = encode_batch([seq], config, params["tok_emb"].dtype)
    logits = forward_batch(params, batch, config)
    return masked_loss(logits, batch.targets, batch.loss_mask)


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_coords: int
    per_tensor: dict
    coords: list

    def __repr__(self):
        return f"GradCheckResult(max_rel_error={self.max_rel_error:.3e}, n_coords={self.n_coords})"


def grad_check(params, seq, config, epsilon=1e-5, n_coords=256, seed=0, floor=1e-6):
    """Compare autograd gradients with central finite differences.

    Coordinates are drawn uniformly within each parameter tensor, the same
    number per tensor, so every tensor (the projector included) is probed.
    Relative error is ``|g - fd| / max(|g|, |fd|, floor)``; the floor keeps
    coordinates with vanishing gradient from dividing by round-off.
    Params must be double precision.
    """
    if any(p.dtype != torch.float64 for p in params.values()):
        raise InvalidInputError("grad_check requires float64 parameters")
    rng = np.random.default_rng(seed)
    batch = encode_batch([seq], config, torch.float64)

    def loss_fn():
        return masked_loss(forward_batch(params, batch, config), batch.targets, batch.loss_mask)

    for p in params.values():
        p.grad = None
    loss_fn().backward()
    grads = {k: p.grad.detach().clone() for k, p in params.items()}
    per = -(-n_coords // len(params))
    coords = []
    per_tensor = {}
    with torch.no_grad():
        for name, p in params.items():
            flat = p.view(-1)
            worst = 0.0
            for idx in rng.integers(0, flat.numel(), size=per):
                idx = int(idx)
                orig = flat[idx].item()
                flat[idx] = orig + epsilon
                up = loss_fn().item()
                flat[idx] = orig - epsilon
                down = loss_fn().item()
                flat[idx] = orig
                fd = (up - down) / (2 * epsilon)
                g = grads[name].view(-1)[idx].item()
                err = abs(g - fd) / max(abs(g), abs(fd), floor)
                coords.append((name, idx, g, fd, err))
                worst = max(worst, err)
            per_tensor[name] = worst
    for p in params.values():
        p.grad = None
    return GradCheckResult(max(per_tensor.values()), len(coords), per_tensor, coords)
