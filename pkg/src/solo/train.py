"""Training loop, checkpoints and the per-step loss log."""
import json
import logging
import math
import os
import struct
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import (
    ChecksumError,
    InvalidInputError,
    MagicMismatchError,
    TrainingDivergedError,
    TruncationError,
    VersionMismatchError,
)
from .model import (
    _DTYPES,
    ModelConfig,
    TrainConfig,
    encode_batch,
    forward_batch,
    init_params,
    lr_at_step,
    masked_loss,
)
from .packfile import _atomic_write, _Reader

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SCKP"
CHECKPOINT_VERSION = 1
_DTYPE_CODES = {torch.float32: 0, torch.float64: 1}
_CODE_DTYPES = {0: ("<f4", torch.float32), 1: ("<f8", torch.float64)}


def split_losses(logits, batch):
    """Masked loss overall, on text-only segments, and on segments holding an image."""
    total = masked_loss(logits, batch.targets, batch.loss_mask)
    with torch.no_grad():
        text = masked_loss(logits, batch.targets, batch.loss_mask & ~batch.has_vision)
        vision = masked_loss(logits, batch.targets, batch.loss_mask & batch.has_vision)
    has_text = bool((batch.loss_mask & ~batch.has_vision).any())
    has_vision = bool((batch.loss_mask & batch.has_vision).any())
    return total, (text.item() if has_text else None), (vision.item() if has_vision else None)


@dataclass
class TrainResult:
    params: dict
    loss_log: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)


def train(sequences, model_config, train_config, seed=0, out_dir=None, log_path=None):
    """Train on packed sequences with AdamW and the warmup-cosine schedule.

    Step ``s`` (1-based) uses learning rate ``lr_at_step(s)`` and the batch of
    sequences ``(s - 1) * batch_size + i`` taken cyclically. Matrices receive
    weight decay; vectors (biases, norm gains) do not.
    """
    sequences = list(sequences)
    if not sequences:
        raise InvalidInputError("no training sequences")
    dtype = _DTYPES[train_config.dtype]
    torch.manual_seed(seed)
    params = init_params(model_config, seed, dtype)
    decay = [p for p in params.values() if p.ndim >= 2]
    no_decay = [p for p in params.values() if p.ndim < 2]
    opt = torch.optim.AdamW(
        [{"params": decay, "weight_decay": train_config.weight_decay},
         {"params": no_decay, "weight_decay": 0.0}],
        lr=0.0,
        betas=(train_config.beta1, train_config.beta2),
        eps=train_config.eps,
    )
    n = len(sequences)
    bs = train_config.batch_size
    encoded = {}
    result = TrainResult(params)
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for step in range(1, train_config.total_steps + 1):
            idx = tuple(((step - 1) * bs + i) % n for i in range(bs))
            if idx not in encoded:
                encoded[idx] = encode_batch([sequences[i] for i in idx], model_config, dtype)
            batch = encoded[idx]
            lr = lr_at_step(step, train_config)
            for group in opt.param_groups:
                group["lr"] = lr
            logits = forward_batch(params, batch, model_config)
            loss, text_loss, vision_loss = split_losses(logits, batch)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(step, idx, value)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            record = {"step": step, "lr": lr, "loss": value,
                      "text_loss": text_loss, "vision_loss": vision_loss}
            result.loss_log.append(record)
            if log_file:
                log_file.write(json.dumps(record) + "\n")
            if step == 1 or step % 50 == 0:
                logger.info("step %d lr %.3g loss %.4f", step, lr, value)
            every = train_config.checkpoint_every
            if out_dir and every and step % every == 0 and step != train_config.total_steps:
                path = os.path.join(out_dir, f"checkpoint-{step:06d}.sckp")
                save_checkpoint(path, params, model_config, train_config, step, seed)
                result.checkpoints.append(path)
    finally:
        if log_file:
            log_file.close()
    if out_dir:
        path = os.path.join(out_dir, "checkpoint.sckp")
        save_checkpoint(path, params, model_config, train_config, train_config.total_steps, seed)
        result.checkpoints.append(path)
    return result


def save_checkpoint(path, params, model_config, train_config, step, seed=0):
    """Write ``SCKP``: magic, u32 version, u32 header length, JSON header,
    u32 tensor count, named tensors, CRC32 of all preceding bytes."""
    header = json.dumps({
        "model_config": asdict(model_config),
        "train_config": asdict(train_config),
        "step": step,
        "seed": seed,
        "optimizer": {"name": "adamw", "betas": [train_config.beta1, train_config.beta2],
                      "eps": train_config.eps, "weight_decay": train_config.weight_decay},
    }, sort_keys=True).encode("utf-8")
    out = bytearray(CHECKPOINT_MAGIC)
    out += struct.pack("<II", CHECKPOINT_VERSION, len(header))
    out += header
    out += struct.pack("<I", len(params))
    for name, t in params.items():
        raw = name.encode("utf-8")
        t = t.detach()
        code = _DTYPE_CODES[t.dtype]
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<BI", code, t.ndim)
        out += struct.pack(f"<{t.ndim}I", *t.shape)
        out += t.numpy().astype(_CODE_DTYPES[code][0]).tobytes()
    out += struct.pack("<I", zlib.crc32(out))
    _atomic_write(path, bytes(out))


def load_checkpoint(path):
    """Return ``(params, header)``; params are leaf tensors with ``requires_grad``."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4:
        raise TruncationError("checkpoint shorter than its magic")
    if data[:4] != CHECKPOINT_MAGIC:
        raise MagicMismatchError(f"expected {CHECKPOINT_MAGIC!r}, found {data[:4]!r}")
    if len(data) < 8:
        raise TruncationError("checkpoint ends inside the header")
    stored = struct.unpack("<I", data[-4:])[0]
    actual = zlib.crc32(data[:-4])
    if stored != actual:
        raise ChecksumError(0, stored, actual)
    r = _Reader(data[:-4])
    r.take(4)
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    header = json.loads(bytes(r.take(r.u32())).decode("utf-8"))
    params = {}
    for _ in range(r.u32()):
        name = bytes(r.take(r.u32())).decode("utf-8")
        code = r.u8()
        rank = r.u32()
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank))
        np_dtype, torch_dtype = _CODE_DTYPES[code]
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(r.take(count * np.dtype(np_dtype).itemsize), dtype=np_dtype)
        params[name] = torch.from_numpy(arr.reshape(shape).copy()).to(torch_dtype).requires_grad_()
    header["model_config"] = ModelConfig(**header["model_config"])
    header["train_config"] = TrainConfig(**header["train_config"])
    return params, header


def read_loss_log(path):
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


class SoloLM(BaseEstimator):
    """Estimator facade: ``fit`` trains on packed sequences, ``predict`` returns
    next-token ids, ``score`` is the negative mean masked loss."""

    def __init__(self, d_model=64, n_layers=2, n_heads=4, ffn_dim=256, text_vocab_size=256,
                 patch_size=32, max_seq_len=512, peak_lr=5e-5, min_lr=5e-6, warmup_steps=200,
                 total_steps=1000, weight_decay=0.1, batch_size=1, dtype="float32",
                 random_state=0):
        self.d_model = d_model
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.ffn_dim = ffn_dim
        self.text_vocab_size = text_vocab_size
        self.patch_size = patch_size
        self.max_seq_len = max_seq_len
        self.peak_lr = peak_lr
        self.min_lr = min_lr
        self.warmup_steps = warmup_steps
        self.total_steps = total_steps
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.dtype = dtype
        self.random_state = random_state

    def _configs(self):
        mc = ModelConfig(self.d_model, self.n_layers, self.n_heads, self.ffn_dim,
                         self.text_vocab_size, self.patch_size, self.max_seq_len)
        tc = TrainConfig(self.peak_lr, self.min_lr, self.warmup_steps, self.total_steps,
                         self.weight_decay, self.batch_size, dtype=self.dtype)
        return mc, tc

    def fit(self, X, y=None):
        self.model_config_, self.train_config_ = self._configs()
        result = train(X, self.model_config_, self.train_config_, seed=self.random_state)
        self.params_ = result.params
        self.loss_log_ = result.loss_log
        return self

    def predict_logits(self, X):
        check_is_fitted(self, "params_")
        dtype = self.params_["tok_emb"].dtype
        with torch.no_grad():
            return [forward_batch(self.params_, encode_batch([s], self.model_config_, dtype),
                                  self.model_config_)[0].numpy() for s in X]

    def predict(self, X):
        return [logits.argmax(-1) for logits in self.predict_logits(X)]

    def score(self, X, y=None):
        check_is_fitted(self, "params_")
        dtype = self.params_["tok_emb"].dtype
        losses = []
        with torch.no_grad():
            for s in X:
                batch = encode_batch([s], self.model_config_, dtype)
                logits = forward_batch(self.params_, batch, self.model_config_)
                losses.append(masked_loss(logits, batch.targets, batch.loss_mask).item())
        return -float(np.mean(losses))
