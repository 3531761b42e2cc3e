"""
Transformer encoder-decoder translating token sequences into redacted ones.

Parameters live in a flat, ordered name to array mapping (`ModelParams`).
The forward functions take a mapping from the same names to `Tensor`
so that the same code runs traced, for training, and untraced, for decoding.
"""

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from .errors import ArtifactMismatchError, ConfigError, DimensionError, SequenceLengthError
from .numerics import (
    Tensor,
    add,
    dropout,
    embedding,
    gelu,
    layer_norm,
    matmul,
    reshape,
    scale,
    softmax_rows,
    transpose,
)
from .text import PAD
from .utils.sections import Section

MASKED = -1e9

ATTENTION_PROJECTIONS = ("q", "k", "v", "o")


@dataclass
class ModelConfig(Section):
    """Shape of the encoder-decoder."""

    vocab_size: int = 1000
    d_model: int = 256
    n_heads: int = 8
    n_enc_layers: int = 8
    n_dec_layers: int = 8
    d_ff: int = 1024
    max_len: int = 128
    dropout_rate: float = 0.1
    tie_embeddings: bool = False
    layer_norm_eps: float = 1e-5
    dtype: str = "float64"

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "n_heads", "d_ff", "max_len"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"model.{name} must be positive, got {getattr(self, name)}")
        for name in ("n_enc_layers", "n_dec_layers"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(f"model.{name} can not be negative")
        if self.d_model % self.n_heads:
            raise ConfigError(f"model.d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"model.dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"model.dtype must be float64 or float32, got {self.dtype}")

    @property
    def head_width(self) -> int:
        return self.d_model // self.n_heads

    @property
    def numpy_dtype(self):
        return np.dtype(self.dtype)


class ModelParams(Mapping):
    """Ordered, read-only collection of named parameter arrays."""

    def __init__(self, arrays: Mapping[str, np.ndarray]):
        self._arrays = OrderedDict((name, np.asarray(value)) for name, value in arrays.items())

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def __repr__(self):
        return f"<ModelParams tensors={len(self)} size={self.size}>"

    @property
    def size(self) -> int:
        """Number of scalar parameters."""
        return sum(value.size for value in self._arrays.values())

    def leaves(self, trainable: bool = False) -> Dict[str, Tensor]:
        """Wraps every array as a tensor, trainable ones to differentiate against."""
        return {name: Tensor(value, requires_grad=trainable, name=name) for name, value in self._arrays.items()}

    def updated(self, arrays: Mapping[str, np.ndarray]) -> "ModelParams":
        """Copy with some arrays replaced."""
        return ModelParams({name: arrays.get(name, value) for name, value in self._arrays.items()})

    def identical(self, other: "ModelParams") -> bool:
        """Bitwise equality of names, shapes, dtypes and contents."""
        return list(self) == list(other) and all(
            self[name].dtype == other[name].dtype and np.array_equal(self[name], other[name]) for name in self
        )


def param_shapes(config: ModelConfig) -> "OrderedDict[str, Tuple[int, ...]]":
    """Name and shape of every tensor the model allocates, in allocation order."""
    d, f, v = config.d_model, config.d_ff, config.vocab_size
    shapes = OrderedDict(embedding=(v, d))

    def attention(prefix):
        for projection in ATTENTION_PROJECTIONS:
            shapes[f"{prefix}.{projection}.w"] = (d, d)
            shapes[f"{prefix}.{projection}.b"] = (d,)

    def feed_forward(prefix):
        shapes[f"{prefix}.in.w"] = (d, f)
        shapes[f"{prefix}.in.b"] = (f,)
        shapes[f"{prefix}.out.w"] = (f, d)
        shapes[f"{prefix}.out.b"] = (d,)

    def norm(prefix):
        shapes[f"{prefix}.gain"] = (d,)
        shapes[f"{prefix}.bias"] = (d,)

    for layer in range(config.n_enc_layers):
        attention(f"enc.{layer}.self")
        feed_forward(f"enc.{layer}.ff")
        norm(f"enc.{layer}.norm1")
        norm(f"enc.{layer}.norm2")
    for layer in range(config.n_dec_layers):
        attention(f"dec.{layer}.self")
        attention(f"dec.{layer}.cross")
        feed_forward(f"dec.{layer}.ff")
        norm(f"dec.{layer}.norm1")
        norm(f"dec.{layer}.norm2")
        norm(f"dec.{layer}.norm3")
    if not config.tie_embeddings:
        shapes["out.w"] = (d, v)
    shapes["out.b"] = (v,)
    return shapes


def count_params(config: ModelConfig) -> int:
    """
    Number of trainable scalars, in closed form.

    Every linear map carries a bias; each layer norm a gain and a bias.
    """
    d, f, v = config.d_model, config.d_ff, config.vocab_size
    attention = 4 * (d * d + d)
    feed_forward = 2 * d * f + f + d
    encoder_layer = attention + feed_forward + 2 * (2 * d)
    decoder_layer = 2 * attention + feed_forward + 3 * (2 * d)
    output = (0 if config.tie_embeddings else d * v) + v
    return v * d + config.n_enc_layers * encoder_layer + config.n_dec_layers * decoder_layer + output


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """
    Fresh parameters drawn deterministically from `seed`.

    Matrices are uniform in +-sqrt(6 / (fan_in + fan_out)),
    biases are zero and layer-norm gains one.
    """
    rng = np.random.default_rng(seed)
    dtype = config.numpy_dtype
    arrays = OrderedDict()
    for name, shape in param_shapes(config).items():
        if name.endswith(".gain"):
            arrays[name] = np.ones(shape, dtype=dtype)
        elif len(shape) == 1:
            arrays[name] = np.zeros(shape, dtype=dtype)
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            arrays[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return ModelParams(arrays)


def positional_encoding(length: int, width: int, dtype=np.float64) -> np.ndarray:
    """Sinusoidal position table, sine on even and cosine on odd features."""
    positions = np.arange(length, dtype=np.float64)[:, None]
    rates = np.exp(-math.log(10000.0) * (np.arange(0, width, 2, dtype=np.float64) / width))
    table = np.zeros((length, width), dtype=np.float64)
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates)[:, : width // 2]
    return table.astype(dtype)


def _linear(x, weights, prefix):
    return add(matmul(x, weights[f"{prefix}.w"]), weights[f"{prefix}.b"])


def _split_heads(x, config):
    batch, length, _ = x.shape
    return transpose(reshape(x, (batch, length, config.n_heads, config.head_width)), (0, 2, 1, 3))


def _merge_heads(x, config):
    batch, _, length, _ = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (batch, length, config.d_model))


def _mask_bias(allowed: np.ndarray, dtype) -> Tensor:
    return Tensor(np.where(allowed, 0.0, MASKED).astype(dtype))


def attention(query_in, key_in, weights, prefix, bias, config, attention_log=None):
    """
    Multi-head scaled dot-product attention.

    `bias` is added to the scores before the softmax and broadcasts
    to (batch, heads, queries, keys); masked keys carry a large negative value.
    """
    q = _split_heads(_linear(query_in, weights, f"{prefix}.q"), config)
    k = _split_heads(_linear(key_in, weights, f"{prefix}.k"), config)
    v = _split_heads(_linear(key_in, weights, f"{prefix}.v"), config)
    scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(config.head_width))
    probs = softmax_rows(add(scores, bias))
    if attention_log is not None:
        attention_log.append(probs.data)
    return _linear(_merge_heads(matmul(probs, v), config), weights, f"{prefix}.o")


def _feed_forward(x, weights, prefix):
    return _linear(gelu(_linear(x, weights, f"{prefix}.in")), weights, f"{prefix}.out")


def _as_batch(ids) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None, :]
    if ids.ndim != 2:
        raise DimensionError(f"token ids must be (batch, length), got shape {ids.shape}")
    return ids


def _embed(ids, weights, config, positional):
    x = scale(embedding(weights["embedding"], ids), math.sqrt(config.d_model))
    if positional:
        x = add(x, positional_encoding(ids.shape[1], config.d_model, config.numpy_dtype))
    return x


def _check_length(length, config):
    if length > config.max_len:
        raise SequenceLengthError(f"sequence of {length} tokens exceeds max_len {config.max_len}")


def encode(
    src_ids,
    src_mask,
    weights: Mapping[str, Tensor],
    config: ModelConfig,
    *,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    positional: bool = True,
    attention_log: Optional[List[np.ndarray]] = None,
) -> Tensor:
    """
    Context states for a batch of source sequences, shape (batch, length, d_model).

    A one dimensional `src_ids` is taken as a batch of one.
    `src_mask` is true at real tokens; it defaults to the non PAD ids.
    Padded keys are excluded from every attention distribution.
    """
    src_ids = _as_batch(src_ids)
    _check_length(src_ids.shape[1], config)
    src_mask = src_ids != PAD if src_mask is None else _as_batch(src_mask).astype(bool)
    if src_mask.shape != src_ids.shape:
        raise DimensionError(f"source mask {src_mask.shape} does not match ids {src_ids.shape}")
    rate = config.dropout_rate
    bias = _mask_bias(src_mask[:, None, None, :], config.numpy_dtype)
    x = _embed(src_ids, weights, config, positional)
    for layer in range(config.n_enc_layers):
        prefix = f"enc.{layer}"
        attended = attention(x, x, weights, f"{prefix}.self", bias, config, attention_log)
        x = _norm(add(x, dropout(attended, rate, rng, training)), weights, f"{prefix}.norm1", config)
        transformed = _feed_forward(x, weights, f"{prefix}.ff")
        x = _norm(add(x, dropout(transformed, rate, rng, training)), weights, f"{prefix}.norm2", config)
    return x


def _norm(x, weights, prefix, config):
    return layer_norm(x, weights[f"{prefix}.gain"], weights[f"{prefix}.bias"], config.layer_norm_eps)


def decode_forward(
    tgt_in_ids,
    context: Tensor,
    src_mask,
    tgt_mask,
    weights: Mapping[str, Tensor],
    config: ModelConfig,
    *,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    positional: bool = True,
    attention_log: Optional[List[np.ndarray]] = None,
) -> Tensor:
    """
    Output logits, shape (batch, length, vocab_size), under teacher forcing.

    `tgt_in_ids` is the BOS prefixed target. Position i only sees
    target positions up to i, and every unpadded context state.
    """
    tgt_in_ids = _as_batch(tgt_in_ids)
    batch, length = tgt_in_ids.shape
    _check_length(length, config)
    if context.ndim != 3 or context.shape[0] != batch or context.shape[2] != config.d_model:
        raise DimensionError(f"context of shape {context.shape} does not fit targets {tgt_in_ids.shape}")
    src_mask = np.ones(context.shape[:2], dtype=bool) if src_mask is None else _as_batch(src_mask).astype(bool)
    tgt_mask = np.ones((batch, length), dtype=bool) if tgt_mask is None else _as_batch(tgt_mask).astype(bool)
    if src_mask.shape != context.shape[:2] or tgt_mask.shape != (batch, length):
        raise DimensionError(f"masks {src_mask.shape}, {tgt_mask.shape} do not match the sequences")
    rate = config.dropout_rate
    causal = np.tril(np.ones((length, length), dtype=bool))
    self_bias = _mask_bias(causal[None, None, :, :] & tgt_mask[:, None, None, :], config.numpy_dtype)
    cross_bias = _mask_bias(src_mask[:, None, None, :], config.numpy_dtype)
    x = _embed(tgt_in_ids, weights, config, positional)
    for layer in range(config.n_dec_layers):
        prefix = f"dec.{layer}"
        attended = attention(x, x, weights, f"{prefix}.self", self_bias, config, attention_log)
        x = _norm(add(x, dropout(attended, rate, rng, training)), weights, f"{prefix}.norm1", config)
        crossed = attention(x, context, weights, f"{prefix}.cross", cross_bias, config, attention_log)
        x = _norm(add(x, dropout(crossed, rate, rng, training)), weights, f"{prefix}.norm2", config)
        transformed = _feed_forward(x, weights, f"{prefix}.ff")
        x = _norm(add(x, dropout(transformed, rate, rng, training)), weights, f"{prefix}.norm3", config)
    projection = transpose(weights["embedding"], (1, 0)) if config.tie_embeddings else weights["out.w"]
    return add(matmul(x, projection), weights["out.b"])


@dataclass
class Seq2SeqModel:
    """Trained parameters together with their configuration and vocabulary fingerprint."""

    config: ModelConfig
    params: ModelParams
    vocab_fingerprint: Optional[str] = None

    def check_vocabulary(self, vocab) -> None:
        """Raises `ArtifactMismatchError` unless the vocabulary is the one the model was trained with."""
        if len(vocab) != self.config.vocab_size:
            raise ArtifactMismatchError(
                f"vocabulary has {len(vocab)} entries but the model was built for {self.config.vocab_size}"
            )
        if self.vocab_fingerprint is not None and vocab.fingerprint != self.vocab_fingerprint:
            raise ArtifactMismatchError(
                f"vocabulary fingerprint {vocab.fingerprint[:12]} does not match the checkpoint's "
                f"{self.vocab_fingerprint[:12]}"
            )

    def weights(self) -> Dict[str, Tensor]:
        """Parameters as tensors for a forward pass."""
        return self.params.leaves()


# vim: et ts=4 sw=4
