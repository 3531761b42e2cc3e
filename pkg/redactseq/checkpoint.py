"""
Self-describing checkpoint files.

Layout: a magic line, the byte length of a YAML header, the header
(model config, vocabulary fingerprint, training progress, optimizer
hyper-parameters and a table of tensors), then the raw little-endian
tensor payload. The header holds a SHA-256 of the payload so truncation
and corruption are detected on load.
"""

import hashlib
from pathlib import Path
from typing import Any, Dict, NamedTuple, Optional, Union

import numpy as np
from yamlns import namespace as ns

from .errors import ArtifactIOError, CheckpointCorruptError, ConfigError
from .model import ModelConfig, ModelParams, Seq2SeqModel
from .numerics import AdamState
from .utils.sections import coerce

MAGIC = b"REDACTSEQ-CHECKPOINT 1\n"
GROUPS = ("params", "adam.first", "adam.second")


class Checkpoint(NamedTuple):
    """A loaded checkpoint: the model, the optimizer state if saved, and the training progress."""

    model: Seq2SeqModel
    adam_state: Optional[AdamState]
    progress: Dict[str, Any]


def _little_endian(value: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(value, dtype=value.dtype.newbyteorder("<"))


def dumps_checkpoint(
    model: Seq2SeqModel,
    adam_state: Optional[AdamState] = None,
    progress: Optional[Dict[str, Any]] = None,
) -> bytes:
    """Serializes a model, and optionally its ADAM state and progress, into checkpoint bytes."""
    tensors = [("params", name, value) for name, value in model.params.items()]
    if adam_state is not None:
        tensors += [("adam.first", name, value) for name, value in adam_state.first_moment.items()]
        tensors += [("adam.second", name, value) for name, value in adam_state.second_moment.items()]

    table = []
    chunks = []
    offset = 0
    for group, name, value in tensors:
        chunk = _little_endian(np.asarray(value)).tobytes()
        table.append(
            ns(
                group=group,
                name=name,
                shape=list(value.shape),
                dtype=np.asarray(value).dtype.newbyteorder("<").str,
                offset=offset,
                nbytes=len(chunk),
            )
        )
        chunks.append(chunk)
        offset += len(chunk)
    payload = b"".join(chunks)

    header = ns(
        config=model.config.to_ns(),
        vocab_fingerprint=model.vocab_fingerprint,
        progress=ns(progress or {}),
        optimizer=None
        if adam_state is None
        else ns(
            learning_rate=adam_state.learning_rate,
            beta1=adam_state.beta1,
            beta2=adam_state.beta2,
            epsilon=adam_state.epsilon,
            step_count=adam_state.step_count,
        ),
        tensors=table,
        payload_bytes=len(payload),
        payload_sha256=hashlib.sha256(payload).hexdigest(),
    )
    header_bytes = header.dump().encode("utf8")
    return MAGIC + b"%d\n" % len(header_bytes) + header_bytes + payload


def save_checkpoint(
    path: Union[str, Path],
    model: Seq2SeqModel,
    adam_state: Optional[AdamState] = None,
    progress: Optional[Dict[str, Any]] = None,
) -> Path:
    """Writes the checkpoint atomically; identical inputs give identical bytes."""
    path = Path(path)
    content = dumps_checkpoint(model, adam_state, progress)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        partial = path.with_name(path.name + ".partial")
        partial.write_bytes(content)
        partial.replace(path)
    except OSError as e:
        raise ArtifactIOError(f"cannot write checkpoint {path}: {e}") from e
    return path


def loads_checkpoint(content: bytes, source: str = "checkpoint") -> Checkpoint:
    """Parses checkpoint bytes, checking the magic, the lengths and the payload checksum."""
    if not content.startswith(MAGIC):
        raise CheckpointCorruptError(f"{source}: not a redactseq checkpoint")
    rest = content[len(MAGIC) :]
    length_line, newline, rest = rest.partition(b"\n")
    if not newline or not length_line.isdigit() or len(rest) < int(length_line):
        raise CheckpointCorruptError(f"{source}: truncated header")
    header_length = int(length_line)
    try:
        header = ns.loads(rest[:header_length].decode("utf8"))
    except Exception as e:
        raise CheckpointCorruptError(f"{source}: unreadable header ({e})") from e
    required = ("config", "tensors", "payload_bytes", "payload_sha256")
    missing = [key for key in required if not isinstance(header, dict) or key not in header]
    if missing:
        raise CheckpointCorruptError(f"{source}: header lacks {', '.join(missing)}")
    payload = rest[header_length:]
    if len(payload) != header.payload_bytes:
        raise CheckpointCorruptError(
            f"{source}: payload has {len(payload)} bytes, header announces {header.payload_bytes} (truncated?)"
        )
    if hashlib.sha256(payload).hexdigest() != header.payload_sha256:
        raise CheckpointCorruptError(f"{source}: payload checksum mismatch")

    groups = {group: {} for group in GROUPS}
    for entry in header.tensors:
        raw = payload[entry.offset : entry.offset + entry.nbytes]
        value = np.frombuffer(raw, dtype=np.dtype(entry.dtype)).astype(np.dtype(entry.dtype).newbyteorder("="))
        groups[entry.group][entry.name] = value.reshape(entry.shape)

    try:
        config = ModelConfig.from_mapping(header.config, "config")
    except ConfigError as e:
        raise CheckpointCorruptError(f"{source}: {e}") from e
    model = Seq2SeqModel(config, ModelParams(groups["params"]), header.vocab_fingerprint)
    adam_state = None
    if header.optimizer is not None:
        adam_state = AdamState(
            first_moment=groups["adam.first"],
            second_moment=groups["adam.second"],
            **coerce(header.optimizer),
        )
    return Checkpoint(model, adam_state, coerce(dict(header.progress or {})))


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Reads and parses a checkpoint file."""
    path = Path(path)
    try:
        content = path.read_bytes()
    except OSError as e:
        raise ArtifactIOError(f"cannot read checkpoint {path}: {e}") from e
    return loads_checkpoint(content, str(path))


# vim: et ts=4 sw=4
