"""
Teacher forced training with weighted cross entropy and ADAM.

Targets at redaction positions weigh `phi_weight`, other real positions
weigh 1 and padding 0. Each epoch is scored on the validation documents
with constrained decoding; the parameters with the best validation
recall are the result, and training stops after `patience` epochs
without improving it.
"""

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import LabeledDocument, TrainingPair, to_training_pairs
from .errors import ArtifactIOError, ConfigError, EmptySplitError, NonFiniteLossError
from .evaluation import EvalReport, evaluate_corpus, format_metric
from .inference import check_mode
from .model import ModelConfig, ModelParams, Seq2SeqModel, decode_forward, encode, init_params
from .numerics import AdamState, Tape, Tensor, adam_step, clip_by_global_norm, weighted_cross_entropy
from .text import BOS, PAD, Vocabulary
from .utils.sections import Section

__all__ = [
    "Batch",
    "EpochRecord",
    "MetricsLog",
    "StepResult",
    "TrainingConfig",
    "TrainingPair",
    "TrainingResult",
    "batch_loss",
    "make_batches",
    "step",
    "train",
]

logger = logging.getLogger(__name__)

Seed = Union[int, Sequence[int]]


@dataclass
class TrainingConfig(Section):
    """Optimisation and schedule settings."""

    learning_rate: float = 0.002
    batch_size: int = 16
    max_epochs: int = 30
    phi_weight: float = 5.0
    seed: int = 0
    checkpoint_every: int = 0
    grad_clip_norm: Optional[float] = 1.0
    warmup_steps: int = 0
    patience: int = 3
    per_class: bool = False
    bucket_factor: int = 8
    mode: str = "constrained"
    vocab_min_freq: float = 1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"training.learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"training.batch_size must be at least 1, got {self.batch_size}")
        if self.max_epochs < 0:
            raise ConfigError(f"training.max_epochs can not be negative, got {self.max_epochs}")
        if not self.phi_weight >= 1:
            raise ConfigError(f"training.phi_weight must be at least 1, got {self.phi_weight}")
        if self.seed < 0:
            raise ConfigError(f"training.seed can not be negative, got {self.seed}")
        if self.checkpoint_every < 0 or self.warmup_steps < 0:
            raise ConfigError("training.checkpoint_every and training.warmup_steps can not be negative")
        if self.grad_clip_norm is not None and not self.grad_clip_norm > 0:
            raise ConfigError(f"training.grad_clip_norm must be positive or null, got {self.grad_clip_norm}")
        if self.patience < 1 or self.bucket_factor < 1:
            raise ConfigError("training.patience and training.bucket_factor must be at least 1")
        if not self.vocab_min_freq >= 1:
            raise ConfigError(f"training.vocab_min_freq must be at least 1, got {self.vocab_min_freq}")
        check_mode(self.mode)

    def learning_rate_at(self, step_count: int) -> float:
        """Rate for the `step_count`-th update: constant, or inverse square root after a linear warmup."""
        if not self.warmup_steps:
            return self.learning_rate
        return self.learning_rate * min(step_count / self.warmup_steps, math.sqrt(self.warmup_steps / step_count))


class Batch(NamedTuple):
    """Padded pairs, shape (batch, length) for every array."""

    src_ids: np.ndarray
    tgt_ids: np.ndarray
    dec_in_ids: np.ndarray
    mask: np.ndarray
    weights: np.ndarray
    pair_indices: Tuple[int, ...]
    batch_id: int

    @property
    def n_pad(self) -> int:
        """Number of padding positions."""
        return int((~self.mask).sum())


def _pad(pairs: Sequence[TrainingPair], indices: Sequence[int], phi_weight: float, batch_id: int) -> Batch:
    length = max(len(pairs[i]) for i in indices)
    shape = (len(indices), length)
    src = np.full(shape, PAD, dtype=np.int64)
    tgt = np.full(shape, PAD, dtype=np.int64)
    dec_in = np.full(shape, PAD, dtype=np.int64)
    mask = np.zeros(shape, dtype=bool)
    weights = np.zeros(shape, dtype=np.float64)
    for row, index in enumerate(indices):
        pair = pairs[index]
        k = len(pair)
        src[row, :k] = pair.src_ids
        tgt[row, :k] = pair.tgt_ids
        dec_in[row, 0] = BOS
        dec_in[row, 1:k] = pair.tgt_ids[: k - 1]
        mask[row, :k] = True
        weights[row, :k] = pair.weights(phi_weight)
    return Batch(src, tgt, dec_in, mask, weights, tuple(indices), batch_id)


def make_batches(
    pairs: Sequence[TrainingPair],
    batch_size: int,
    seed: Seed,
    phi_weight: float = 1.0,
    bucket_factor: int = 8,
) -> List[Batch]:
    """
    Shuffled, length bucketed and padded batches.

    Pairs are shuffled by `seed` and cut into pools of
    `batch_size * bucket_factor`; each pool is sorted by length and
    cut into batches, and the batch order is shuffled again.
    Empty pairs are left out.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be at least 1, got {batch_size}")
    rng = np.random.default_rng(seed)
    order = [int(i) for i in rng.permutation(len(pairs)) if len(pairs[i])]
    if not order:
        raise EmptySplitError("no non-empty training pairs to batch")
    pool_size = batch_size * bucket_factor
    groups = []
    for pool_start in range(0, len(order), pool_size):
        pool = sorted(order[pool_start : pool_start + pool_size], key=lambda i: len(pairs[i]))
        groups += [pool[start : start + batch_size] for start in range(0, len(pool), batch_size)]
    return [_pad(pairs, groups[g], phi_weight, batch_id) for batch_id, g in enumerate(rng.permutation(len(groups)))]


def batch_loss(
    batch: Batch,
    weights: Mapping[str, Tensor],
    config: ModelConfig,
    *,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Weighted cross entropy of the teacher forced batch."""
    context = encode(batch.src_ids, batch.mask, weights, config, training=training, rng=rng)
    logits = decode_forward(
        batch.dec_in_ids, context, batch.mask, batch.mask, weights, config, training=training, rng=rng
    )
    return weighted_cross_entropy(logits, batch.tgt_ids, batch.weights)


class StepResult(NamedTuple):
    """Loss, gradient norm, and the parameters and optimizer state after one step."""

    loss: float
    grad_norm: float
    params: ModelParams
    adam_state: AdamState


def step(
    batch: Batch,
    params: ModelParams,
    adam_state: AdamState,
    model_config: ModelConfig,
    training_config: TrainingConfig,
    step_index: int,
) -> StepResult:
    """
    One optimisation step: forward, backward, clipping and ADAM update.

    Dropout draws from a generator seeded by (seed, step_index),
    so a resumed run repeats the exact same steps.
    """
    rng = np.random.default_rng([training_config.seed, step_index])
    leaves = params.leaves(trainable=True)
    with Tape() as tape:
        loss = batch_loss(batch, leaves, model_config, training=True, rng=rng)
    value = loss.item()
    if not math.isfinite(value):
        raise NonFiniteLossError(step_index, batch.batch_id, value)
    grads = tape.backward(loss, leaves)
    grads, norm = clip_by_global_norm(grads, training_config.grad_clip_norm)
    learning_rate = training_config.learning_rate_at(adam_state.step_count + 1)
    arrays, adam_state = adam_step(params, grads, adam_state, learning_rate=learning_rate)
    logger.debug("step %d batch %d loss %.6f grad_norm %.4f", step_index, batch.batch_id, value, norm)
    return StepResult(value, norm, params.updated(arrays), adam_state)


class EpochRecord(NamedTuple):
    """Metrics log line of one epoch."""

    epoch: int
    step: int
    train_loss: float
    val_precision: Optional[float]
    val_recall: Optional[float]
    val_f1: Optional[float]

    def dumps(self) -> str:
        return (
            f"step={self.step} epoch={self.epoch} train_loss={self.train_loss:.12g}"
            f" val_precision={format_metric(self.val_precision)}"
            f" val_recall={format_metric(self.val_recall)}"
            f" val_f1={format_metric(self.val_f1)}"
        )


class MetricsLog:
    """
    Append-only training log, one `key=value` record per epoch.

    Without a path, records are only kept in memory.
    An existing file is emptied unless `append` is set.
    """

    def __init__(self, path: Optional[Union[str, Path]] = None, append: bool = False):
        self.path = Path(path) if path else None
        self.records: List[EpochRecord] = []
        if self.path is None:
            return
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if not append:
                self.path.write_text("", encoding="utf8")
        except OSError as e:
            raise ArtifactIOError(f"cannot write metrics log {self.path}: {e}") from e

    def append(self, record: EpochRecord) -> None:
        """Adds a record, writing it to the file if any."""
        self.records.append(record)
        if self.path is None:
            return
        with self.path.open("a", encoding="utf8") as f:
            f.write(record.dumps() + "\n")

    @classmethod
    def resumed(cls, path: Optional[Union[str, Path]], epoch: int) -> "MetricsLog":
        """Log rewritten to keep only the records of the epochs before `epoch`."""
        previous = cls.read(path) if path and Path(path).exists() else []
        log = cls(path)
        for record in previous:
            if record.epoch < epoch:
                log.append(record)
        return log

    @staticmethod
    def read(path: Union[str, Path]) -> List[EpochRecord]:
        """Records of a metrics log file."""
        def metric(value):
            return None if value == "undefined" else float(value)

        try:
            lines = Path(path).read_text(encoding="utf8").splitlines()
        except (OSError, UnicodeDecodeError) as e:
            raise ArtifactIOError(f"cannot read metrics log {path}: {e}") from e
        records = []
        for line in lines:
            if not line.strip():
                continue
            fields = dict(item.split("=", 1) for item in line.split())
            records.append(
                EpochRecord(
                    epoch=int(fields["epoch"]),
                    step=int(fields["step"]),
                    train_loss=float(fields["train_loss"]),
                    val_precision=metric(fields["val_precision"]),
                    val_recall=metric(fields["val_recall"]),
                    val_f1=metric(fields["val_f1"]),
                )
            )
        return records


@dataclass
class TrainingResult:
    """Best model and the state at the end of training."""

    model: Seq2SeqModel
    adam_state: AdamState
    history: List[EpochRecord]
    best_epoch: Optional[int] = None
    best_report: Optional[EvalReport] = None
    steps: int = 0
    stopped_early: bool = False


def chunk_pairs(pairs: Sequence[TrainingPair], max_len: int) -> List[TrainingPair]:
    """Splits pairs longer than `max_len` into consecutive pieces."""
    chunks = []
    for pair in pairs:
        for start in range(0, max(len(pair), 1), max_len):
            piece = slice(start, start + max_len)
            chunks.append(TrainingPair(pair.src_ids[piece], pair.tgt_ids[piece], pair.phi_mask[piece], pair.doc_id))
    return chunks


def _improved(recall: Optional[float], best: Optional[float], best_epoch: Optional[int]) -> bool:
    if best_epoch is None:
        return True
    return recall is not None and (best is None or recall > best)


def _hex(value: Optional[float]) -> Optional[str]:
    return None if value is None else float(value).hex()


def _unhex(value: Optional[str]) -> Optional[float]:
    return None if value is None else float.fromhex(value)


def _resume_point(path: Union[str, Path], model_config: ModelConfig, vocab: Vocabulary) -> Checkpoint:
    checkpoint = load_checkpoint(path)
    if checkpoint.adam_state is None or "epoch_losses" not in checkpoint.progress:
        raise ConfigError(f"{path} is not a periodic training checkpoint, it can not be resumed")
    if checkpoint.model.config != model_config:
        raise ConfigError(f"{path} was written with a different model configuration")
    checkpoint.model.check_vocabulary(vocab)
    return checkpoint


def _saved_best(path: Optional[Path], epoch: int) -> Optional[Seq2SeqModel]:
    if path is None or not path.exists():
        return None
    checkpoint = load_checkpoint(path)
    if checkpoint.progress.get("epoch") != epoch:
        return None
    return checkpoint.model


def train(
    train_docs: Sequence[LabeledDocument],
    val_docs: Sequence[LabeledDocument],
    vocab: Vocabulary,
    model_config: ModelConfig,
    training_config: TrainingConfig,
    checkpoint_path: Optional[Union[str, Path]] = None,
    metrics_path: Optional[Union[str, Path]] = None,
    resume_from: Optional[Union[str, Path]] = None,
) -> TrainingResult:
    """
    Trains a model and returns the best one on validation recall.

    The best model is saved to `checkpoint_path` each time it improves.
    With `checkpoint_every` set, the latest state is also saved every
    that many steps next to it, with a `.last` suffix.

    `resume_from` names such a `.last` checkpoint. Training continues
    from its step with the same settings, and ends with the same model,
    history and checkpoints as a run that was never interrupted.
    """
    if not train_docs:
        raise EmptySplitError("the training split is empty")
    if not val_docs:
        raise EmptySplitError("the validation split is empty")
    if training_config.per_class and not vocab.per_class:
        raise ConfigError("per-class training needs a vocabulary built with categories")
    if model_config.vocab_size != len(vocab):
        logger.info("setting model vocab_size to %d to fit the vocabulary", len(vocab))
        model_config = replace(model_config, vocab_size=len(vocab))

    pairs = [to_training_pairs(doc, vocab, training_config.per_class) for doc in train_docs]
    pairs = chunk_pairs(pairs, model_config.max_len)
    checkpoint_path = Path(checkpoint_path) if checkpoint_path else None
    last_path = checkpoint_path.with_name(checkpoint_path.name + ".last") if checkpoint_path else None

    def snapshot(model_params):
        return Seq2SeqModel(model_config, model_params, vocab.fingerprint)

    start_epoch = 1
    step_index = 0
    stale_epochs = 0
    best_epoch = None
    best_recall = None
    resumed_losses: List[float] = []
    if resume_from:
        checkpoint = _resume_point(resume_from, model_config, vocab)
        progress = checkpoint.progress
        params, adam_state = checkpoint.model.params, checkpoint.adam_state
        start_epoch, step_index = progress["epoch"], progress["step"]
        stale_epochs = progress["stale_epochs"]
        best_epoch = progress["best_epoch"]
        best_recall = _unhex(progress["best_recall"])
        resumed_losses = [float.fromhex(loss) for loss in progress["epoch_losses"]]
        log = MetricsLog.resumed(metrics_path, start_epoch)
        logger.info("resuming from %s at epoch %d, step %d", resume_from, start_epoch, step_index)
    else:
        params = init_params(model_config, training_config.seed)
        adam_state = AdamState.initial(params, learning_rate=training_config.learning_rate)
        log = MetricsLog(metrics_path)

    result = TrainingResult(snapshot(params), adam_state, log.records, best_epoch)
    if best_epoch is not None:
        best = _saved_best(checkpoint_path, best_epoch)
        if best is None:
            logger.warning("%s does not hold the best model of epoch %d", checkpoint_path, best_epoch)
        else:
            result.model = best
            result.best_report = evaluate_corpus(best, vocab, val_docs, training_config.mode)
    logger.info(
        "training on %d pairs, validating on %d documents, %d parameters",
        len(pairs),
        len(val_docs),
        params.size,
    )
    for epoch in range(start_epoch, training_config.max_epochs + 1):
        batches = make_batches(
            pairs,
            training_config.batch_size,
            (training_config.seed, epoch),
            training_config.phi_weight,
            training_config.bucket_factor,
        )
        losses = list(resumed_losses) if epoch == start_epoch else []
        for batch in batches[len(losses) :]:
            outcome = step(batch, params, adam_state, model_config, training_config, step_index)
            params, adam_state = outcome.params, outcome.adam_state
            losses.append(outcome.loss)
            step_index += 1
            if last_path and training_config.checkpoint_every and step_index % training_config.checkpoint_every == 0:
                progress = dict(
                    epoch=epoch,
                    step=step_index,
                    stale_epochs=stale_epochs,
                    best_epoch=result.best_epoch,
                    best_recall=_hex(best_recall),
                    epoch_losses=[loss.hex() for loss in losses],
                )
                save_checkpoint(last_path, snapshot(params), adam_state, progress)
                logger.debug("saved %s at step %d", last_path, step_index)

        report = evaluate_corpus(snapshot(params), vocab, val_docs, training_config.mode)
        record = EpochRecord(epoch, step_index, float(np.mean(losses)), report.precision, report.recall, report.f1)
        log.append(record)
        logger.info(
            "epoch %d: train_loss=%.6f val_precision=%s val_recall=%s val_f1=%s",
            epoch,
            record.train_loss,
            format_metric(report.precision),
            format_metric(report.recall),
            format_metric(report.f1),
        )
        if _improved(report.recall, best_recall, result.best_epoch):
            best_recall = report.recall
            stale_epochs = 0
            result.model = snapshot(params)
            result.best_epoch = epoch
            result.best_report = report
            if checkpoint_path:
                progress = dict(epoch=epoch, step=step_index, val_recall=format_metric(report.recall))
                save_checkpoint(checkpoint_path, result.model, adam_state, progress)
                logger.info("saved best model to %s", checkpoint_path)
        else:
            stale_epochs += 1
            if stale_epochs >= training_config.patience:
                logger.info("no validation recall improvement for %d epochs, stopping", stale_epochs)
                result.stopped_early = True
                break

    result.adam_state = adam_state
    result.steps = step_index
    return result


# vim: et ts=4 sw=4
