"""
De-identification of documents with a trained model.

Decoding is greedy and length synchronized: a k token document gets
exactly k output tokens. In constrained mode position i may only
emit the source token at i or a redaction special, so the output has
the copy-or-redact form by construction. Documents longer than the
model's `max_len` are decoded in overlapping windows whose redactions
are merged at reassembly.
"""

import csv
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ArtifactIOError, ConfigError, RedactSeqError, SequenceLengthError
from .model import ModelConfig, Seq2SeqModel, decode_forward, encode
from .numerics import Tensor
from .text import BOS, Token, Vocabulary, render

logger = logging.getLogger(__name__)

MODES = ("constrained", "unconstrained")
DEFAULT_OVERLAP = 16
# Category column of the span sidecar in single special mode
SINGLE_CATEGORY = "PHI"


class RedactionSpan(NamedTuple):
    """Character span of redacted text; the category is set in per-class mode."""

    start: int
    end: int
    category: Optional[str] = None


@dataclass
class DeidResult:
    """Redacted text of a document along with the decoded token ids."""

    redacted_text: str
    output_ids: List[int]
    source_ids: List[int]
    tokens: List[Token]
    redaction_spans: List[RedactionSpan]
    mode: str
    violations: int = 0
    redacted: List[bool] = field(default_factory=list)

    def __len__(self):
        return len(self.output_ids)

    @property
    def violation_rate(self) -> Optional[float]:
        """Fraction of positions neither copying the source nor redacting, None for empty documents."""
        if not self.output_ids:
            return None
        return self.violations / len(self.output_ids)


def check_mode(mode: str) -> str:
    """Returns the decoding mode, raising `ConfigError` if unknown."""
    if mode not in MODES:
        raise ConfigError(f"decoding mode must be one of {', '.join(MODES)}, got '{mode}'")
    return mode


def greedy_decode(
    src_ids: Sequence[int],
    weights: Mapping[str, Tensor],
    config: ModelConfig,
    special_ids: Sequence[int],
    mode: str = "constrained",
) -> List[int]:
    """
    Decodes exactly len(src_ids) tokens, each the argmax given the previous ones.

    In constrained mode the argmax runs over the source token at the
    same position and the redaction specials; ties go to the copy.
    """
    src = np.asarray(src_ids, dtype=np.int64)[None, :]
    length = src.shape[1]
    if not length:
        return []
    context = encode(src, None, weights, config)
    specials = np.asarray(special_ids, dtype=np.int64)
    decoded = [BOS]
    for position in range(length):
        logits = decode_forward(np.asarray([decoded]), context, None, None, weights, config).data[0, position]
        if mode == "constrained":
            candidates = np.concatenate([src[0, position : position + 1], specials])
            choice = candidates[int(np.argmax(logits[candidates]))]
        else:
            choice = int(np.argmax(logits))
        decoded.append(int(choice))
    return decoded[1:]


def window_long_document(n_tokens: int, max_len: int, overlap: int = DEFAULT_OVERLAP) -> List[Tuple[int, int]]:
    """
    Token ranges [start, end) of at most `max_len` tokens covering the document.

    Consecutive windows share `overlap` tokens; the last one ends at the
    last token and may be shorter.
    """
    if max_len < 1:
        raise ConfigError(f"max_len must be positive, got {max_len}")
    if not 0 <= overlap < max_len:
        raise ConfigError(f"window overlap must lie in [0, max_len), got {overlap} for max_len {max_len}")
    if n_tokens <= 0:
        return []
    windows = []
    start = 0
    while True:
        end = min(start + max_len, n_tokens)
        windows.append((start, end))
        if end == n_tokens:
            return windows
        start += max_len - overlap


def reassemble(
    n_tokens: int,
    windows: Sequence[Tuple[int, int]],
    outputs: Sequence[Sequence[int]],
    special_ids: Sequence[int],
) -> List[int]:
    """
    Merges window outputs into one sequence.

    A position covered by several windows is redacted if any of them
    redacts it, with the special of the first one that does.
    Otherwise it takes the output of the first covering window.
    """
    specials = set(special_ids)
    merged: List[Optional[int]] = [None] * n_tokens
    for (start, end), output in zip(windows, outputs):
        if len(output) != end - start:
            raise SequenceLengthError(f"window {start}-{end} decoded into {len(output)} tokens")
        for position, token_id in zip(range(start, end), output):
            current = merged[position]
            if current is None or (current not in specials and token_id in specials):
                merged[position] = token_id
    if any(token_id is None for token_id in merged):
        raise SequenceLengthError("windows do not cover every token")
    return merged


def _decode_document(src_ids, weights, config, special_ids, mode, window, overlap):
    n_tokens = len(src_ids)
    if n_tokens <= config.max_len:
        return greedy_decode(src_ids, weights, config, special_ids, mode)
    if not window:
        raise SequenceLengthError(f"document of {n_tokens} tokens exceeds max_len {config.max_len}")
    windows = window_long_document(n_tokens, config.max_len, overlap)
    logger.debug("decoding %d tokens in %d windows", n_tokens, len(windows))
    outputs = [greedy_decode(src_ids[start:end], weights, config, special_ids, mode) for start, end in windows]
    return reassemble(n_tokens, windows, outputs, special_ids)


def _result(text, vocab, tokens, src_ids, output_ids, mode) -> DeidResult:
    surfaces, spans, redacted = [], [], []
    violations = 0
    for token, source, output in zip(tokens, src_ids, output_ids):
        is_special = vocab.is_special(output)
        redacted.append(is_special)
        if is_special:
            surfaces.append(vocab.decode([output])[0])
            spans.append(RedactionSpan(token.start, token.end, vocab.category_of(output)))
        elif output == source:
            surfaces.append(token.surface)
        else:
            violations += 1
            surfaces.append(vocab.token_of(output))
    return DeidResult(
        redacted_text=render(text, tokens, surfaces),
        output_ids=list(output_ids),
        source_ids=list(src_ids),
        tokens=list(tokens),
        redaction_spans=spans,
        mode=mode,
        violations=violations,
        redacted=redacted,
    )


def _deidentify(text, model, vocab, weights, mode, window, overlap) -> DeidResult:
    sequence = vocab.encode_text(text)
    output_ids = _decode_document(sequence.ids, weights, model.config, vocab.special_ids, mode, window, overlap)
    return _result(text, vocab, sequence.tokens, sequence.ids, output_ids, mode)


def deidentify(
    text: str,
    model: Seq2SeqModel,
    vocab: Vocabulary,
    mode: str = "constrained",
    window: bool = True,
    overlap: int = DEFAULT_OVERLAP,
) -> DeidResult:
    """
    Redacts the PHI tokens of a document.

    Copied positions keep the original surface, even for words the
    vocabulary maps to UNK, and the original whitespace is kept.
    Redacted positions read REDACTED, or REDACTED-<CATEGORY>
    with a per-class vocabulary.
    """
    check_mode(mode)
    model.check_vocabulary(vocab)
    return _deidentify(text, model, vocab, model.weights(), mode, window, overlap)


def deidentify_batch(
    documents: Iterable[str],
    model: Seq2SeqModel,
    vocab: Vocabulary,
    mode: str = "constrained",
    window: bool = True,
    overlap: int = DEFAULT_OVERLAP,
) -> List[Union[DeidResult, RedactSeqError]]:
    """
    Redacts every document on its own, so results do not depend on the batch.

    A document that fails yields its exception in place of the result;
    the rest are still processed.
    """
    check_mode(mode)
    model.check_vocabulary(vocab)
    weights = model.weights()
    results = []
    for index, text in enumerate(documents):
        try:
            results.append(_deidentify(text, model, vocab, weights, mode, window, overlap))
        except RedactSeqError as e:
            logger.warning("document %d failed: %s", index, e)
            results.append(e)
    return results


# Span sidecar


def dumps_spans(results: Iterable[Tuple[str, DeidResult]]) -> str:
    """Tab separated span lines: document id, start, end and category."""
    lines = []
    for doc_id, result in results:
        for span in result.redaction_spans:
            lines.append(f"{doc_id}\t{span.start}\t{span.end}\t{span.category or SINGLE_CATEGORY}\n")
    return "".join(lines)


def write_spans(results: Iterable[Tuple[str, DeidResult]], path: Union[str, Path]) -> Path:
    """Writes the redacted spans as `doc_id start end category` tab separated lines."""
    path = Path(path)
    try:
        path.write_text(dumps_spans(results), encoding="utf8")
    except OSError as e:
        raise ArtifactIOError(f"cannot write spans {path}: {e}") from e
    return path


def read_spans(path: Union[str, Path]) -> Dict[str, List[RedactionSpan]]:
    """Redacted spans per document id, as written by `write_spans`."""
    path = Path(path)
    try:
        content = path.read_text(encoding="utf8")
    except (OSError, UnicodeDecodeError) as e:
        raise ArtifactIOError(f"cannot read spans {path}: {e}") from e
    spans = defaultdict(list)
    for number, row in enumerate(csv.reader(content.splitlines(), delimiter="\t"), 1):
        if not row:
            continue
        try:
            doc_id, start, end, category = row
            span = RedactionSpan(int(start), int(end), None if category == SINGLE_CATEGORY else category)
        except ValueError:
            raise ArtifactIOError(f"{path}:{number}: expected 'doc_id start end category'") from None
        spans[doc_id].append(span)
    return dict(spans)


# vim: et ts=4 sw=4
