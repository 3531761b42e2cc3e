"""
Token level scoring of redactions against gold PHI annotations.

Every token of every document is one binary decision (PHI or not),
counts are summed over the corpus before computing precision, recall
and F1 (micro average). A token is gold PHI when it overlaps a gold
span by at least one character.
"""

import warnings
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence

from .data import LabeledDocument, PhiSpan, gold_token_categories, partial_overlaps
from .errors import AlignmentError, ArtifactIOError
from .inference import RedactionSpan, check_mode, deidentify_batch
from .model import Seq2SeqModel
from .text import Vocabulary

COUNTS = ("tp", "fp", "fn", "tn")
CATEGORY_COUNTS = ("tp", "fp", "fn")
UNDEFINED = "undefined"


def _ratio(numerator: int, denominator: int) -> Optional[float]:
    return numerator / denominator if denominator else None


def _harmonic(precision: Optional[float], recall: Optional[float]) -> Optional[float]:
    if precision is None or recall is None:
        return None
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass
class CategoryCounts:
    """Token counts of one PHI category."""

    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def recall(self) -> Optional[float]:
        """Share of the category tokens that are redacted, None without any."""
        return _ratio(self.tp, self.tp + self.fn)


@dataclass
class EvalReport:
    """
    Micro averaged confusion counts of PHI token decisions.

    Metrics with a zero denominator are None, never NaN.
    Per category counts attribute tp and fn to the gold category,
    and fp to the predicted one when predictions carry categories.
    """

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    n_documents: int = 0
    n_tokens: int = 0
    per_category: Dict[str, CategoryCounts] = field(default_factory=dict)

    @property
    def precision(self) -> Optional[float]:
        """Share of the redacted tokens that are PHI, None without redactions."""
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> Optional[float]:
        """Share of the PHI tokens that are redacted, None without PHI."""
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> Optional[float]:
        """Harmonic mean of precision and recall, None when either is undefined."""
        return _harmonic(self.precision, self.recall)

    def category(self, name: str) -> CategoryCounts:
        return self.per_category.setdefault(name, CategoryCounts())

    def __add__(self, other: "EvalReport") -> "EvalReport":
        result = EvalReport(
            **{name: getattr(self, name) + getattr(other, name) for name in (*COUNTS, "n_documents", "n_tokens")}
        )
        for report in (self, other):
            for name, counts in report.per_category.items():
                merged = result.category(name)
                for count in CATEGORY_COUNTS:
                    setattr(merged, count, getattr(merged, count) + getattr(counts, count))
        return result

    def dumps(self) -> str:
        """Report as `key=value` lines, undefined metrics written as `undefined`."""
        lines = [f"{name}={getattr(self, name)}" for name in ("n_documents", "n_tokens", *COUNTS)]
        lines += [f"{name}={format_metric(getattr(self, name))}" for name in ("precision", "recall", "f1")]
        for name in sorted(self.per_category):
            counts = self.per_category[name]
            lines += [f"category.{name}.{count}={getattr(counts, count)}" for count in CATEGORY_COUNTS]
        return "".join(line + "\n" for line in lines)

    @classmethod
    def loads(cls, content: str) -> "EvalReport":
        """Parses the counts back from `dumps`; metrics are recomputed."""
        report = cls()
        for number, line in enumerate(content.splitlines(), 1):
            if not line.strip():
                continue
            key, equals, value = line.partition("=")
            if not equals:
                raise ArtifactIOError(f"report line {number}: expected key=value, got '{line}'")
            if key in ("precision", "recall", "f1"):
                continue
            try:
                value = int(value)
            except ValueError:
                raise ArtifactIOError(f"report line {number}: '{key}' is not a count") from None
            if key.startswith("category."):
                _, name, count = key.split(".", 2)
                if count not in CATEGORY_COUNTS:
                    raise ArtifactIOError(f"report line {number}: unknown count '{count}'")
                setattr(report.category(name), count, value)
            elif key in (*COUNTS, "n_documents", "n_tokens"):
                setattr(report, key, value)
            else:
                raise ArtifactIOError(f"report line {number}: unknown key '{key}'")
        return report


def format_metric(value: Optional[float]) -> str:
    """Six decimals, or `undefined`."""
    return UNDEFINED if value is None else f"{value:.6f}"


def token_metrics(
    predicted: Sequence[bool],
    gold: Sequence[bool],
    predicted_categories: Optional[Sequence[Optional[str]]] = None,
    gold_categories: Optional[Sequence[Optional[str]]] = None,
) -> EvalReport:
    """Confusion counts of one document's per token PHI decisions."""
    if len(predicted) != len(gold):
        raise AlignmentError(f"{len(predicted)} predicted tokens but {len(gold)} gold tokens")
    for name, categories in (("predicted", predicted_categories), ("gold", gold_categories)):
        if categories is not None and len(categories) != len(gold):
            raise AlignmentError(f"{len(categories)} {name} categories for {len(gold)} tokens")
    report = EvalReport(n_documents=1, n_tokens=len(gold))
    for i, (is_predicted, is_gold) in enumerate(zip(predicted, gold)):
        if is_predicted and is_gold:
            report.tp += 1
        elif is_predicted:
            report.fp += 1
        elif is_gold:
            report.fn += 1
        else:
            report.tn += 1
        if is_gold and gold_categories is not None:
            counts = report.category(gold_categories[i])
            if is_predicted:
                counts.tp += 1
            else:
                counts.fn += 1
        if is_predicted and not is_gold and predicted_categories is not None and predicted_categories[i]:
            report.category(predicted_categories[i]).fp += 1
    return report


def _document_gold(doc: LabeledDocument):
    tokens = doc.tokens
    overlapping = partial_overlaps(tokens, doc.phi_spans)
    if overlapping:
        warnings.warn(
            f"document {doc.id}: {overlapping} tokens only partially overlap gold spans, counted as PHI",
            stacklevel=3,
        )
    return tokens, gold_token_categories(tokens, doc.phi_spans)


def evaluate_corpus(
    model: Seq2SeqModel,
    vocab: Vocabulary,
    docs: Iterable[LabeledDocument],
    mode: str = "constrained",
) -> EvalReport:
    """De-identifies every document and scores its redactions against the gold spans."""
    check_mode(mode)
    docs = list(docs)
    report = EvalReport()
    results = deidentify_batch((doc.text for doc in docs), model, vocab, mode)
    for doc, result in zip(docs, results):
        if isinstance(result, Exception):
            raise result
        _, gold = _document_gold(doc)
        predicted_categories = [vocab.category_of(i) if vocab.is_special(i) else None for i in result.output_ids]
        report += token_metrics(
            result.redacted,
            [category is not None for category in gold],
            predicted_categories if vocab.per_class else None,
            gold,
        )
    return report


def evaluate_predictions(
    docs: Iterable[LabeledDocument],
    predicted_spans: Mapping[str, Sequence[RedactionSpan]],
) -> EvalReport:
    """
    Scores previously produced redaction spans, keyed by document id.

    A token counts as redacted when it overlaps a predicted span.
    Documents absent from `predicted_spans` have no redactions.
    """
    report = EvalReport()
    for doc in docs:
        tokens, gold = _document_gold(doc)
        spans = sorted(RedactionSpan(*span) for span in predicted_spans.get(doc.id, ()))
        predicted_categories = gold_token_categories(tokens, [PhiSpan(s.start, s.end, s.category or "") for s in spans])
        predicted = [category is not None for category in predicted_categories]
        per_class = any(span.category for span in spans)
        report += token_metrics(
            predicted,
            [category is not None for category in gold],
            [category or None for category in predicted_categories] if per_class else None,
            gold,
        )
    return report


class Reference(NamedTuple):
    """Published scores, in percent."""

    name: str
    precision: float
    recall: float
    f1: float


PUBLISHED_REFERENCE = Reference("Proposed Method", 98.12, 98.91, 98.51)
REFERENCE_LABEL = "reference (not reproduced)"


def compare_report(
    ours: EvalReport,
    references: Iterable[Reference] = (PUBLISHED_REFERENCE,),
    name: str = "redactseq",
) -> str:
    """
    Text table with our scores first and then the references, in percent.

    References are labelled as such; no equality is implied.
    """

    def percent(value):
        return UNDEFINED if value is None else f"{100 * value:.2f}"

    rows = [(f"{name} (this run)", percent(ours.precision), percent(ours.recall), percent(ours.f1))]
    rows += [
        (f"{ref.name} [{REFERENCE_LABEL}]", f"{ref.precision:.2f}", f"{ref.recall:.2f}", f"{ref.f1:.2f}")
        for ref in references
    ]
    header = ("system", "precision", "recall", "f1")
    widths = [max(len(row[column]) for row in [header, *rows]) for column in range(len(header))]
    lines: List[str] = []
    for row in [header, *rows]:
        cells = [row[0].ljust(widths[0])] + [cell.rjust(width) for cell, width in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"


# vim: et ts=4 sw=4
