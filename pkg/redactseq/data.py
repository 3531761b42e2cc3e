"""
Corpora of PHI labeled clinical notes.

Labeled documents are raw text plus character spans of PHI mentions.
This module turns them into training pairs, generates synthetic ones,
reads and writes i2b2-2014 style XML records, and stores corpora as
JSON lines, one document per line.
"""

import json
import random
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ArtifactIOError, ConfigError, EmptySplitError, I2b2FormatError
from .fillers import available_fillers
from .text import Token, Vocabulary, tokenize
from .utils.hyperscript import E, tostring
from .utils.records import I2b2Record
from .utils.sections import Section


class PhiCategory(str, Enum):
    """Top level PHI families, collapsing the HIPAA identifier list."""

    NAME = "NAME"
    PROFESSION = "PROFESSION"
    LOCATION = "LOCATION"
    AGE = "AGE"
    DATE = "DATE"
    CONTACT = "CONTACT"
    ID = "ID"


CATEGORIES = [category.value for category in PhiCategory]

# i2b2-2014 TYPE attribute to category
I2B2_TYPE_MAP = {
    "PATIENT": PhiCategory.NAME,
    "DOCTOR": PhiCategory.NAME,
    "USERNAME": PhiCategory.NAME,
    "PROFESSION": PhiCategory.PROFESSION,
    "ROOM": PhiCategory.LOCATION,
    "DEPARTMENT": PhiCategory.LOCATION,
    "HOSPITAL": PhiCategory.LOCATION,
    "ORGANIZATION": PhiCategory.LOCATION,
    "STREET": PhiCategory.LOCATION,
    "CITY": PhiCategory.LOCATION,
    "STATE": PhiCategory.LOCATION,
    "COUNTRY": PhiCategory.LOCATION,
    "ZIP": PhiCategory.LOCATION,
    "LOCATION-OTHER": PhiCategory.LOCATION,
    "AGE": PhiCategory.AGE,
    "DATE": PhiCategory.DATE,
    "PHONE": PhiCategory.CONTACT,
    "FAX": PhiCategory.CONTACT,
    "EMAIL": PhiCategory.CONTACT,
    "URL": PhiCategory.CONTACT,
    "IPADDR": PhiCategory.CONTACT,
    "SSN": PhiCategory.ID,
    "MEDICALRECORD": PhiCategory.ID,
    "HEALTHPLAN": PhiCategory.ID,
    "ACCOUNT": PhiCategory.ID,
    "LICENSE": PhiCategory.ID,
    "VEHICLE": PhiCategory.ID,
    "DEVICE": PhiCategory.ID,
    "BIOID": PhiCategory.ID,
    "IDNUM": PhiCategory.ID,
    # Tag names used as TYPE by some releases
    "NAME": PhiCategory.NAME,
    "LOCATION": PhiCategory.LOCATION,
    "CONTACT": PhiCategory.CONTACT,
    "ID": PhiCategory.ID,
}


class PhiSpan(NamedTuple):
    """Character span of a PHI mention, end exclusive."""

    start: int
    end: int
    category: str
    subtype: Optional[str] = None

    def overlaps(self, start: int, end: int) -> bool:
        """Whether the character range shares at least one character with the span."""
        return start < self.end and self.start < end


@dataclass
class LabeledDocument:
    """Note text with the character spans of its PHI mentions."""

    id: str
    text: str
    phi_spans: List[PhiSpan] = field(default_factory=list)

    def __post_init__(self):
        spans = []
        previous_end = 0
        for span in self.phi_spans:
            span = PhiSpan(*span)
            if span.category not in CATEGORIES:
                raise ConfigError(f"document {self.id}: unknown PHI category '{span.category}'")
            if not 0 <= span.start < span.end <= len(self.text):
                raise ConfigError(f"document {self.id}: span {span.start}-{span.end} out of bounds")
            if span.start < previous_end:
                raise ConfigError(f"document {self.id}: span {span.start}-{span.end} unsorted or overlapping")
            previous_end = span.end
            spans.append(span._replace(category=PhiCategory(span.category).value))
        self.phi_spans = spans

    @property
    def tokens(self) -> List[Token]:
        """Tokens of the text, with their offsets."""
        return tokenize(self.text)


def gold_token_categories(tokens: Sequence[Token], spans: Sequence[PhiSpan]) -> List[Optional[str]]:
    """
    Category of every token, None for non-PHI.

    A token is PHI when it overlaps a span by at least one character;
    the first overlapping span gives the category.
    """
    categories = []
    first = 0
    for token in tokens:
        while first < len(spans) and spans[first].end <= token.start:
            first += 1
        category = None
        for span in spans[first:]:
            if span.start >= token.end:
                break
            if span.overlaps(token.start, token.end):
                category = span.category
                break
        categories.append(category)
    return categories


def partial_overlaps(tokens: Sequence[Token], spans: Sequence[PhiSpan]) -> int:
    """Tokens straddling a span boundary, labeled PHI only by the overlap rule."""
    count = 0
    for token in tokens:
        for span in spans:
            if span.overlaps(token.start, token.end) and not (span.start <= token.start and token.end <= span.end):
                count += 1
                break
    return count


@dataclass
class TrainingPair:
    """
    Source ids and their de-identified target, position by position.

    The target copies the source except at PHI positions,
    which hold a redaction special.
    """

    src_ids: np.ndarray
    tgt_ids: np.ndarray
    phi_mask: np.ndarray
    doc_id: Optional[str] = None

    def __post_init__(self):
        self.src_ids = np.asarray(self.src_ids, dtype=np.int64)
        self.tgt_ids = np.asarray(self.tgt_ids, dtype=np.int64)
        self.phi_mask = np.asarray(self.phi_mask, dtype=bool)
        if not (len(self.src_ids) == len(self.tgt_ids) == len(self.phi_mask)):
            raise ConfigError("source, target and PHI mask must have the same length")

    def __len__(self):
        return len(self.src_ids)

    def weights(self, phi_weight: float = 1.0) -> np.ndarray:
        """Loss weight per position: `phi_weight` on redaction targets, 1 elsewhere."""
        return np.where(self.phi_mask, float(phi_weight), 1.0)


def to_training_pairs(doc: LabeledDocument, vocab: Vocabulary, per_class_mode: bool = False) -> TrainingPair:
    """
    Source/target pair of a document.

    Each token overlapping a PHI span becomes the redaction special
    (the category's own one in per-class mode), any other token is copied.
    """
    if per_class_mode and not vocab.per_class:
        raise ConfigError("per-class pairs need a per-class vocabulary")
    tokens = doc.tokens
    src_ids = vocab.encode(t.surface for t in tokens)
    categories = gold_token_categories(tokens, doc.phi_spans)
    tgt_ids = [
        source if category is None else vocab.special_id(category if per_class_mode else None)
        for source, category in zip(src_ids, categories)
    ]
    return TrainingPair(src_ids, tgt_ids, [category is not None for category in categories], doc.id)


# Synthetic corpus

PHI_FREE_TEMPLATES = [
    "Patient denies chest pain or shortness of breath.",
    "Vital signs stable, afebrile overnight.",
    "Continue metformin 500 mg twice daily.",
    "Lungs clear to auscultation bilaterally.",
    "No acute distress noted on examination.",
    "Plan to repeat labs in the morning.",
    "Blood pressure 128/76, heart rate 72.",
    "Hemoglobin A1c was 7.2 percent.",
    "Tolerating a regular diet without nausea.",
    "Will follow up with cardiology as an outpatient.",
    "Abdomen soft, non-tender, non-distended.",
    "Insulin sliding scale was continued.",
    "The patient was started on lisinopril 10 mg daily.",
    "Wound is clean, dry and intact.",
    "Pain controlled with oral acetaminophen.",
    "Discussed risks and benefits of the procedure.",
    "Doctor recommended physical therapy twice a week.",
]

PHI_TEMPLATES = [
    "Doctor {DOCTOR} did not prescribe insulin for Mrs. {PATIENT}.",
    "Patient {PATIENT} was seen in clinic today.",
    "Discussed the plan with Dr. {DOCTOR}.",
    "Name: {PATIENT}",
    "{PATIENT} reports improved energy.",
    "Signed by {DOCTOR}, MD.",
    "Username {USERNAME} accessed the chart.",
    "She works as a {PROFESSION}.",
    "Occupation: {PROFESSION}",
    "He is a retired {PROFESSION}.",
    "Transferred from {HOSPITAL} for further care.",
    "Lives in {CITY}, {STATE}.",
    "Address: {STREET}, {CITY} {ZIP}",
    "{AGE} year old man with diabetes.",
    "Age: {AGE}",
    "The patient is a {AGE} year old woman.",
    "Admitted on {DATE} with fever.",
    "Follow up on {DATE}.",
    "DOB: {DATE}",
    "Call {PHONE} with questions.",
    "Contact: {PHONE}",
    "Email {EMAIL} for results.",
    "MRN: {MEDICALRECORD}",
    "Record number {MEDICALRECORD} reviewed.",
    "Account {ACCOUNT} billed.",
    "ID {IDNUM} verified at registration.",
    "{PATIENT}, {AGE}, admitted on {DATE}.",
    "Seen by Dr. {DOCTOR} at {HOSPITAL}.",
]

RE_SLOT = re.compile(r"\{([A-Z][A-Z\-]*)\}")


def template_categories(template: str) -> List[str]:
    """Categories of the slots of a template, in order."""
    return [I2B2_TYPE_MAP[slot].value for slot in RE_SLOT.findall(template)]


@dataclass
class SynthConfig(Section):
    """Parameters of the synthetic corpus generator."""

    n_documents: int = 100
    sentences_per_doc: Tuple[int, int] = (3, 8)
    seed: int = 0
    phi_density: float = 0.15
    category_weights: Dict[str, float] = field(default_factory=lambda: dict.fromkeys(CATEGORIES, 1.0))

    def __post_init__(self):
        self.sentences_per_doc = tuple(int(n) for n in self.sentences_per_doc)
        low, high = self.sentences_per_doc
        if self.n_documents < 0:
            raise ConfigError("synth.n_documents can not be negative")
        if not 1 <= low <= high:
            raise ConfigError(f"synth.sentences_per_doc must be 1 <= min <= max, got {self.sentences_per_doc}")
        if not 0.0 <= self.phi_density < 1.0:
            raise ConfigError(f"synth.phi_density must lie in [0, 1), got {self.phi_density}")
        unknown = [name for name in self.category_weights if name not in CATEGORIES]
        if unknown:
            raise ConfigError(f"synth.category_weights: unknown category '{unknown[0]}'")
        if any(weight < 0 for weight in self.category_weights.values()):
            raise ConfigError("synth.category_weights must be non-negative")
        if not any(weight > 0 for weight in self.category_weights.values()):
            raise ConfigError("synth.category_weights can not all be zero")


def fill_template(template: str, rng: random.Random, fillers=None) -> Tuple[str, List[PhiSpan]]:
    """Fills every slot of a template, returning the sentence and the spans of the filled values."""
    fillers = fillers or available_fillers()
    pieces, spans = [], []
    cursor = length = 0
    for match in RE_SLOT.finditer(template):
        literal = template[cursor : match.start()]
        pieces.append(literal)
        length += len(literal)
        subtype = match.group(1)
        value = fillers[subtype](rng)
        spans.append(PhiSpan(length, length + len(value), I2B2_TYPE_MAP[subtype].value, subtype))
        pieces.append(value)
        length += len(value)
        cursor = match.end()
    pieces.append(template[cursor:])
    return "".join(pieces), spans


def generate_synthetic(config: SynthConfig) -> List[LabeledDocument]:
    """
    Deterministic corpus of synthetic clinical notes.

    Each note is a sequence of sentences. Whenever the PHI token
    fraction accumulated so far over the corpus is below
    `phi_density`, the next sentence carries PHI slots, drawn so
    that categories follow `category_weights`; otherwise it is PHI free.
    """
    rng = random.Random(config.seed)
    fillers = available_fillers()
    allowed = {name for name, weight in config.category_weights.items() if weight > 0}
    by_category = {
        name: [t for t in PHI_TEMPLATES if name in template_categories(t) and set(template_categories(t)) <= allowed]
        for name in sorted(allowed)
    }
    categories = [name for name, templates in by_category.items() if templates]
    weights = [config.category_weights[name] for name in categories]

    documents = []
    total_tokens = phi_tokens = 0
    for index in range(config.n_documents):
        sentences, spans = [], []
        offset = 0
        for _ in range(rng.randint(*config.sentences_per_doc)):
            if categories and phi_tokens < config.phi_density * max(total_tokens, 1):
                category = rng.choices(categories, weights)[0]
                sentence, sentence_spans = fill_template(rng.choice(by_category[category]), rng, fillers)
            else:
                sentence, sentence_spans = rng.choice(PHI_FREE_TEMPLATES), []
            tokens = tokenize(sentence)
            total_tokens += len(tokens)
            phi_tokens += sum(c is not None for c in gold_token_categories(tokens, sentence_spans))
            if sentences:
                offset += 1
            spans.extend(span._replace(start=span.start + offset, end=span.end + offset) for span in sentence_spans)
            sentences.append(sentence)
            offset += len(sentence)
        documents.append(LabeledDocument(f"synth-{index:06d}", "\n".join(sentences), spans))
    return documents


# i2b2 XML records


def load_i2b2_xml(directory: Union[str, Path], strict: bool = True) -> List[LabeledDocument]:
    """
    Documents from a directory of i2b2-2014 style XML records, ordered by file name.

    TYPE values map to categories through `I2B2_TYPE_MAP`.
    Tags with unknown types, unusable or out of bounds offsets,
    or overlapping an earlier tag, are skipped with a warning.
    A malformed file raises `I2b2FormatError`, or is skipped
    with a warning when not `strict`.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise ArtifactIOError(f"{directory} is not a directory")
    documents = []
    for path in sorted(directory.glob("*.xml")):
        try:
            documents.append(_i2b2_document(path))
        except I2b2FormatError as e:
            if strict:
                raise
            warnings.warn(f"skipping {e}", stacklevel=2)
    return documents


def _i2b2_document(path: Path) -> LabeledDocument:
    record = I2b2Record(path.read_bytes(), path.name)
    text = record.text

    def skip(tag, reason):
        warnings.warn(f"{path.name}: tag {tag.id or tag.element} skipped, {reason}", stacklevel=3)

    spans = []
    for tag in record.tags:
        category = I2B2_TYPE_MAP.get(tag.type)
        if category is None:
            skip(tag, f"unknown TYPE '{tag.type}'")
            continue
        try:
            start, end = int(tag.start), int(tag.end)
        except (TypeError, ValueError):
            skip(tag, f"unusable offsets {tag.start!r}-{tag.end!r}")
            continue
        if not 0 <= start < end <= len(text):
            skip(tag, f"offsets {start}-{end} out of bounds (text has {len(text)} characters)")
            continue
        if tag.text is not None and text[start:end] != tag.text:
            warnings.warn(f"{path.name}: tag {tag.id} text '{tag.text}' differs from '{text[start:end]}'", stacklevel=3)
        spans.append(PhiSpan(start, end, category.value, tag.type))
    spans.sort()
    kept = []
    for span in spans:
        if kept and span.start < kept[-1].end:
            warnings.warn(f"{path.name}: tag at {span.start}-{span.end} overlaps a previous one, skipped", stacklevel=3)
            continue
        kept.append(span)
    return LabeledDocument(path.stem, text, kept)


def write_i2b2_xml(doc: LabeledDocument, path: Union[str, Path]) -> Path:
    """Writes a document as an i2b2-2014 style XML record."""
    root = E(
        "deIdi2b2",
        E("TEXT", doc.text),
        E(
            "TAGS",
            (
                E(
                    span.category,
                    id=f"P{index}",
                    start=span.start,
                    end=span.end,
                    text=doc.text[span.start : span.end],
                    TYPE=span.subtype or span.category,
                    comment="",
                )
                for index, span in enumerate(doc.phi_spans)
            ),
        ),
    )
    path = Path(path)
    path.write_bytes(tostring(root))
    return path


# Splits and storage


def split_corpus(
    docs: Sequence[LabeledDocument],
    train_fraction: float,
    seed: int = 0,
    val_fraction: Optional[float] = None,
    test_fraction: float = 0.0,
) -> Tuple[List[LabeledDocument], List[LabeledDocument], List[LabeledDocument]]:
    """
    Deterministic shuffled train, validation and test split.

    The validation fraction defaults to whatever the training and test
    fractions leave. Rounding leftovers go to the training split.
    A split requested with a positive fraction that ends up empty
    raises `EmptySplitError`.
    """
    if val_fraction is None:
        val_fraction = max(0.0, 1.0 - train_fraction - test_fraction)
    fractions = (train_fraction, val_fraction, test_fraction)
    if not 0 < train_fraction <= 1 or any(not 0 <= f <= 1 for f in fractions):
        raise ConfigError(f"split fractions must lie in [0, 1] with a positive training one, got {fractions}")
    if sum(fractions) > 1 + 1e-9:
        raise ConfigError(f"split fractions add up to more than 1: {fractions}")
    order = list(range(len(docs)))
    random.Random(seed).shuffle(order)
    n_val = int(round(val_fraction * len(docs)))
    n_test = int(round(test_fraction * len(docs)))
    n_train = len(docs) - n_val - n_test if sum(fractions) > 1 - 1e-9 else int(round(train_fraction * len(docs)))
    train = [docs[i] for i in order[:n_train]]
    val = [docs[i] for i in order[n_train : n_train + n_val]]
    test = [docs[i] for i in order[n_train + n_val : n_train + n_val + n_test]]
    named = (("train", train_fraction, train), ("validation", val_fraction, val), ("test", test_fraction, test))
    for name, fraction, split in named:
        if fraction > 0 and not split:
            raise EmptySplitError(f"{name} split is empty ({len(docs)} documents, fraction {fraction})")
    return train, val, test


def document_to_record(doc: LabeledDocument) -> Dict:
    """JSON record of a document."""
    return dict(id=doc.id, text=doc.text, spans=[list(span) for span in doc.phi_spans])


def document_from_record(record: Mapping) -> LabeledDocument:
    """Document from a JSON record, raising `ArtifactIOError` when malformed."""
    try:
        return LabeledDocument(str(record["id"]), record["text"], [PhiSpan(*span) for span in record.get("spans", [])])
    except (KeyError, TypeError) as e:
        raise ArtifactIOError(f"malformed corpus record: {e}") from e


def dumps_corpus(docs: Iterable[LabeledDocument]) -> str:
    """JSON lines content of a corpus."""
    return "".join(json.dumps(document_to_record(doc), ensure_ascii=False) + "\n" for doc in docs)


def write_corpus(docs: Iterable[LabeledDocument], path: Union[str, Path]) -> Path:
    """Writes a corpus as JSON lines, creating the folder if needed."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dumps_corpus(docs), encoding="utf8")
    except OSError as e:
        raise ArtifactIOError(f"cannot write corpus {path}: {e}") from e
    return path


def read_corpus(path: Union[str, Path]) -> List[LabeledDocument]:
    """Documents of a JSON lines corpus file; blank lines are ignored."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf8").split("\n")
    except (OSError, UnicodeDecodeError) as e:
        raise ArtifactIOError(f"cannot read corpus {path}: {e}") from e
    documents = []
    for number, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise ArtifactIOError(f"{path}:{number}: not a JSON record ({e})") from e
        documents.append(document_from_record(record))
    return documents


class CorpusStats(NamedTuple):
    """Document, token and PHI token counts of a corpus, PHI tokens also by category."""

    documents: int
    tokens: int
    phi_tokens: int
    categories: Dict[str, int]

    def summary(self) -> str:
        """Counts as `key=value` lines."""
        lines = [f"documents={self.documents} tokens={self.tokens} phi_tokens={self.phi_tokens}"]
        lines += [f"category.{name}={count}" for name, count in sorted(self.categories.items())]
        return "\n".join(lines)


def corpus_stats(docs: Iterable[LabeledDocument]) -> CorpusStats:
    """Document and token counts, and PHI tokens per category."""
    documents = tokens = 0
    categories = Counter()
    for doc in docs:
        documents += 1
        doc_tokens = doc.tokens
        tokens += len(doc_tokens)
        categories.update(c for c in gold_token_categories(doc_tokens, doc.phi_spans) if c is not None)
    return CorpusStats(documents, tokens, sum(categories.values()), dict(categories))


# vim: et ts=4 sw=4
