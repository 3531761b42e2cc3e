"""Common fixtures for tests."""

import os
import random
import re
from contextlib import contextmanager
from pathlib import Path

from redactseq.data import CATEGORIES, LabeledDocument, PhiSpan
from redactseq.model import ModelConfig, Seq2SeqModel, init_params
from redactseq.text import build_vocab


@contextmanager
def temp_path():
    """
    Context manager that creates a temporary dir and ensures that all the content is removed.

    Returns the pathlib Path of the created dir.

    Examples:
        >>> with temp_path() as tmp:
        ...     mypath = tmp / 'myfile'
        ...     nbytes = mypath.write_text('hello world', encoding='utf8')
        ...     assert mypath.exists(), "Should exists at this point"
        >>> assert not mypath.exists(), "Sould not exist at this point"
    """
    import shutil
    import tempfile

    path = Path(tempfile.mkdtemp())
    try:
        yield path
    finally:
        shutil.rmtree(str(path), ignore_errors=True)


@contextmanager
def working_dir(path):
    """
    Context manager that changes the current working dir and restores it after executing the 'with' block.

    Examples:
        >>> oldwd = os.getcwd()
        >>> with working_dir('/') as path:
        ...     assert os.getcwd() == '/'
        >>> assert os.getcwd() == oldwd
    """
    olddir = os.getcwd()
    os.chdir(str(path))
    try:
        yield Path(path)
    finally:
        os.chdir(olddir)


@contextmanager
def sandbox_dir():
    """
    Context manager that combines temp_path and working_dir.

    It creates a temporary dir and moves to it.
    After the 'with' block is executed, even if an exception is thrown,
    the temporary directory and its content is removed
    and the previous working directory is restored.
    """
    with temp_path() as path, working_dir(path):
        yield path


RE_MARKUP = re.compile(r"\[([A-Z]+):([^\]]+)\]")


def labeled(doc_id, markup):
    """
    Builds a labeled document from inline markup.

    Examples:
        >>> doc = labeled("d", "Seen by [NAME:Dr. Smith] today")
        >>> doc.text
        'Seen by Dr. Smith today'
        >>> doc.phi_spans
        [PhiSpan(start=8, end=17, category='NAME', subtype=None)]
    """
    pieces, spans = [], []
    length = cursor = 0
    for match in RE_MARKUP.finditer(markup):
        literal = markup[cursor : match.start()]
        pieces.append(literal)
        length += len(literal)
        category, value = match.groups()
        spans.append(PhiSpan(length, length + len(value), category))
        pieces.append(value)
        length += len(value)
        cursor = match.end()
    pieces.append(markup[cursor:])
    return LabeledDocument(doc_id, "".join(pieces), spans)


TOY_MARKUP = [
    "Doctor [NAME:Edelson] did not prescribe insulin for Mrs. [NAME:Smith].",
    "Patient [NAME:Garcia] is a [AGE:54] year old [PROFESSION:teacher].",
    "Admitted on [DATE:03/12/2019] to [LOCATION:Lakeview Clinic].",
    "Call [CONTACT:555-201-9932] with results.",
    "MRN [ID:8812231] reviewed by Dr. [NAME:Patel].",
    "Blood pressure stable, continue metformin.",
    "Lives in [LOCATION:Winnipeg] with her daughter.",
    "Follow up on [DATE:June 3, 2021] with [NAME:Nguyen].",
]


def toy_corpus():
    """The eight short documents used by overfit and determinism tests."""
    return [labeled(f"toy-{i}", markup) for i, markup in enumerate(TOY_MARKUP)]


WORDS = ["the", "patient", "was", "seen", "by", "on", "pain", "stable", "insulin", "daily", ".", ",", "Mrs", "Dr"]
PHI_WORDS = ["Smith", "Edelson", "Winnipeg", "54", "2019", "teacher", "555", "-", "8812231"]


def random_document(rng, doc_id="random", max_tokens=20):
    """Random labeled document, with spans that may cut tokens in the middle."""
    pieces = []
    for _ in range(rng.randint(0, max_tokens)):
        pieces.append(rng.choice(WORDS + PHI_WORDS))
        pieces.append(rng.choice([" ", " ", "", "  ", "\n"]))
    text = "".join(pieces)
    spans = []
    position = 0
    while position < len(text) - 1 and rng.random() < 0.8:
        start = rng.randint(position, len(text) - 1)
        end = rng.randint(start + 1, min(len(text), start + 12))
        spans.append(PhiSpan(start, end, rng.choice(CATEGORIES)))
        position = end + rng.randint(0, 6)
    return LabeledDocument(doc_id, text, spans)


def random_documents(count, seed=0, max_tokens=20):
    rng = random.Random(seed)
    return [random_document(rng, f"random-{i}", max_tokens) for i in range(count)]


def vocabulary_for(docs, categories=None):
    return build_vocab(([t.surface for t in doc.tokens] for doc in docs), 1, categories)


def tiny_config(vocab_size, **overrides):
    """Small model settings, fast enough for exhaustive tests."""
    values = dict(
        vocab_size=vocab_size,
        d_model=16,
        n_heads=2,
        n_enc_layers=2,
        n_dec_layers=2,
        d_ff=32,
        max_len=32,
        dropout_rate=0.0,
    )
    values.update(overrides)
    return ModelConfig(**values)


def tiny_model(vocab, seed=0, **overrides):
    config = tiny_config(len(vocab), **overrides)
    return Seq2SeqModel(config, init_params(config, seed), vocab.fingerprint)


# vim: ts=4 sw=4 et
