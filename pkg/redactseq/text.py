"""Tokenization of clinical text and the token/id vocabulary."""

import hashlib
import re
from collections import Counter
from pathlib import Path
from typing import Iterable, List, NamedTuple, Optional, Sequence, Union

from .errors import ArtifactIOError, ConfigError, EmptyCorpusError, InvalidIdError

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")
REDACTED = "REDACTED"

# Runs of word characters, or any single non-space symbol
RE_TOKEN = re.compile(r"\w+|[^\w\s]")
RE_SPECIAL = re.compile(r"^<REDACTED(?:-([A-Z_]+))?>$")


class Token(NamedTuple):
    """A token and its character offsets in the text."""

    surface: str
    start: int
    end: int

    @property
    def span(self):
        return self.start, self.end


class TokenSequence(NamedTuple):
    """Ids of the tokens of a text, along with the tokens."""

    ids: List[int]
    tokens: List[Token]

    def __len__(self):
        return len(self.ids)


def tokenize(text: str) -> List[Token]:
    """
    Splits on whitespace and detaches punctuation.

    Every punctuation or symbol character becomes a token on its own,
    runs of letters, digits and underscores stay together.
    Case and numbers are kept verbatim.
    """
    return [Token(m.group(), m.start(), m.end()) for m in RE_TOKEN.finditer(text)]


def detokenize(tokens: Sequence[Token], surfaces: Optional[Sequence[str]] = None) -> str:
    """
    Joins surfaces with a single space wherever the source had whitespace
    between tokens, and nothing where they were adjacent.
    """
    surfaces = [t.surface for t in tokens] if surfaces is None else surfaces
    pieces = []
    for i, (token, surface) in enumerate(zip(tokens, surfaces)):
        if i and token.start > tokens[i - 1].end:
            pieces.append(" ")
        pieces.append(surface)
    return "".join(pieces)


def render(text: str, tokens: Sequence[Token], surfaces: Sequence[str]) -> str:
    """Rebuilds `text` with each token replaced by its surface, keeping the original whitespace."""
    pieces = []
    cursor = 0
    for token, surface in zip(tokens, surfaces):
        pieces.append(text[cursor : token.start])
        pieces.append(surface)
        cursor = token.end
    pieces.append(text[cursor:])
    return "".join(pieces)


def special_token(category: Optional[str] = None) -> str:
    """Surface of the redaction marker, the shared one without a category."""
    return f"<{REDACTED}-{category}>" if category else f"<{REDACTED}>"


class Vocabulary:
    """
    Bidirectional token/id map shared by encoder and decoder.

    Ids 0-3 are PAD, BOS, EOS and UNK. Redaction specials follow:
    a single one, or one per PHI category in per-class mode.
    Ordinary tokens come after.
    """

    def __init__(self, tokens: Iterable[str] = (), categories: Optional[Sequence[str]] = None):
        self.categories = list(categories) if categories else []
        specials = [special_token(c) for c in self.categories] or [special_token()]
        self._itos: List[str] = [*RESERVED, *specials]
        self._stoi = {token: i for i, token in enumerate(self._itos)}
        self.special_ids = list(range(len(RESERVED), len(self._itos)))
        for token in tokens:
            if token in self._stoi:
                raise ConfigError(f"token '{token}' assigned twice")
            self._stoi[token] = len(self._itos)
            self._itos.append(token)

    @property
    def per_class(self) -> bool:
        return bool(self.categories)

    def __len__(self):
        return len(self._itos)

    def __contains__(self, surface):
        return surface in self._stoi

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._itos == other._itos

    def __repr__(self):
        return f"<Vocabulary size={len(self)} {'per-class' if self.per_class else 'single'}>"

    def id_of(self, surface: str) -> int:
        """Id of a surface, UNK if unknown."""
        return self._stoi.get(surface, UNK)

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self._itos):
            raise InvalidIdError(f"id {token_id} is not assigned (vocabulary size {len(self)})")
        return self._itos[token_id]

    def is_special(self, token_id: int) -> bool:
        """Whether the id is a redaction marker."""
        return token_id in self.special_ids

    def special_id(self, category: Optional[str] = None) -> int:
        """Redaction id for a category; the shared one in single mode."""
        if not self.per_class:
            return self.special_ids[0]
        try:
            return self.special_ids[self.categories.index(category)]
        except ValueError:
            raise InvalidIdError(f"no redaction special for category '{category}'") from None

    def category_of(self, token_id: int) -> Optional[str]:
        """Category a redaction special stands for, None for the shared one."""
        if not self.per_class or not self.is_special(token_id):
            return None
        return self.categories[token_id - self.special_ids[0]]

    def encode(self, surfaces: Iterable[str]) -> List[int]:
        """Maps surfaces to ids, unknown ones to UNK."""
        return [self._stoi.get(surface, UNK) for surface in surfaces]

    def decode(self, ids: Iterable[int]) -> List[str]:
        """Maps ids to surfaces, rendering redaction specials as REDACTED or REDACTED-<CATEGORY>."""
        surfaces = []
        for token_id in ids:
            surface = self.token_of(int(token_id))
            if self.is_special(token_id):
                category = self.category_of(token_id)
                surface = f"{REDACTED}-{category}" if category else REDACTED
            surfaces.append(surface)
        return surfaces

    def encode_text(self, text: str) -> TokenSequence:
        """Tokenizes and encodes a text."""
        tokens = tokenize(text)
        return TokenSequence(self.encode(t.surface for t in tokens), tokens)

    def dumps(self) -> str:
        """One token per line, in id order."""
        return "".join(token + "\n" for token in self._itos)

    @classmethod
    def loads(cls, content: str) -> "Vocabulary":
        """Vocabulary from `dumps` content."""
        lines = content.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if tuple(lines[: len(RESERVED)]) != RESERVED:
            raise ConfigError("vocabulary does not start with the reserved header")
        categories = []
        position = len(RESERVED)
        while position < len(lines):
            match = RE_SPECIAL.match(lines[position])
            if not match:
                break
            if match.group(1):
                categories.append(match.group(1))
            position += 1
        if position == len(RESERVED):
            raise ConfigError("vocabulary has no redaction special")
        return cls(lines[position:], categories)

    def save(self, path: Union[str, Path]) -> None:
        """Writes the vocabulary file, raising `ArtifactIOError` on failure."""
        try:
            Path(path).write_text(self.dumps(), encoding="utf8")
        except OSError as e:
            raise ArtifactIOError(f"cannot write vocabulary {path}: {e}") from e

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocabulary":
        """Reads a vocabulary file, raising `ArtifactIOError` when unreadable."""
        try:
            content = Path(path).read_text(encoding="utf8")
        except (OSError, UnicodeDecodeError) as e:
            raise ArtifactIOError(f"cannot read vocabulary {path}: {e}") from e
        try:
            return cls.loads(content)
        except ConfigError as e:
            raise ArtifactIOError(f"{path}: {e}") from e

    @property
    def fingerprint(self) -> str:
        """SHA-256 of the serialized vocabulary."""
        return hashlib.sha256(self.dumps().encode("utf8")).hexdigest()


def build_vocab(
    corpus: Iterable[Iterable[str]],
    min_freq: float = 1,
    categories: Optional[Sequence[str]] = None,
) -> Vocabulary:
    """
    Vocabulary of the surfaces appearing at least `min_freq` times.

    Ids follow descending frequency, ties broken lexicographically.
    `min_freq` may be `math.inf` to keep only the reserved block.
    """
    if not min_freq >= 1:
        raise ConfigError(f"min_freq must be at least 1, got {min_freq}")
    counts = Counter()
    for sentence in corpus:
        counts.update(sentence)
    if not counts:
        raise EmptyCorpusError("cannot build a vocabulary from an empty corpus")
    kept = [token for token, count in counts.items() if count >= min_freq]
    kept.sort(key=lambda token: (-counts[token], token))
    reserved = {*RESERVED, *(special_token(c) for c in categories or ()), special_token()}
    return Vocabulary([token for token in kept if token not in reserved], categories)


# vim: et ts=4 sw=4
