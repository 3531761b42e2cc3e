"""
Run configuration files.

A run configuration is a YAML file with one section per component:

    seed: 7
    model: {d_model: 64, n_heads: 4}
    training: {batch_size: 16}
    synth: {n_documents: 1000}
    paths: {corpus: corpus.jsonl}
    split: {train: 0.8, validation: 0.1, test: 0.1}
    inference: {mode: constrained}

Missing keys take their defaults, unknown ones are rejected.
The seed is taken from the command line, then from the `REDACT_SEED`
environment variable, then from the file. It is copied into the
training and synthesis sections unless they set their own.
Relative paths are resolved against the directory of the file.
"""

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional, Union

from yamlns import namespace as ns

from .data import SynthConfig
from .errors import ArtifactIOError, ConfigError
from .inference import check_mode
from .model import ModelConfig
from .training import TrainingConfig
from .utils.sections import Section

SEED_VARIABLE = "REDACT_SEED"


@dataclass
class PathsConfig(Section):
    """Artifact locations."""

    corpus: str = "corpus.jsonl"
    i2b2_dir: Optional[str] = None
    vocab: str = "vocab.txt"
    checkpoint: str = "model.ckpt"
    metrics: str = "metrics.log"


@dataclass
class SplitConfig(Section):
    """Fractions of the corpus for the train, validation and test splits."""

    train: float = 0.8
    validation: Optional[float] = 0.1
    test: float = 0.1


@dataclass
class InferenceConfig(Section):
    """Decoding used to score the test split."""

    mode: str = "constrained"

    def __post_init__(self):
        check_mode(self.mode)


SECTIONS = dict(
    model=ModelConfig,
    training=TrainingConfig,
    synth=SynthConfig,
    paths=PathsConfig,
    split=SplitConfig,
    inference=InferenceConfig,
)
SEEDED_SECTIONS = ("training", "synth")


def _parse_seed(value: Any, origin: str) -> int:
    try:
        seed = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{origin}: seed must be an integer, got {value!r}") from None
    if seed < 0:
        raise ConfigError(f"{origin}: seed can not be negative, got {seed}")
    return seed


def resolve_seed(file_seed: Any = None, flag_seed: Optional[int] = None, environ: Optional[Mapping] = None) -> int:
    """Seed by precedence: command line, environment, file, 0."""
    environ = os.environ if environ is None else environ
    if flag_seed is not None:
        return _parse_seed(flag_seed, "--seed")
    if environ.get(SEED_VARIABLE, "").strip():
        return _parse_seed(environ[SEED_VARIABLE], SEED_VARIABLE)
    if file_seed is not None:
        return _parse_seed(file_seed, "seed")
    return 0


class RunConfig:
    """Resolved configuration of every component of a run."""

    def __init__(
        self,
        seed: int = 0,
        base_dir: Union[str, Path] = ".",
        **sections: Section,
    ):
        self.seed = seed
        self.base_dir = Path(base_dir)
        for name, section_type in SECTIONS.items():
            setattr(self, name, sections.pop(name, None) or section_type())
        if sections:
            raise ConfigError(f"unknown configuration section '{next(iter(sections))}'")

    @classmethod
    def from_mapping(
        cls,
        mapping: Optional[Mapping],
        seed: Optional[int] = None,
        environ: Optional[Mapping] = None,
        base_dir: Union[str, Path] = ".",
    ) -> "RunConfig":
        """Run configuration from a mapping of sections, with the seed resolved."""
        mapping = dict(mapping or {})
        for key in mapping:
            if key != "seed" and key not in SECTIONS:
                raise ConfigError(f"unknown configuration section '{key}'")
        resolved = resolve_seed(mapping.get("seed"), seed, environ)
        sections = {}
        for name, section_type in SECTIONS.items():
            values = mapping.get(name) or {}
            if not isinstance(values, Mapping):
                raise ConfigError(f"configuration section '{name}' must be a mapping")
            values = dict(values)
            if name in SEEDED_SECTIONS and "seed" not in values:
                values["seed"] = resolved
            sections[name] = section_type.from_mapping(values, name)
        return cls(seed=resolved, base_dir=base_dir, **sections)

    @classmethod
    def load(
        cls,
        path: Union[str, Path],
        seed: Optional[int] = None,
        environ: Optional[Mapping] = None,
    ) -> "RunConfig":
        """Run configuration from a YAML file; relative paths are resolved against its folder."""
        path = Path(path)
        if not path.is_file():
            raise ArtifactIOError(f"configuration file {path} not found")
        try:
            text = path.read_text(encoding="utf8")
        except (OSError, UnicodeDecodeError) as e:
            raise ArtifactIOError(f"cannot read configuration {path}: {e}") from e
        try:
            content = ns.loads(text) if text.strip() else None
        except Exception as e:
            raise ConfigError(f"{path}: invalid YAML ({e})") from e
        if content is not None and not isinstance(content, Mapping):
            raise ConfigError(f"{path}: the configuration must be a mapping of sections")
        return cls.from_mapping(content, seed, environ, path.parent)

    def path(self, name: str) -> Optional[Path]:
        """Location of a `paths` entry, relative to the configuration file."""
        value = getattr(self.paths, name)
        if value is None:
            return None
        return self.base_dir / Path(value).expanduser()

    def as_namespace(self) -> ns:
        """Resolved configuration as a yamlns namespace."""
        result = ns(seed=self.seed)
        for name in SECTIONS:
            result[name] = getattr(self, name).to_ns()
        return result

    def dump(self) -> str:
        """Resolved configuration as YAML."""
        return self.as_namespace().dump()


# vim: et ts=4 sw=4
