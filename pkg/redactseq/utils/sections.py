"""Mixin turning configuration dataclasses into strict mapping-backed sections."""

from dataclasses import fields
from decimal import Decimal
from typing import Any, Dict, Mapping, Optional, Union, get_args, get_origin, get_type_hints

from yamlns import namespace as ns

from ..errors import ConfigError


class Section:
    """
    Dataclass mixin for configuration sections.

    Sections are built from plain mappings, such as a parsed YAML block,
    rejecting keys the dataclass does not declare instead of ignoring them.
    """

    @classmethod
    def field_names(cls):
        """Names of the declared fields."""
        return [f.name for f in fields(cls)]

    @classmethod
    def from_mapping(cls, mapping: Optional[Mapping[str, Any]], section: Optional[str] = None, **overrides):
        """Builds the section from a mapping, applying non None overrides and coercing values."""
        values = dict(mapping or {})
        known = cls.field_names()
        for key in values:
            if key not in known:
                where = f"{section}.{key}" if section else key
                raise ConfigError(f"unknown configuration key '{where}'")
        values.update((key, value) for key, value in overrides.items() if value is not None)
        hints = get_type_hints(cls)
        values = {key: coerce(value, hints.get(key)) for key, value in values.items()}
        try:
            return cls(**values)
        except TypeError as e:
            raise ConfigError(f"in section '{section or cls.__name__}': {e}") from e

    def to_dict(self) -> Dict[str, Any]:
        """Plain dict, tuples turned into lists."""
        return {name: _plain(getattr(self, name)) for name in self.field_names()}

    def to_ns(self) -> ns:
        """Section as a yamlns namespace, nested mappings included."""
        return ns.loads(ns(self.to_dict()).dump())


def coerce(value: Any, hint: Any = None) -> Any:
    """
    Turns a value loaded from YAML into the declared type.

    yamlns loads floats as `Decimal`; those become floats, and so do
    integers given for float fields. Lists become tuples for tuple fields.
    Nested lists and mappings are converted item by item.
    """
    if isinstance(value, Decimal):
        value = float(value)
    origin, args = get_origin(hint), get_args(hint)
    if origin is Union:
        declared = [arg for arg in args if arg is not type(None)]
        hint = declared[0] if len(declared) == 1 else None
        origin, args = get_origin(hint), get_args(hint)
    if hint is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if hint is int and isinstance(value, float):
        if not value.is_integer():
            raise ConfigError(f"expected an integer, got {value}")
        return int(value)
    if isinstance(value, Mapping):
        item_hint = args[1] if origin is dict and len(args) == 2 else None
        return {key: coerce(item, item_hint) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        item_hint = args[0] if args else None
        items = [coerce(item, item_hint) for item in value]
        return tuple(items) if origin is tuple else items
    return value


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(item) for item in value]
    if isinstance(value, dict):
        return {key: _plain(item) for key, item in value.items()}
    return value


# vim: et ts=4 sw=4
