from typing import List, Optional, Union
from xml.etree import ElementTree as etree  # noqa: N813, S405

from decorator import decorator
from yamlns import namespace as ns

from ..errors import I2b2FormatError


@decorator
def cached(f, self):
    """After the property decorator, makes the property cached."""
    propname = f.__name__
    if propname not in self._cache:
        self._cache[propname] = f(self)
    return self._cache.get(propname)


class I2b2Record:
    """
    Reads one i2b2 de-identification record: the note text and its PHI tags.

    The record is an XML document whose `TEXT` element holds the note
    and whose `TAGS` element holds one child per PHI mention, with
    `start`, `end`, `TYPE`, and usually `id`, `text` and `comment` attributes.
    Offsets index characters of the note text.
    """

    def __init__(self, content: Union[str, bytes], name: Optional[str] = None):
        self._content = content
        self.name = name or "record"
        self._cache = {}

    @property
    @cached
    def _root(self) -> etree.Element:
        try:
            return etree.fromstring(self._content)  # noqa: S314
        except etree.ParseError as e:
            raise I2b2FormatError(self.name, f"malformed XML ({e})") from e

    @property
    @cached
    def text(self) -> str:
        """Text of the note."""
        element = self._root.find("TEXT")
        if element is None:
            raise I2b2FormatError(self.name, "no TEXT element")
        return element.text or ""

    @property
    @cached
    def tags(self) -> List[ns]:
        """PHI tags as namespaces with the attributes of each tag element."""
        section = self._root.find("TAGS")
        if section is None:
            return []
        return [
            ns(
                element=tag.tag,
                id=tag.get("id"),
                start=tag.get("start"),
                end=tag.get("end"),
                type=(tag.get("TYPE") or tag.tag).upper(),
                text=tag.get("text"),
                comment=tag.get("comment"),
            )
            for tag in section
        ]


# vim: et ts=4 sw=4
