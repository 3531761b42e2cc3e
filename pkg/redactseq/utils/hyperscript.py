from typing import Any
from xml.etree import ElementTree as etree  # noqa: N813, S405


def E(tag: str, *children: Any, **attribs: Any) -> etree.Element:
    """
    Functional builder of an etree.
    Keywords and dict children are turned into attributes,
    later ones overwriting former ones, keywords winning.
    Attributes with None values are omitted, other values are formatted.
    Text children are turned into text nodes.
    Items of children being lists and generators are inlined as childs of the element.
    None and False children are ignored.
    """
    attributes = dict()
    for child in children:
        if isinstance(child, dict):
            attributes.update(child)
    attributes.update(attribs)

    element = etree.Element(tag, {k: format(v) for k, v in attributes.items() if v is not None})

    def appendChild(child):
        if child is None or child is False:
            return
        if isinstance(child, dict):
            return
        if isinstance(child, str):
            if len(element):
                element[-1].tail = (element[-1].tail or "") + child
            else:
                element.text = (element.text or "") + child
            return
        if isinstance(child, etree.Element):
            element.append(child)
            return
        for item in child:
            appendChild(item)

    for child in children:
        appendChild(child)

    return element


def tostring(element: etree.Element) -> bytes:
    """Serializes an element as an UTF-8 XML document with declaration."""
    return etree.tostring(element, encoding="UTF-8", xml_declaration=True)


# vim: et ts=4 sw=4
