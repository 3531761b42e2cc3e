import unittest
from textwrap import dedent
from xml.etree import ElementTree as etree

from redactseq.utils.hyperscript import E, tostring


class ETest(unittest.TestCase):
    def assertXml(self, e, expected):
        self.assertMultiLineEqual(etree.tostring(e, "unicode"), dedent(expected.strip()))

    def test_tag_named(self):
        self.assertXml(E("TAGS"), "<TAGS />")

    def test_attribute(self):
        self.assertXml(E("NAME", TYPE="PATIENT"), '<NAME TYPE="PATIENT" />')

    def test_attribute_integer(self):
        self.assertXml(E("DATE", start=12, end=22), '<DATE start="12" end="22" />')

    def test_attribute_attributeEncode(self):
        self.assertXml(E("NAME", text="""a&<>"'z"""), '<NAME text="a&amp;&lt;&gt;&quot;\'z" />')

    def test_child(self):
        self.assertXml(E("TAGS", E("NAME")), "<TAGS><NAME /></TAGS>")

    def test_text(self):
        self.assertXml(E("TEXT", "Seen by Dr. Smith"), "<TEXT>Seen by Dr. Smith</TEXT>")

    def test_text_twice(self):
        self.assertXml(E("TEXT", "first", " later"), "<TEXT>first later</TEXT>")

    def test_text_afterChild(self):
        self.assertXml(E("root", E("child"), "content"), "<root><child />content</root>")

    def test_text_interChildren(self):
        self.assertXml(
            E("root", E("child"), "content", E("sibling")),
            "<root><child />content<sibling /></root>",
        )

    def test_attrib_asChildren(self):
        self.assertXml(E("NAME", dict(id="P0")), '<NAME id="P0" />')

    def test_attrib_keywordWins(self):
        self.assertXml(E("NAME", dict(id="P0"), id="P1"), '<NAME id="P1" />')

    def test_attrib_none_unsets(self):
        self.assertXml(E("NAME", comment=None), "<NAME />")

    def test_child_iterators(self):
        self.assertXml(
            E("TAGS", (E("ID", id=f"P{i}") for i in range(2))),
            '<TAGS><ID id="P0" /><ID id="P1" /></TAGS>',
        )

    def test_child_noneAndFalse_ignored(self):
        self.assertXml(E("TEXT", None, "hola", False), "<TEXT>hola</TEXT>")

    def test_tostring_declaration(self):
        content = tostring(E("deIdi2b2", E("TEXT", "Café")))
        self.assertTrue(content.startswith(b"<?xml version='1.0' encoding='UTF-8'?>"))
        self.assertIn("Café".encode("utf8"), content)


# vim: et ts=4 sw=4
