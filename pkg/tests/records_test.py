import unittest

from redactseq.errors import I2b2FormatError
from redactseq.utils.hyperscript import E, tostring
from redactseq.utils.records import I2b2Record


class I2b2Record_Test(unittest.TestCase):
    from yamlns.testutils import assertNsEqual

    def record(self, *tags, text="Seen by Dr. Smith on 2019-03-12."):
        return I2b2Record(tostring(E("deIdi2b2", E("TEXT", text), E("TAGS", tags))), "note.xml")

    def test_text(self):
        self.assertEqual(self.record().text, "Seen by Dr. Smith on 2019-03-12.")

    def test_text_emptyElement(self):
        self.assertEqual(self.record(text="").text, "")

    def test_text_missing(self):
        record = I2b2Record(tostring(E("deIdi2b2", E("TAGS"))), "note.xml")
        with self.assertRaises(I2b2FormatError) as ctx:
            record.text
        self.assertEqual(ctx.exception.filename, "note.xml")

    def test_tags_none(self):
        self.assertEqual(self.record().tags, [])

    def test_tags_noTagsElement(self):
        record = I2b2Record(tostring(E("deIdi2b2", E("TEXT", "x"))))
        self.assertEqual(record.tags, [])

    def test_tags_attributes(self):
        record = self.record(E("NAME", id="P0", start=12, end=17, text="Smith", TYPE="DOCTOR", comment=""))
        self.assertNsEqual(
            record.tags[0],
            """\
            element: NAME
            id: P0
            start: '12'
            end: '17'
            type: DOCTOR
            text: Smith
            comment: ''
            """,
        )

    def test_tags_typeFromElement(self):
        record = self.record(E("date", start=21, end=31))
        self.assertEqual(record.tags[0].type, "DATE")
        self.assertIsNone(record.tags[0].id)

    def test_tags_typeUppercased(self):
        record = self.record(E("NAME", start=12, end=17, TYPE="patient"))
        self.assertEqual(record.tags[0].type, "PATIENT")

    def test_malformed(self):
        record = I2b2Record(b"<deIdi2b2><TEXT>unclosed", "broken.xml")
        with self.assertRaises(I2b2FormatError) as ctx:
            record.tags
        self.assertIn("broken.xml", str(ctx.exception))

    def test_cached(self):
        record = self.record()
        self.assertIs(record.tags, record.tags)


# vim: et ts=4 sw=4
