import io
import json
import unittest
from contextlib import redirect_stdout
from textwrap import dedent

from redactseq.checkpoint import load_checkpoint
from redactseq.cli import main
from redactseq.data import read_corpus
from redactseq.model import count_params
from redactseq.text import build_vocab
from tests.conftest import sandbox_dir

CONFIG = """\
seed: 3
synth:
  n_documents: 12
  sentences_per_doc: [1, 2]
model:
  d_model: 16
  n_heads: 2
  n_enc_layers: 1
  n_dec_layers: 1
  d_ff: 16
  max_len: 64
  dropout_rate: 0.0
training:
  max_epochs: 1
  batch_size: 4
split:
  train: 0.5
  validation: 0.25
  test: 0.25
paths:
  corpus: corpus.jsonl
  vocab: vocab.txt
  checkpoint: model.ckpt
  metrics: metrics.log
"""


class Cli_Test(unittest.TestCase):
    def run_cli(self, *argv):
        output = io.StringIO()
        with redirect_stdout(output):
            code = main(["-q", *argv])
        return code, output.getvalue()

    def setup_run(self, sandbox, config=CONFIG):
        (sandbox / "run.yaml").write_text(config, encoding="utf8")

    def trained(self, sandbox):
        self.setup_run(sandbox)
        self.assertEqual(self.run_cli("gen", "run.yaml")[0], 0)
        code, output = self.run_cli("train", "run.yaml")
        self.assertEqual(code, 0, output)
        return output

    def deid(self, *extra):
        return self.run_cli("deid", "--checkpoint", "model.ckpt", "--vocab", "vocab.txt", *extra)

    def test_gen(self):
        with sandbox_dir() as sandbox:
            self.setup_run(sandbox)
            code, output = self.run_cli("gen", "run.yaml")
            docs = read_corpus("corpus.jsonl")
        self.assertEqual(code, 0)
        self.assertEqual(len(docs), 12)
        self.assertTrue(output.startswith("documents=12 tokens="))

    def test_gen_countsMatchInspect(self):
        with sandbox_dir() as sandbox:
            self.setup_run(sandbox)
            _, generated = self.run_cli("gen", "run.yaml")
            code, inspected = self.run_cli("inspect", "--corpus", "corpus.jsonl")
        self.assertEqual(code, 0)
        self.assertEqual(inspected.splitlines()[0], generated.strip())
        self.assertIn("category.", inspected)

    def test_gen_deterministic(self):
        with sandbox_dir() as sandbox:
            self.setup_run(sandbox)
            self.run_cli("gen", "run.yaml", "--out", "a.jsonl")
            self.run_cli("gen", "run.yaml", "--out", "b.jsonl")
            self.run_cli("gen", "run.yaml", "--out", "c.jsonl", "--seed", "4")
            self.assertEqual((sandbox / "a.jsonl").read_bytes(), (sandbox / "b.jsonl").read_bytes())
            self.assertNotEqual((sandbox / "a.jsonl").read_bytes(), (sandbox / "c.jsonl").read_bytes())

    def test_gen_noDocuments(self):
        with sandbox_dir() as sandbox:
            self.setup_run(sandbox, "synth: {n_documents: 0}\n")
            code, output = self.run_cli("gen", "run.yaml")
            self.assertEqual((sandbox / "corpus.jsonl").read_text(), "")
        self.assertEqual(code, 0)
        self.assertEqual(output, "documents=0 tokens=0 phi_tokens=0\n")

    def test_gen_unknownKey(self):
        with sandbox_dir() as sandbox:
            self.setup_run(sandbox, "synth: {documents: 3}\n")
            self.assertEqual(self.run_cli("gen", "run.yaml")[0], 2)

    def test_gen_missingConfig(self):
        with sandbox_dir():
            self.assertEqual(self.run_cli("gen", "missing.yaml")[0], 3)

    def test_train(self):
        with sandbox_dir() as sandbox:
            output = self.trained(sandbox)
            checkpoint = load_checkpoint("model.ckpt")
            metrics = (sandbox / "metrics.log").read_text()
        self.assertIn("val_precision=", output)
        self.assertIn("test_recall=", output)
        self.assertTrue(metrics.startswith("step=2 epoch=1 train_loss="))
        self.assertEqual(checkpoint.progress["epoch"], 1)

    def test_train_deterministic(self):
        artifacts = []
        for _ in range(2):
            with sandbox_dir() as sandbox:
                self.trained(sandbox)
                artifacts.append([(sandbox / name).read_bytes() for name in ("model.ckpt", "metrics.log", "vocab.txt")])
        self.assertEqual(artifacts[0], artifacts[1])

    def test_train_missingCorpus(self):
        with sandbox_dir() as sandbox:
            self.setup_run(sandbox)
            with self.assertLogs("redactseq.cli", "ERROR") as logs:
                code, output = self.run_cli("train", "run.yaml")
        self.assertEqual(code, 2)
        self.assertEqual(output, "")
        self.assertIn("paths.corpus", logs.output[0])

    def test_train_missingI2b2Dir(self):
        with sandbox_dir() as sandbox:
            self.setup_run(sandbox, CONFIG + "  i2b2_dir: records\n")
            with self.assertLogs("redactseq.cli", "ERROR") as logs:
                code, _ = self.run_cli("train", "run.yaml")
        self.assertEqual(code, 2)
        self.assertIn("paths.i2b2_dir", logs.output[0])

    def test_train_resume(self):
        config = CONFIG.replace("  max_epochs: 1\n", "  max_epochs: 1\n  checkpoint_every: 1\n")
        with sandbox_dir() as sandbox:
            self.setup_run(sandbox, config)
            self.assertEqual(self.run_cli("gen", "run.yaml")[0], 0)
            code, output = self.run_cli("train", "run.yaml")
            self.assertEqual(code, 0, output)
            checkpoint = (sandbox / "model.ckpt").read_bytes()
            resumed_code, resumed = self.run_cli("train", "run.yaml", "--resume")
            self.assertEqual((sandbox / "model.ckpt").read_bytes(), checkpoint)
        self.assertEqual(resumed_code, 0)
        self.assertEqual(resumed, output)

    def test_train_resumeWithoutLast(self):
        with sandbox_dir() as sandbox:
            self.trained(sandbox)
            with self.assertLogs("redactseq.cli", "ERROR") as logs:
                code, _ = self.run_cli("train", "run.yaml", "--resume")
        self.assertEqual(code, 2)
        self.assertIn("model.ckpt.last", logs.output[0])

    def test_deid_text(self):
        with sandbox_dir() as sandbox:
            self.trained(sandbox)
            text = "Seen by  Dr. Qwertyuiop on 03/12/2019.\n"
            (sandbox / "note.txt").write_text(text, encoding="utf8")
            code, output = self.deid("--in", "note.txt", "--out", "out/note.txt")
            redacted = (sandbox / "out" / "note.txt").read_text(encoding="utf8")
        self.assertEqual(code, 0)
        self.assertTrue(output.startswith("documents=1 redacted_tokens="))
        self.assertEqual(redacted.count("\n"), 1)
        self.assertEqual(len(redacted.split()), len(text.split()))

    def test_deid_corpus(self):
        with sandbox_dir() as sandbox:
            self.trained(sandbox)
            code, _ = self.deid("--in", "corpus.jsonl", "--out", "redacted.jsonl")
            lines = (sandbox / "redacted.jsonl").read_text(encoding="utf8").splitlines()
        self.assertEqual(code, 0)
        self.assertEqual([json.loads(line)["id"] for line in lines], [f"synth-{i:06d}" for i in range(12)])

    def test_deidThenEval_equalsEval(self):
        with sandbox_dir() as sandbox:
            self.trained(sandbox)
            self.deid("--in", "corpus.jsonl", "--out", "redacted.jsonl", "--spans-out", "spans.tsv")
            code, piped = self.run_cli("eval", "--corpus", "corpus.jsonl", "--predictions", "spans.tsv")
            _, direct = self.run_cli(
                "eval", "--corpus", "corpus.jsonl", "--checkpoint", "model.ckpt", "--vocab", "vocab.txt"
            )
        self.assertEqual(code, 0)
        self.assertEqual(piped, direct)
        self.assertIn("[reference (not reproduced)]", piped)

    def test_eval_dump(self):
        with sandbox_dir() as sandbox:
            self.trained(sandbox)
            model = ("--checkpoint", "model.ckpt", "--vocab", "vocab.txt")
            self.run_cli("eval", "--corpus", "corpus.jsonl", *model, "--dump", "report.txt")
            report = (sandbox / "report.txt").read_text()
        self.assertTrue(report.startswith("n_documents=12\n"))

    def test_eval_needsModelOrPredictions(self):
        with sandbox_dir() as sandbox:
            self.setup_run(sandbox)
            self.run_cli("gen", "run.yaml")
            self.assertEqual(self.run_cli("eval", "--corpus", "corpus.jsonl", "--vocab", "vocab.txt")[0], 2)

    def test_deid_emptyInput(self):
        with sandbox_dir() as sandbox:
            self.trained(sandbox)
            (sandbox / "empty.txt").write_text("", encoding="utf8")
            (sandbox / "empty.jsonl").write_text("", encoding="utf8")
            self.assertEqual(self.deid("--in", "empty.txt", "--out", "a.txt")[0], 0)
            self.assertEqual(self.deid("--in", "empty.jsonl", "--out", "b.jsonl")[0], 0)
            self.assertEqual((sandbox / "a.txt").read_text(), "")
            self.assertEqual((sandbox / "b.jsonl").read_text(), "")

    def test_deid_vocabularyMismatch(self):
        with sandbox_dir() as sandbox:
            self.trained(sandbox)
            build_vocab([["other"]]).save("vocab.txt")
            (sandbox / "note.txt").write_text("hello", encoding="utf8")
            self.assertEqual(self.deid("--in", "note.txt", "--out", "out.txt")[0], 5)
            self.assertFalse((sandbox / "out.txt").exists())

    def test_deid_refusesToOverwriteInput(self):
        with sandbox_dir() as sandbox:
            self.trained(sandbox)
            (sandbox / "note.txt").write_text("hello", encoding="utf8")
            self.assertEqual(self.deid("--in", "note.txt", "--out", "note.txt")[0], 2)
            self.assertEqual((sandbox / "note.txt").read_text(), "hello")

    def test_deid_truncatedCheckpoint(self):
        with sandbox_dir() as sandbox:
            self.trained(sandbox)
            content = (sandbox / "model.ckpt").read_bytes()
            (sandbox / "model.ckpt").write_bytes(content[: len(content) // 2])
            (sandbox / "note.txt").write_text("hello", encoding="utf8")
            self.assertEqual(self.deid("--in", "note.txt", "--out", "out.txt")[0], 3)
            self.assertEqual(self.run_cli("inspect", "--checkpoint", "model.ckpt")[0], 3)

    def test_inspect_checkpoint(self):
        with sandbox_dir() as sandbox:
            self.trained(sandbox)
            code, output = self.run_cli("inspect", "--checkpoint", "model.ckpt")
            model = load_checkpoint("model.ckpt").model
        self.assertEqual(code, 0)
        self.assertIn(f"parameters={count_params(model.config)}\n", output)
        self.assertIn(f"vocab_fingerprint={model.vocab_fingerprint}\n", output)
        self.assertIn("d_model: 16\n", output)
        self.assertIn("optimizer_steps=2\n", output)

    def test_inspect_missingCorpus(self):
        with sandbox_dir():
            self.assertEqual(self.run_cli("inspect", "--corpus", "missing.jsonl")[0], 3)

    def test_inspect_i2b2Directory(self):
        with sandbox_dir() as sandbox:
            (sandbox / "xml").mkdir()
            (sandbox / "xml" / "a.xml").write_text(
                dedent(
                    """\
                    <deIdi2b2><TEXT>Mr Smith</TEXT><TAGS>
                    <NAME id="P0" start="3" end="8" text="Smith" TYPE="PATIENT" comment="" />
                    </TAGS></deIdi2b2>
                    """
                ),
                encoding="utf8",
            )
            code, output = self.run_cli("inspect", "--corpus", "xml")
        self.assertEqual(code, 0)
        self.assertEqual(output, "documents=1 tokens=2 phi_tokens=1\ncategory.NAME=1\n")


# vim: et ts=4 sw=4
