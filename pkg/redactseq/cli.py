"""
The `redactseq` command.

    redactseq gen CONFIG [--seed N] [--out CORPUS]
    redactseq train CONFIG [--seed N] [--resume]
    redactseq deid --checkpoint CKPT --vocab VOCAB --in INPUT --out OUTPUT [--mode MODE] [--spans-out SPANS]
    redactseq eval --corpus CORPUS (--checkpoint CKPT --vocab VOCAB | --predictions SPANS) [--mode MODE] [--dump REPORT]
    redactseq inspect (--checkpoint CKPT | --corpus CORPUS)

Results go to the standard output, logs to the standard error.
The exit code is 0 on success, 2 for configuration errors, 3 for
unreadable or corrupt artifacts, 4 for numerical failures and 5 when
a checkpoint and a vocabulary do not belong together.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import (
    CATEGORIES,
    LabeledDocument,
    corpus_stats,
    generate_synthetic,
    load_i2b2_xml,
    read_corpus,
    split_corpus,
    write_corpus,
)
from .errors import ArtifactIOError, ConfigError, RedactSeqError
from .evaluation import EvalReport, compare_report, evaluate_corpus, evaluate_predictions, format_metric
from .inference import MODES, deidentify_batch, read_spans, write_spans
from .model import count_params
from .text import Vocabulary, build_vocab
from .training import train

logger = logging.getLogger(__name__)


def _print(*lines: str) -> None:
    for line in lines:
        sys.stdout.write(line.rstrip("\n") + "\n")


def _metrics_line(prefix: str, report: Optional[EvalReport]) -> str:
    if report is None:
        return f"{prefix}_precision=undefined {prefix}_recall=undefined {prefix}_f1=undefined"
    return " ".join(
        f"{prefix}_{name}={format_metric(getattr(report, name))}" for name in ("precision", "recall", "f1")
    )


def _read_documents(path: Path) -> List[LabeledDocument]:
    """A JSON lines corpus, or a directory of i2b2 XML records."""
    if path.is_dir():
        return load_i2b2_xml(path)
    return read_corpus(path)


def _check_distinct(source: Path, target: Path) -> None:
    if target.exists() and source.exists() and target.resolve() == source.resolve():
        raise ConfigError(f"refusing to overwrite the input {source}")


def _load_run(args) -> RunConfig:
    config = RunConfig.load(args.config, seed=args.seed)
    logger.info("resolved configuration:\n%s", config.dump())
    return config


def command_gen(args) -> int:
    """Writes a synthetic corpus."""
    config = _load_run(args)
    out = Path(args.out) if args.out else config.path("corpus")
    docs = generate_synthetic(config.synth)
    write_corpus(docs, out)
    logger.info("wrote %d documents to %s", len(docs), out)
    stats = corpus_stats(docs)
    _print(f"documents={stats.documents} tokens={stats.tokens} phi_tokens={stats.phi_tokens}")
    return 0


def _training_vocabulary(config: RunConfig, docs: Sequence[LabeledDocument]) -> Vocabulary:
    path = config.path("vocab")
    if path.exists():
        logger.info("loading vocabulary from %s", path)
        vocab = Vocabulary.load(path)
        if config.training.per_class != vocab.per_class:
            raise ConfigError(f"vocabulary {path} does not match training.per_class={config.training.per_class}")
        return vocab
    vocab = build_vocab(
        ([token.surface for token in doc.tokens] for doc in docs),
        config.training.vocab_min_freq,
        CATEGORIES if config.training.per_class else None,
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    vocab.save(path)
    logger.info("built vocabulary of %d entries into %s", len(vocab), path)
    return vocab


def _training_documents(config: RunConfig) -> List[LabeledDocument]:
    i2b2_dir = config.path("i2b2_dir")
    if i2b2_dir:
        if not i2b2_dir.is_dir():
            raise ConfigError(f"paths.i2b2_dir: {i2b2_dir} is not a directory")
        return load_i2b2_xml(i2b2_dir)
    corpus = config.path("corpus")
    if not corpus.is_file():
        raise ConfigError(f"paths.corpus: {corpus} not found, run `redactseq gen` first")
    return read_corpus(corpus)


def command_train(args) -> int:
    """Trains on the configured corpus and scores the best model on the test split."""
    config = _load_run(args)
    docs = _training_documents(config)
    split = config.split
    train_docs, val_docs, test_docs = split_corpus(docs, split.train, config.seed, split.validation, split.test)
    logger.info("split %d documents into %d/%d/%d", len(docs), len(train_docs), len(val_docs), len(test_docs))
    vocab = _training_vocabulary(config, train_docs)
    checkpoint_path = config.path("checkpoint")
    resume_from = None
    if args.resume:
        resume_from = checkpoint_path.with_name(checkpoint_path.name + ".last")
        if not resume_from.is_file():
            raise ConfigError(f"--resume: {resume_from} not found, set training.checkpoint_every to write it")
    result = train(
        train_docs,
        val_docs,
        vocab,
        config.model,
        config.training,
        checkpoint_path=checkpoint_path,
        metrics_path=config.path("metrics"),
        resume_from=resume_from,
    )
    if result.best_epoch is None:
        save_checkpoint(checkpoint_path, result.model, result.adam_state, dict(epoch=0, step=0))
    _print(
        f"epochs={len(result.history)} steps={result.steps} best_epoch={result.best_epoch or 0}",
        _metrics_line("val", result.best_report),
    )
    if test_docs:
        report = evaluate_corpus(result.model, vocab, test_docs, config.inference.mode)
        _print(_metrics_line("test", report))
    return 0


def _load_model(args):
    checkpoint = load_checkpoint(args.checkpoint)
    vocab = Vocabulary.load(args.vocab)
    checkpoint.model.check_vocabulary(vocab)
    return checkpoint.model, vocab


def _deid_inputs(path: Path) -> Tuple[bool, List[Tuple[str, str]]]:
    if path.suffix == ".jsonl":
        return True, [(doc.id, doc.text) for doc in read_corpus(path)]
    try:
        return False, [(path.stem, path.read_text(encoding="utf8"))]
    except (OSError, UnicodeDecodeError) as e:
        raise ArtifactIOError(f"cannot read {path}: {e}") from e


def command_deid(args) -> int:
    """Redacts a text file or every document of a corpus."""
    source, target = Path(args.input), Path(args.out)
    _check_distinct(source, target)
    model, vocab = _load_model(args)
    is_corpus, entries = _deid_inputs(source)
    results = deidentify_batch((text for _, text in entries), model, vocab, args.mode, overlap=args.overlap)
    done = [(doc_id, result) for (doc_id, _), result in zip(entries, results) if not isinstance(result, Exception)]
    failures = [(doc_id, result) for (doc_id, _), result in zip(entries, results) if isinstance(result, Exception)]
    if is_corpus:
        content = "".join(
            json.dumps(dict(id=doc_id, text=result.redacted_text), ensure_ascii=False) + "\n" for doc_id, result in done
        )
    else:
        content = done[0][1].redacted_text if done else ""
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(content, encoding="utf8")
    except OSError as e:
        raise ArtifactIOError(f"cannot write {target}: {e}") from e
    if args.spans_out:
        write_spans(done, args.spans_out)
    redacted = sum(len(result.redaction_spans) for _, result in done)
    logger.info("redacted %d tokens in %d documents", redacted, len(done))
    if args.mode == "unconstrained":
        violations = sum(result.violations for _, result in done)
        logger.warning("%d output tokens were neither the source token nor a redaction marker", violations)
    for doc_id, error in failures:
        logger.error("document %s: %s", doc_id, error)
    _print(f"documents={len(done)} redacted_tokens={redacted} failed={len(failures)}")
    return failures[0][1].exit_code if failures else 0


def command_eval(args) -> int:
    """Scores a model, or a span file, against a gold corpus."""
    docs = _read_documents(Path(args.corpus))
    if args.predictions:
        report = evaluate_predictions(docs, read_spans(args.predictions))
    else:
        if not (args.checkpoint and args.vocab):
            raise ConfigError("eval needs either --predictions or both --checkpoint and --vocab")
        model, vocab = _load_model(args)
        report = evaluate_corpus(model, vocab, docs, args.mode)
    _print(compare_report(report))
    _print(f"documents={report.n_documents} tokens={report.n_tokens} tp={report.tp} fp={report.fp} fn={report.fn}")
    if args.dump:
        try:
            Path(args.dump).write_text(report.dumps(), encoding="utf8")
        except OSError as e:
            raise ArtifactIOError(f"cannot write {args.dump}: {e}") from e
    return 0


def command_inspect(args) -> int:
    """Describes a checkpoint or a corpus."""
    if args.checkpoint:
        checkpoint = load_checkpoint(args.checkpoint)
        model = checkpoint.model
        _print(
            model.config.to_ns().dump(),
            f"parameters={count_params(model.config)}",
            f"vocab_fingerprint={model.vocab_fingerprint}",
            *(f"progress.{key}={value}" for key, value in checkpoint.progress.items()),
            f"optimizer_steps={checkpoint.adam_state.step_count if checkpoint.adam_state else 0}",
        )
        return 0
    _print(corpus_stats(_read_documents(Path(args.corpus))).summary())
    return 0


def build_parser() -> argparse.ArgumentParser:
    """Argument parser of the `redactseq` command."""
    parser = argparse.ArgumentParser(
        prog="redactseq",
        description="Sequence to sequence clinical text de-identification",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="log debug messages")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="log only warnings and errors")
    commands = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    gen = commands.add_parser("gen", help="generate a synthetic labeled corpus")
    gen.add_argument("config", help="run configuration file")
    gen.add_argument("--seed", type=int, help="overrides the configured seed")
    gen.add_argument("--out", help="corpus file to write, defaults to paths.corpus")
    gen.set_defaults(run=command_gen)

    training = commands.add_parser("train", help="train a model and keep the best checkpoint")
    training.add_argument("config", help="run configuration file")
    training.add_argument("--seed", type=int, help="overrides the configured seed")
    training.add_argument("--resume", action="store_true", help="continue from the periodic .last checkpoint")
    training.set_defaults(run=command_train)

    deid = commands.add_parser("deid", help="redact a text file or a corpus")
    deid.add_argument("--checkpoint", required=True)
    deid.add_argument("--vocab", required=True)
    deid.add_argument("--in", dest="input", required=True, help="plain text document or .jsonl corpus")
    deid.add_argument("--out", required=True)
    deid.add_argument("--mode", choices=MODES, default="constrained")
    deid.add_argument("--overlap", type=int, default=16, help="tokens shared by consecutive windows")
    deid.add_argument("--spans-out", help="write the redacted spans as a tab separated file")
    deid.set_defaults(run=command_deid)

    evaluation = commands.add_parser("eval", help="score redactions against gold annotations")
    evaluation.add_argument("--corpus", required=True, help=".jsonl corpus or directory of i2b2 XML records")
    evaluation.add_argument("--checkpoint")
    evaluation.add_argument("--vocab")
    evaluation.add_argument("--predictions", help="span file written by deid --spans-out")
    evaluation.add_argument("--mode", choices=MODES, default="constrained")
    evaluation.add_argument("--dump", help="write the report as key=value lines")
    evaluation.set_defaults(run=command_eval)

    inspect = commands.add_parser("inspect", help="describe a checkpoint or a corpus")
    target = inspect.add_mutually_exclusive_group(required=True)
    target.add_argument("--checkpoint")
    target.add_argument("--corpus")
    inspect.set_defaults(run=command_inspect)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Runs the command line, returning the exit code."""
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    logging.captureWarnings(True)
    try:
        return args.run(args)
    except RedactSeqError as e:
        logger.error("%s", e)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())


# vim: et ts=4 sw=4
