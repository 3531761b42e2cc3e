"""Clinical text de-identification as sequence to sequence translation."""

__version__ = "0.1.0"

from .data import LabeledDocument, PhiCategory, PhiSpan, generate_synthetic, load_i2b2_xml, to_training_pairs
from .evaluation import EvalReport, evaluate_corpus, token_metrics
from .inference import DeidResult, deidentify, deidentify_batch
from .model import ModelConfig, Seq2SeqModel
from .text import Vocabulary, build_vocab, tokenize
from .training import TrainingConfig, train
