"""Dataset ingestion, span conduction, windowing, and synthetic pairs."""

from .loaders import DATASET_FORMATS, load_dataset, read_dataset_tags, write_span_json
from .records import AnswerSpan, Domain, EncodedWindow, RCExample
from .spans import (
    DEFAULT_MAX_SPAN_LEN,
    best_f1_span,
    build_conversational_question,
    extract_cloze_span,
)
from .synthetic import StyleShift, SyntheticTaskSpec, generate_synthetic_domain_pair
from .tokenizer import DEFAULT_TOKENIZER, RegexTokenizer, Tokenizer, char_span_to_token_span
from .vocab import CLS_TOKEN, PAD_TOKEN, SEP_TOKEN, UNK_TOKEN, Vocabulary
from .windows import dump_windows_jsonl, load_windows_jsonl, window_examples

__all__ = [
    "AnswerSpan",
    "CLS_TOKEN",
    "DATASET_FORMATS",
    "DEFAULT_MAX_SPAN_LEN",
    "DEFAULT_TOKENIZER",
    "Domain",
    "EncodedWindow",
    "PAD_TOKEN",
    "RCExample",
    "RegexTokenizer",
    "SEP_TOKEN",
    "StyleShift",
    "SyntheticTaskSpec",
    "Tokenizer",
    "UNK_TOKEN",
    "Vocabulary",
    "best_f1_span",
    "build_conversational_question",
    "char_span_to_token_span",
    "dump_windows_jsonl",
    "extract_cloze_span",
    "generate_synthetic_domain_pair",
    "load_dataset",
    "load_windows_jsonl",
    "read_dataset_tags",
    "window_examples",
    "write_span_json",
]
