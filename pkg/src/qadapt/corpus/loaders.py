"""Dataset ingestion for the three supported raw-file schemas.

Formats:

* ``span_json`` — SQuAD-v1.1-compatible records with character-offset
  answers: ``{"data": [{"id", "context", "question",
  "answers": [{"text", "answer_start"}]}]}``.
* ``cloze_json`` — adds ``"answer_entity"`` and ``"question_entities"``;
  entity masks appear as ``@entityN`` tokens in the text. A record may
  carry an optional ``"entity_map"`` giving the original surface form of
  each mask; replacement happens after span extraction so indices are
  preserved.
* ``conversational_json`` — adds ``"turn"``, ``"history"``
  (``[{"q", "a"}]``) and a free-form ``"answer_text"``; the span is
  conducted by best token F1.

Unanswerable or span-less records are dropped rather than raised on.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Optional, Sequence

from ..errors import DatasetParseError
from .records import AnswerSpan, Domain, RCExample
from .spans import (
    DEFAULT_MAX_SPAN_LEN,
    best_f1_span,
    build_conversational_question,
    extract_cloze_span,
)
from .tokenizer import DEFAULT_TOKENIZER, Tokenizer, char_span_to_token_span

DATASET_FORMATS = ("span_json", "cloze_json", "conversational_json")


def _field(record: dict, name: str, kind: type, index: int):
    if name not in record:
        raise DatasetParseError(f"record {index}: missing field '{name}'")
    value = record[name]
    if not isinstance(value, kind):
        raise DatasetParseError(
            f"record {index}: field '{name}' should be {kind.__name__}, "
            f"got {type(value).__name__}"
        )
    return value


def _is_yes_no(text: str) -> bool:
    cleaned = "".join(ch for ch in text.lower() if ch.isalnum() or ch.isspace())
    return cleaned.strip() in {"yes", "no"}


def _rebuild_with_entity_map(
    tokens: list[str], entity_map: dict[str, str]
) -> tuple[tuple[str, ...], str, tuple[tuple[int, int], ...]]:
    """Swap mask tokens for their original surface forms, then lay the
    tokens out again (single spaces) so character offsets stay exact.
    Token indices are untouched."""
    replaced = [entity_map.get(t, t) for t in tokens]
    offsets = []
    cursor = 0
    for t in replaced:
        offsets.append((cursor, cursor + len(t)))
        cursor += len(t) + 1
    return tuple(replaced), " ".join(replaced), tuple(offsets)


def load_dataset(
    path: str | Path,
    format: str,
    domain: Domain = "source",
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
    max_span_len: int = DEFAULT_MAX_SPAN_LEN,
) -> list[RCExample]:
    if format not in DATASET_FORMATS:
        raise DatasetParseError(f"unknown dataset format '{format}'")
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise DatasetParseError(f"{path}: not valid JSON ({err})") from err
    if not isinstance(payload, dict) or not isinstance(payload.get("data"), list):
        raise DatasetParseError(f"{path}: top-level object must carry a 'data' list")

    examples: list[RCExample] = []
    for index, record in enumerate(payload["data"]):
        if not isinstance(record, dict):
            raise DatasetParseError(f"record {index}: not an object")
        example = _parse_record(record, index, format, domain, tokenizer, max_span_len)
        if example is not None:
            examples.append(example)
    return examples


def _parse_record(
    record: dict,
    index: int,
    format: str,
    domain: Domain,
    tokenizer: Tokenizer,
    max_span_len: int,
) -> Optional[RCExample]:
    example_id = str(_field(record, "id", (str, int), index))
    context = _field(record, "context", str, index)
    question = _field(record, "question", str, index)
    passage_tokens, passage_offsets = tokenizer.tokenize(context)
    if not passage_tokens:
        raise DatasetParseError(f"record {index}: field 'context' tokenizes to nothing")
    question_tokens, _ = tokenizer.tokenize(question)

    answer: Optional[AnswerSpan] = None
    answer_text: Optional[str] = None

    if format == "span_json":
        answers = _field(record, "answers", list, index)
        if not answers:
            return None
        first = answers[0]
        if not isinstance(first, dict):
            raise DatasetParseError(f"record {index}: field 'answers[0]' is not an object")
        text = _field(first, "text", str, index)
        start = _field(first, "answer_start", int, index)
        token_span = char_span_to_token_span(passage_offsets, start, start + max(len(text), 1))
        if token_span is None:
            raise DatasetParseError(
                f"record {index}: field 'answers[0].answer_start' ({start}) "
                "covers no passage token"
            )
        answer = AnswerSpan(*token_span)

    elif format == "cloze_json":
        answer_entity = _field(record, "answer_entity", str, index)
        question_entities = _field(record, "question_entities", list, index)
        occurrences = [i for i, t in enumerate(passage_tokens) if t == answer_entity]
        if not occurrences:
            return None
        entity_occurrences = [
            [i for i, t in enumerate(passage_tokens) if t == entity]
            for entity in question_entities
        ]
        position = extract_cloze_span(passage_tokens, occurrences, entity_occurrences)
        answer = AnswerSpan(position, position)
        entity_map = record.get("entity_map")
        if entity_map:
            if not isinstance(entity_map, dict):
                raise DatasetParseError(f"record {index}: field 'entity_map' is not an object")
            passage_tokens, context, passage_offsets = _rebuild_with_entity_map(
                list(passage_tokens), entity_map
            )
            question_tokens = [entity_map.get(t, t) for t in question_tokens]

    else:  # conversational_json
        answer_text = _field(record, "answer_text", str, index)
        if _is_yes_no(answer_text):
            return None
        history_raw = _field(record, "history", list, index)
        history = []
        for turn in history_raw:
            if not isinstance(turn, dict) or "q" not in turn or "a" not in turn:
                raise DatasetParseError(f"record {index}: field 'history' turn malformed")
            history.append((tokenizer.tokenize(str(turn["q"]))[0], tokenizer.tokenize(str(turn["a"]))[0]))
        question_tokens = build_conversational_question(history, question_tokens)
        answer = best_f1_span(passage_tokens, answer_text, max_span_len)
        if answer is None:
            return None

    return RCExample(
        id=example_id,
        passage_tokens=tuple(passage_tokens),
        question_tokens=tuple(question_tokens),
        passage_text=context,
        passage_offsets=tuple(passage_offsets),
        answer=answer,
        domain=domain,
        answer_text=answer_text,
    )


def write_span_json(
    examples: Iterable[RCExample],
    path: str | Path,
    corpus: Optional[str] = None,
    question_form: Optional[str] = None,
) -> None:
    """Serialize examples to the span_json schema (labels included when
    present). ``corpus``/``question_form`` become optional dataset-level
    tags used by the relation graph."""
    data = []
    for ex in examples:
        answers = []
        if ex.answer is not None:
            answers.append(
                {
                    "text": ex.span_text(ex.answer),
                    "answer_start": ex.passage_offsets[ex.answer.start][0],
                }
            )
        data.append(
            {
                "id": ex.id,
                "context": ex.passage_text,
                "question": " ".join(ex.question_tokens),
                "answers": answers,
            }
        )
    payload: dict = {"data": data}
    if corpus:
        payload["corpus"] = corpus
    if question_form:
        payload["question_form"] = question_form
    Path(path).write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")


def read_dataset_tags(path: str | Path) -> dict[str, str]:
    """Optional top-level 'corpus'/'question_form' tags of a dataset file."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return {}
    tags = {}
    for key in ("corpus", "question_form"):
        if isinstance(payload, dict) and isinstance(payload.get(key), str):
            tags[key] = payload[key]
    return tags
