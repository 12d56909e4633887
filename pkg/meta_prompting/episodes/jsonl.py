import json
import logging
import os
from collections import Counter
from dataclasses import dataclass
from os import PathLike
from typing import Optional, Union

from meta_prompting.episodes.corpus import Corpus, Example
from meta_prompting.models.exceptions import ContractError, CorpusParseError
from meta_prompting.prompt_model.vocab import Vocab

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class VocabPolicy:
    """How a vocabulary is built from a text corpus: frequency cap and floor, case folding."""

    max_size: Optional[int] = None
    min_freq: int = 1
    lowercase: bool = True

    def normalize(self, text: str) -> list[str]:
        return (text.lower() if self.lowercase else text).split()


def _parse_line(line: str, number: int) -> tuple[str, str]:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as e:
        raise CorpusParseError(f"invalid JSON ({e.msg})", line_number=number) from e
    if not isinstance(record, dict):
        raise CorpusParseError("expected a JSON object", line_number=number)
    text, label = record.get("text"), record.get("label")
    if not isinstance(text, str) or not isinstance(label, str):
        raise CorpusParseError('fields "text" and "label" must both be strings', line_number=number)
    if not text.split():
        raise CorpusParseError("text is empty", line_number=number)
    return text, label


def load_jsonl(path: Union[str, PathLike], policy: Optional[VocabPolicy] = None, domain: Optional[str] = None) -> Corpus:
    """
    Read a JSONL corpus: one ``{"text": ..., "label": ...}`` object per line.
    Texts are whitespace-tokenized; words below ``min_freq`` or past
    ``max_size`` map to [UNK]. Label names join the vocabulary as answer words.
    """
    policy = policy or VocabPolicy()
    records: list[tuple[list[str], str]] = []
    try:
        f = open(path, "rb")
    except OSError as e:
        raise ContractError(f"cannot read corpus {os.fspath(path)}: {e.strerror}") from e
    with f:
        for number, raw in enumerate(f, start=1):
            try:
                line = raw.decode("utf-8", errors="strict")
            except UnicodeDecodeError as e:
                raise CorpusParseError(f"invalid UTF-8 at byte {e.start}", line_number=number) from e
            if not line.strip():
                continue
            text, label = _parse_line(line, number)
            records.append((policy.normalize(text), label))
    if not records:
        raise ContractError(f"{path} holds no examples")

    label_names: list[str] = []
    label_ids: dict[str, int] = {}
    for _, label in records:
        if label not in label_ids:
            label_ids[label] = len(label_names)
            label_names.append(label)

    counts = Counter(word for words, _ in records for word in words)
    kept = sorted((w for w, c in counts.items() if c >= policy.min_freq), key=lambda w: (-counts[w], w))
    if policy.max_size is not None:
        kept = kept[: policy.max_size]
    vocab = Vocab(label_names).extend(kept)
    examples = [Example(tuple(vocab.encode(words)), label_ids[label]) for words, label in records]
    logger.info(f"Loaded {len(examples)} examples, {len(label_names)} labels, {len(vocab)} tokens from {path}")
    return Corpus(vocab, examples, label_names, domain=domain or os.path.basename(os.fspath(path)))


def write_jsonl(corpus: Corpus, path: Union[str, PathLike]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for text, label in corpus.records():
            f.write(json.dumps({"text": text, "label": label}, ensure_ascii=False) + "\n")
    logger.info(f"Wrote {len(corpus)} examples to {path}")
