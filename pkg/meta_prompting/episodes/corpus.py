from dataclasses import dataclass
from typing import Iterable, Sequence

from meta_prompting.models.exceptions import ContractError
from meta_prompting.prompt_model.vocab import Vocab


@dataclass(frozen=True)
class Example:
    tokens: tuple[int, ...]
    label: int


class Corpus:
    """
    Immutable labeled text collection over a vocabulary. Label ids are
    0..L-1 and index ``label_names``.
    """

    def __init__(self, vocab: Vocab, examples: Iterable[Example], label_names: Sequence[str], domain: str = ""):
        self.vocab = vocab
        self.examples: tuple[Example, ...] = tuple(examples)
        self.label_names: tuple[str, ...] = tuple(label_names)
        self.domain = domain
        if len(set(self.label_names)) != len(self.label_names):
            raise ContractError("label names must be unique")
        by_label: dict[int, list[int]] = {label: [] for label in range(len(self.label_names))}
        for i, example in enumerate(self.examples):
            if example.label not in by_label:
                raise ContractError(f"example {i} has label {example.label} outside 0..{len(self.label_names) - 1}")
            by_label[example.label].append(i)
        self.by_label: dict[int, tuple[int, ...]] = {k: tuple(v) for k, v in by_label.items()}

    def __len__(self) -> int:
        return len(self.examples)

    def __repr__(self) -> str:
        return f"Corpus({self.domain or 'untagged'}: {len(self)} examples, {self.num_labels} labels)"

    @property
    def num_labels(self) -> int:
        return len(self.label_names)

    def label_id(self, name: str) -> int:
        try:
            return self.label_names.index(name)
        except ValueError:
            raise ContractError(f"unknown label '{name}'") from None

    def label_counts(self) -> dict[int, int]:
        return {label: len(idx) for label, idx in self.by_label.items()}

    def text_of(self, index: int) -> str:
        return self.vocab.decode(self.examples[index].tokens)

    def examples_of(self, labels: Iterable[int]) -> list[Example]:
        wanted = set(labels)
        return [e for e in self.examples if e.label in wanted]

    def records(self) -> list[tuple[str, str]]:
        """(text, label name) pairs in corpus order."""
        return [(self.vocab.decode(e.tokens), self.label_names[e.label]) for e in self.examples]
