"""
Prompt templates.

Grammar: a template is a whitespace-separated sequence of slot tokens.

    {x}         the input text (exactly once)
    {soft:k}    k soft tokens, k >= 1; indices continue across groups
    [MASK]      the mask position (exactly once)
    <other>     an anchor token: a fixed vocabulary word ([CLS], [SEP] included)

Example: ``[CLS] {soft:2} {x} the topic is [MASK] [SEP]``.
"""

import re
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from meta_prompting.models.exceptions import ContractError, TemplateError
from meta_prompting.prompt_model.vocab import MASK, SPECIAL_TOKENS, Vocab

_SOFT = re.compile(r"^\{soft:(\d+)\}$")
INPUT_MARKER = "{x}"


@dataclass(frozen=True)
class InputText:
    pass


@dataclass(frozen=True)
class SoftToken:
    index: int


@dataclass(frozen=True)
class AnchorToken:
    token_id: int


@dataclass(frozen=True)
class MaskToken:
    pass


Slot = Union[InputText, SoftToken, AnchorToken, MaskToken]


@dataclass(frozen=True)
class PromptTemplate:
    slots: tuple[Slot, ...]

    def __post_init__(self):
        masks = sum(isinstance(s, MaskToken) for s in self.slots)
        inputs = sum(isinstance(s, InputText) for s in self.slots)
        if masks != 1:
            raise TemplateError(f"template needs exactly one [MASK], found {masks}")
        if inputs != 1:
            raise TemplateError(f"template needs exactly one {INPUT_MARKER}, found {inputs}")
        soft = sorted(s.index for s in self.slots if isinstance(s, SoftToken))
        if soft != list(range(len(soft))):
            raise TemplateError(f"soft token indices must be 0..m-1, got {soft}")

    @property
    def num_soft(self) -> int:
        return sum(isinstance(s, SoftToken) for s in self.slots)

    @property
    def fixed_length(self) -> int:
        """Positions taken by everything except the input text."""
        return len(self.slots) - 1

    def anchor_ids(self) -> list[int]:
        return [s.token_id for s in self.slots if isinstance(s, AnchorToken)]


@dataclass(frozen=True)
class RenderedPrompt:
    """
    One prompt, resolved slot by slot.

    ``token_ids`` holds the vocabulary id feeding each position (the pad id at
    soft positions); ``soft_index`` holds the soft token index there and -1
    elsewhere.
    """

    token_ids: tuple[int, ...]
    soft_index: tuple[int, ...]
    mask_index: int

    def __len__(self) -> int:
        return len(self.token_ids)

    @property
    def soft_positions(self) -> list[int]:
        return [i for i, s in enumerate(self.soft_index) if s >= 0]


def anchor_words(text: str) -> list[str]:
    """Anchor words of a template string that a vocabulary must contain."""
    words = []
    for token in text.split():
        if token == INPUT_MARKER or token == MASK or _SOFT.match(token) or token in SPECIAL_TOKENS:
            continue
        words.append(token)
    return words


def parse_template(text: str, vocab: Vocab) -> PromptTemplate:
    slots: list[Slot] = []
    soft = 0
    for token in text.split():
        match = _SOFT.match(token)
        if token == INPUT_MARKER:
            slots.append(InputText())
        elif token == MASK:
            slots.append(MaskToken())
        elif match:
            k = int(match.group(1))
            if k < 1:
                raise TemplateError(f"'{token}': soft group needs k >= 1")
            slots.extend(SoftToken(soft + i) for i in range(k))
            soft += k
        elif token.startswith("{"):
            raise TemplateError(f"unknown placeholder '{token}'")
        elif token in vocab:
            slots.append(AnchorToken(vocab.id_of(token)))
        else:
            raise TemplateError(f"anchor word '{token}' is not in the vocabulary")
    return PromptTemplate(tuple(slots))


def format_template(template: PromptTemplate, vocab: Vocab) -> str:
    words: list[str] = []
    run = 0
    for slot in template.slots:
        if isinstance(slot, SoftToken):
            run += 1
            continue
        if run:
            words.append(f"{{soft:{run}}}")
            run = 0
        if isinstance(slot, InputText):
            words.append(INPUT_MARKER)
        elif isinstance(slot, MaskToken):
            words.append(MASK)
        else:
            words.append(vocab.tokens[slot.token_id])
    if run:
        words.append(f"{{soft:{run}}}")
    return " ".join(words)


def render_prompt(template: PromptTemplate, text: Sequence[int], vocab: Vocab, max_seq_len: int) -> RenderedPrompt:
    """
    Resolve ``template`` for one tokenized text. Text longer than the room
    left by the template is truncated from the right.
    """
    if len(text) == 0:
        raise ContractError("cannot render an empty text")
    room = max_seq_len - template.fixed_length
    if room < 1:
        raise ContractError(
            f"template takes {template.fixed_length} positions, max_seq_len {max_seq_len} leaves no room for text"
        )
    text = list(text)[:room]
    token_ids: list[int] = []
    soft_index: list[int] = []
    mask_index = -1
    for slot in template.slots:
        if isinstance(slot, InputText):
            token_ids.extend(int(t) for t in text)
            soft_index.extend([-1] * len(text))
        elif isinstance(slot, SoftToken):
            token_ids.append(vocab.pad_id)
            soft_index.append(slot.index)
        elif isinstance(slot, AnchorToken):
            token_ids.append(slot.token_id)
            soft_index.append(-1)
        else:
            mask_index = len(token_ids)
            token_ids.append(vocab.mask_id)
            soft_index.append(-1)
    return RenderedPrompt(tuple(token_ids), tuple(soft_index), mask_index)


def perturb_template(
    template: PromptTemplate, vocab: Vocab, rng: np.random.Generator, rate: float = 0.5
) -> PromptTemplate:
    """
    Replace non-special anchor words, each with probability ``rate``, by a
    random regular vocabulary word. Soft, input and mask slots stay put.
    """
    candidates = vocab.regular_ids()
    if not candidates:
        raise ContractError("vocabulary has no regular words to draw from")
    slots: list[Slot] = []
    for slot in template.slots:
        if isinstance(slot, AnchorToken) and not vocab.is_special(slot.token_id) and rng.random() < rate:
            slots.append(AnchorToken(int(candidates[rng.integers(len(candidates))])))
        else:
            slots.append(slot)
    return PromptTemplate(tuple(slots))
