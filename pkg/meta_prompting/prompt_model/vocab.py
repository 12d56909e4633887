import hashlib
from typing import Iterable, Sequence, Union

from meta_prompting.models.exceptions import ContractError

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIAL_TOKENS: tuple[str, ...] = (PAD, UNK, CLS, SEP, MASK)


class Vocab:
    """Ordered token alphabet; the special tokens always occupy ids 0-4."""

    def __init__(self, tokens: Iterable[str] = ()):
        ordered = list(SPECIAL_TOKENS) + [t for t in tokens if t not in SPECIAL_TOKENS]
        index: dict[str, int] = {}
        for i, token in enumerate(ordered):
            if token in index:
                raise ContractError(f"Duplicate vocabulary token '{token}'")
            index[token] = i
        self.tokens: tuple[str, ...] = tuple(ordered)
        self._index = index
        self.pad_id = index[PAD]
        self.unk_id = index[UNK]
        self.cls_id = index[CLS]
        self.sep_id = index[SEP]
        self.mask_id = index[MASK]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: object) -> bool:
        return token in self._index

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def __hash__(self) -> int:
        return hash(self.tokens)

    def __repr__(self) -> str:
        return f"Vocab({len(self)} tokens)"

    def id_of(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise ContractError(f"Token '{token}' is not in the vocabulary") from None

    def lookup(self, token: str) -> int:
        return self._index.get(token, self.unk_id)

    def encode(self, text: Union[str, Sequence[str]]) -> list[int]:
        words = text.split() if isinstance(text, str) else list(text)
        return [self.lookup(w) for w in words]

    def decode(self, ids: Iterable[int]) -> str:
        return " ".join(self.tokens[int(i)] for i in ids)

    def is_special(self, token_id: int) -> bool:
        return self.tokens[int(token_id)] in SPECIAL_TOKENS

    def extend(self, words: Iterable[str]) -> "Vocab":
        """A vocabulary with ``words`` appended (existing ones are kept in place)."""
        extra = []
        for w in words:
            if w not in self._index and w not in extra:
                extra.append(w)
        if not extra:
            return self
        return Vocab(self.tokens[len(SPECIAL_TOKENS) :] + tuple(extra))

    def regular_ids(self) -> list[int]:
        return [i for i, t in enumerate(self.tokens) if t not in SPECIAL_TOKENS]

    def fingerprint(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()
