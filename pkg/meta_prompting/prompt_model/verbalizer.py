from typing import Mapping, Optional, Sequence, Union

import numpy as np

from meta_prompting.autodiff import (
    Tensor,
    concat,
    cross_entropy,
    getitem,
    logsumexp,
    matmul,
    softmax,
    sub,
    transpose,
)
from meta_prompting.models.exceptions import ContractError
from meta_prompting.prompt_model.vocab import Vocab


class Verbalizer:
    """
    Answer-label map: label index -> non-empty set of answer vocabulary ids.
    Labels are the indices 0..L-1 of ``answers``; answer sets are disjoint.
    """

    def __init__(self, answers: Sequence[Sequence[int]], vocab_size: int):
        seen: set[int] = set()
        normalized: list[tuple[int, ...]] = []
        for label, ids in enumerate(answers):
            ids = tuple(sorted({int(i) for i in ids}))
            if not ids:
                raise ContractError(f"label {label} has no answer tokens")
            for i in ids:
                if not 0 <= i < vocab_size:
                    raise ContractError(f"answer id {i} of label {label} is outside the vocabulary")
                if i in seen:
                    raise ContractError(f"answer id {i} is shared between labels")
                seen.add(i)
            normalized.append(ids)
        self.answers: tuple[tuple[int, ...], ...] = tuple(normalized)
        self.vocab_size = vocab_size

    def __len__(self) -> int:
        return len(self.answers)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Verbalizer) and (self.answers, self.vocab_size) == (
            other.answers,
            other.vocab_size,
        )

    def __repr__(self) -> str:
        return f"Verbalizer({len(self)} labels)"

    @classmethod
    def from_words(cls, words: Mapping[int, Sequence[str]], vocab: Vocab) -> "Verbalizer":
        labels = sorted(words)
        if labels != list(range(len(labels))):
            raise ContractError("verbalizer labels must be 0..L-1")
        return cls([[vocab.id_of(w) for w in words[label]] for label in labels], len(vocab))

    @classmethod
    def from_label_names(cls, label_names: Sequence[str], vocab: Vocab) -> "Verbalizer":
        """Each label answered by the vocabulary word equal to its name."""
        return cls([[vocab.id_of(name)] for name in label_names], len(vocab))

    @classmethod
    def from_corpus(cls, corpus, vocab: Optional[Vocab] = None) -> "Verbalizer":
        """Label names of ``corpus`` as their own answer words, looked up in ``vocab`` (default: the corpus vocabulary)."""
        return cls.from_label_names(corpus.label_names, vocab if vocab is not None else corpus.vocab)

    def restrict(self, palette: Sequence[int]) -> "Verbalizer":
        """Verbalizer over episode-local labels: local label i answers as global ``palette[i]``."""
        try:
            return Verbalizer([self.answers[g] for g in palette], self.vocab_size)
        except IndexError:
            raise ContractError(f"palette {list(palette)} names labels outside 0..{len(self) - 1}") from None

    def answer_matrix(self) -> np.ndarray:
        """(L, V) matrix averaging probabilities over each label's answers."""
        m = np.zeros((len(self), self.vocab_size))
        for label, ids in enumerate(self.answers):
            m[label, list(ids)] = 1.0 / len(ids)
        return m


def label_probs(logits: Tensor, verbalizer: Verbalizer) -> Tensor:
    """(B, V) logits -> (B, L) mean answer probability per label; rows need not sum to 1."""
    if logits.shape[-1] != verbalizer.vocab_size:
        raise ContractError(f"logits over {logits.shape[-1]} tokens, verbalizer expects {verbalizer.vocab_size}")
    return matmul(softmax(logits, axis=-1), transpose(Tensor(verbalizer.answer_matrix())))


def label_log_scores(logits: Tensor, verbalizer: Verbalizer) -> Tensor:
    """
    (B, L) log of each label's mean answer probability, up to a per-row
    constant: log(mean_a exp(logit_a)). Renormalizing over labels makes the
    constant cancel, so log_softmax of these scores is the log of the
    label-renormalized probability.
    """
    columns = []
    for ids in verbalizer.answers:
        picked = getitem(logits, (slice(None), np.asarray(ids)))
        columns.append(sub(logsumexp(picked, axis=-1, keepdims=True), float(np.log(len(ids)))))
    return concat(columns, axis=1)


def label_loss(logits: Tensor, verbalizer: Verbalizer, labels: Union[Sequence[int], np.ndarray]) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= len(verbalizer)):
        raise ContractError(f"labels {sorted(set(labels.tolist()))} outside the verbalizer's 0..{len(verbalizer) - 1}")
    return cross_entropy(label_log_scores(logits, verbalizer), labels)


def predict_labels(scores: np.ndarray) -> np.ndarray:
    """Row-wise argmax; the lowest label index wins ties."""
    return np.argmax(np.asarray(scores), axis=-1)
