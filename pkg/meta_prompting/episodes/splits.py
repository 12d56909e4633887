import logging
from dataclasses import dataclass
from typing import Literal, Optional, Sequence, Union

import numpy as np

from meta_prompting.episodes.corpus import Corpus
from meta_prompting.models.exceptions import CapacityError, ContractError

logger = logging.getLogger(__name__)

SplitName = Literal["train", "val", "test"]
SPLIT_NAMES: tuple[str, ...] = ("train", "val", "test")


@dataclass(frozen=True)
class SplitSpec:
    """Label-disjoint train / validation / test label sets."""

    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]
    seed: int = 0

    def __post_init__(self):
        sets = [set(self.train), set(self.val), set(self.test)]
        for (a, name_a), (b, name_b) in (
            ((sets[0], "train"), (sets[1], "val")),
            ((sets[0], "train"), (sets[2], "test")),
            ((sets[1], "val"), (sets[2], "test")),
        ):
            shared = a & b
            if shared:
                raise ContractError(f"{name_a} and {name_b} splits share labels {sorted(shared)}")

    def labels(self, split: str) -> tuple[int, ...]:
        if split not in SPLIT_NAMES:
            raise ContractError(f"unknown split '{split}'")
        return getattr(self, split)

    def split_of(self, label: int) -> Optional[str]:
        for name in SPLIT_NAMES:
            if label in self.labels(name):
                return name
        return None


LabelRef = Union[int, str]


def _resolve(corpus: Corpus, labels: Sequence[LabelRef]) -> tuple[int, ...]:
    out = []
    for label in labels:
        if isinstance(label, str):
            out.append(corpus.label_id(label))
        elif 0 <= int(label) < corpus.num_labels:
            out.append(int(label))
        else:
            raise ContractError(f"label {label} is not in the corpus")
    if len(set(out)) != len(out):
        raise ContractError("a label is listed twice within one split")
    return tuple(out)


def make_splits(
    corpus: Corpus,
    fractions: Sequence[float] = (0.5, 0.25, 0.25),
    seed: int = 0,
    min_way: int = 1,
    explicit: Optional[Sequence[Sequence[LabelRef]]] = None,
) -> SplitSpec:
    """
    Partition the corpus labels into disjoint train/val/test sets, either from
    ``explicit`` (train, val, test) label lists or by shuffling with ``seed``
    and cutting by ``fractions``. Every split gets at least ``min_way`` labels.
    """
    if explicit is not None:
        train, val, test = (_resolve(corpus, labels) for labels in explicit)
        return SplitSpec(train, val, test, seed)

    total = corpus.num_labels
    if total < 3 * min_way:
        raise CapacityError(f"{total} labels cannot form three splits of at least {min_way} labels", label=None)
    counts = [max(min_way, int(round(f * total))) for f in fractions]
    # the train split absorbs any rounding excess or shortfall
    counts[0] = min(counts[0], total - counts[1] - counts[2])
    if abs(sum(fractions) - 1.0) < 1e-9:
        counts[0] = total - counts[1] - counts[2]
    if counts[0] < min_way:
        raise CapacityError(f"{total} labels leave only {counts[0]} for training, need {min_way}", label=None)
    order = np.random.default_rng(seed).permutation(total)
    train = tuple(sorted(int(i) for i in order[: counts[0]]))
    val = tuple(sorted(int(i) for i in order[counts[0] : counts[0] + counts[1]]))
    test = tuple(sorted(int(i) for i in order[counts[0] + counts[1] : counts[0] + counts[1] + counts[2]]))
    logger.debug(f"Label splits: {len(train)} train / {len(val)} val / {len(test)} test")
    return SplitSpec(train, val, test, seed)
