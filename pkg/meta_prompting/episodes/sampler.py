import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from meta_prompting.episodes.corpus import Corpus
from meta_prompting.episodes.splits import SplitSpec
from meta_prompting.models.exceptions import CapacityError, ContractError
from meta_prompting.utils import worker_rng

logger = logging.getLogger(__name__)

SHARD_SIZE = 100


@dataclass(frozen=True)
class LabeledSet:
    """Tokenized texts with episode-local labels; ``ids`` are corpus example indices."""

    texts: tuple[tuple[int, ...], ...]
    labels: tuple[int, ...]
    ids: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.texts)

    def union(self, other: "LabeledSet") -> "LabeledSet":
        return LabeledSet(self.texts + other.texts, self.labels + other.labels, self.ids + other.ids)

    def take(self, indices: Sequence[int]) -> "LabeledSet":
        return LabeledSet(
            tuple(self.texts[i] for i in indices),
            tuple(self.labels[i] for i in indices),
            tuple(self.ids[i] for i in indices),
        )


@dataclass(frozen=True)
class Episode:
    """
    One N-way K-shot task. ``palette[i]`` is the global label id behind
    episode-local label i.
    """

    way: int
    shot: int
    query_size: int
    palette: tuple[int, ...]
    support: LabeledSet
    query: LabeledSet

    def global_label(self, local: int) -> int:
        return self.palette[local]

    def local_label(self, global_label: int) -> int:
        return self.palette.index(global_label)

    def validate(self) -> None:
        if len(set(self.palette)) != len(self.palette) or len(self.palette) != self.way:
            raise ContractError("episode palette is not a bijection onto 0..N-1")
        if set(self.support.ids) & set(self.query.ids):
            raise ContractError("support and query share examples")
        for name, part, per_label in (("support", self.support, self.shot), ("query", self.query, self.query_size)):
            counts = np.bincount(np.asarray(part.labels, dtype=np.int64), minlength=self.way)
            if len(counts) != self.way or not np.all(counts == per_label):
                raise ContractError(f"{name} set does not hold exactly {per_label} examples per label")


def sample_episode(
    corpus: Corpus,
    split: str,
    spec: SplitSpec,
    way: int,
    shot: int,
    query: int,
    rng: np.random.Generator,
) -> Episode:
    """
    Draw ``way`` labels of ``split`` uniformly without replacement, then
    ``shot + query`` examples per label without replacement; the first
    ``shot`` go to the support set.
    """
    labels = np.asarray(sorted(spec.labels(split)), dtype=np.int64)
    if way < 1 or shot < 1 or query < 1:
        raise ContractError(f"episode sizes must be positive, got N={way} K={shot} Q={query}")
    if len(labels) < way:
        raise CapacityError(f"{split} split has {len(labels)} labels, {way}-way episodes need {way}", label=split)
    chosen = rng.choice(labels, size=way, replace=False)
    support_texts, support_labels, support_ids = [], [], []
    query_texts, query_labels, query_ids = [], [], []
    for local, label in enumerate(int(c) for c in chosen):
        pool = corpus.by_label[label]
        if len(pool) < shot + query:
            name = corpus.label_names[label]
            raise CapacityError(
                f"label '{name}' has {len(pool)} examples, need {shot + query}",
                label=name,
            )
        picked = rng.choice(np.asarray(pool, dtype=np.int64), size=shot + query, replace=False)
        for j, idx in enumerate(int(p) for p in picked):
            texts, labels_out, ids = (
                (support_texts, support_labels, support_ids) if j < shot else (query_texts, query_labels, query_ids)
            )
            texts.append(corpus.examples[idx].tokens)
            labels_out.append(local)
            ids.append(idx)
    return Episode(
        way=way,
        shot=shot,
        query_size=query,
        palette=tuple(int(c) for c in chosen),
        support=LabeledSet(tuple(support_texts), tuple(support_labels), tuple(support_ids)),
        query=LabeledSet(tuple(query_texts), tuple(query_labels), tuple(query_ids)),
    )


def default_query_size(corpus: Corpus, spec: SplitSpec, split: str, shot: int, query: Optional[int] = None) -> int:
    """Five times the shot unless given, capped at what every label of the split can supply."""
    counts = [len(corpus.by_label[label]) for label in spec.labels(split)]
    available = min(counts) if counts else 0
    wanted = query if query is not None else 5 * shot
    return max(1, min(wanted, available - shot))


class EpisodePool:
    """
    Episodes generated once for a split and drawn from during training or
    evaluation. Generation runs in shards of ``SHARD_SIZE`` episodes; shard s
    samples from ``worker_rng(seed, s)``, so the pool does not depend on how
    many workers produce it.
    """

    def __init__(self, split: str, episodes: Sequence[Episode], seed: int):
        self.logger = logging.getLogger(__name__)
        self.split = split
        self.episodes: tuple[Episode, ...] = tuple(episodes)
        self.seed = seed

    def __len__(self) -> int:
        return len(self.episodes)

    def __getitem__(self, index: int) -> Episode:
        return self.episodes[index]

    def __iter__(self):
        return iter(self.episodes)

    @classmethod
    def generate(
        cls,
        corpus: Corpus,
        spec: SplitSpec,
        split: str,
        count: int,
        way: int,
        shot: int,
        query: int,
        seed: int,
        workers: int = 1,
    ) -> "EpisodePool":
        shards = [(s, min(SHARD_SIZE, count - s * SHARD_SIZE)) for s in range((count + SHARD_SIZE - 1) // SHARD_SIZE)]

        def make_shard(shard: tuple[int, int]) -> list[Episode]:
            index, size = shard
            rng = worker_rng(seed, index)
            return [sample_episode(corpus, split, spec, way, shot, query, rng) for _ in range(size)]

        if workers > 1 and len(shards) > 1:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                produced = list(executor.map(make_shard, shards))
        else:
            produced = [make_shard(shard) for shard in shards]
        episodes = [episode for shard in produced for episode in shard]
        logger.info(f"Generated {len(episodes)} {split} episodes ({way}-way {shot}-shot, {query} query)")
        return cls(split, episodes, seed)

    def draw(self, count: int, rng: np.random.Generator) -> list[Episode]:
        """``count`` episodes without replacement (with replacement past the pool size)."""
        replace = count > len(self.episodes)
        picks = rng.choice(len(self.episodes), size=count, replace=replace)
        return [self.episodes[int(i)] for i in picks]

    def head(self, count: Optional[int]) -> list[Episode]:
        return list(self.episodes if count is None else self.episodes[:count])
