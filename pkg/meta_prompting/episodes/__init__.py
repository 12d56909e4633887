from meta_prompting.episodes.corpus import Corpus, Example
from meta_prompting.episodes.jsonl import VocabPolicy, load_jsonl, write_jsonl
from meta_prompting.episodes.sampler import (
    Episode,
    EpisodePool,
    LabeledSet,
    default_query_size,
    sample_episode,
)
from meta_prompting.episodes.splits import SPLIT_NAMES, SplitSpec, make_splits
from meta_prompting.episodes.synthetic import GeneratorSpec, SyntheticGenerator

__all__ = [
    "Corpus",
    "Episode",
    "EpisodePool",
    "Example",
    "GeneratorSpec",
    "LabeledSet",
    "SPLIT_NAMES",
    "SplitSpec",
    "SyntheticGenerator",
    "VocabPolicy",
    "default_query_size",
    "load_jsonl",
    "make_splits",
    "sample_episode",
    "write_jsonl",
]
