"""
Synthetic topic-classification corpora.

Each label owns ``topic_words`` topic words. A text of label l draws every
token either from the topic distribution of l (probability ``topic_rate``) or
uniformly from the shared background words. The topic distribution of l puts
``1 - overlap`` of its mass uniformly on l's own topic words and ``overlap``
uniformly on the topic words of all labels, so overlap 0 gives disjoint
topics and overlap 1 makes every label look the same.
"""

import logging
from dataclasses import dataclass

import numpy as np

from meta_prompting.episodes.corpus import Corpus, Example
from meta_prompting.models.exceptions import ContractError
from meta_prompting.prompt_model.vocab import Vocab

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GeneratorSpec:
    num_labels: int = 24
    examples_per_label: int = 40
    background_words: int = 60
    topic_words: int = 6
    topic_rate: float = 0.6
    overlap: float = 0.5
    min_length: int = 8
    max_length: int = 12
    domain: str = "synthetic"

    @classmethod
    def from_config(cls, config) -> "GeneratorSpec":
        """From a ``[corpus.generator]`` config section (its seed is passed to ``generate``)."""
        return cls(
            num_labels=config.num_labels,
            examples_per_label=config.examples_per_label,
            background_words=config.background_words,
            topic_words=config.topic_words,
            topic_rate=config.topic_rate,
            overlap=config.overlap,
            min_length=config.min_length,
            max_length=config.max_length,
            domain=config.domain,
        )


def label_name(label: int) -> str:
    return f"label{label:02d}"


def topic_word(label: int, j: int) -> str:
    return f"t{label:02d}w{j}"


def background_word(j: int) -> str:
    return f"bg{j}"


class SyntheticGenerator:
    def __init__(self, spec: GeneratorSpec):
        self.logger = logging.getLogger(__name__)
        if spec.topic_words < 1:
            raise ContractError("a synthetic corpus needs at least one topic word per label")
        if spec.num_labels < 1 or spec.examples_per_label < 1:
            raise ContractError("a synthetic corpus needs labels and examples")
        if not 0.0 <= spec.overlap <= 1.0 or not 0.0 <= spec.topic_rate <= 1.0:
            raise ContractError("overlap and topic_rate must lie in [0, 1]")
        if spec.min_length < 1 or spec.max_length < spec.min_length:
            raise ContractError("text lengths must satisfy 1 <= min_length <= max_length")
        self.spec = spec
        self.label_names = [label_name(l) for l in range(spec.num_labels)]
        self.topic_words = [topic_word(l, j) for l in range(spec.num_labels) for j in range(spec.topic_words)]
        self.background = [background_word(j) for j in range(spec.background_words)]
        self.vocab = Vocab(self.label_names + self.topic_words + self.background)
        self._word_ids = np.asarray(
            [self.vocab.id_of(w) for w in self.topic_words + self.background], dtype=np.int64
        )
        self._distributions = np.stack([self._label_distribution(l) for l in range(spec.num_labels)])

    def _label_distribution(self, label: int) -> np.ndarray:
        """Distribution of label ``label`` over topic words followed by background words."""
        spec = self.spec
        n_topic = len(self.topic_words)
        topic = np.full(n_topic, spec.overlap / n_topic)
        own = slice(label * spec.topic_words, (label + 1) * spec.topic_words)
        topic[own] += (1.0 - spec.overlap) / spec.topic_words
        topic_rate = spec.topic_rate if self.background else 1.0
        if self.background:
            background = np.full(len(self.background), (1.0 - topic_rate) / len(self.background))
        else:
            background = np.zeros(0)
        return np.concatenate([topic_rate * topic, background])

    def distribution(self, label: int) -> dict[str, float]:
        words = self.topic_words + self.background
        return {w: float(p) for w, p in zip(words, self._distributions[label])}

    def generate(self, seed: int) -> Corpus:
        rng = np.random.default_rng(seed)
        spec = self.spec
        examples = []
        for label in range(spec.num_labels):
            for _ in range(spec.examples_per_label):
                length = int(rng.integers(spec.min_length, spec.max_length + 1))
                picks = rng.choice(len(self._word_ids), size=length, p=self._distributions[label])
                examples.append(Example(tuple(int(t) for t in self._word_ids[picks]), label))
        self.logger.info(
            f"Generated synthetic corpus: {spec.num_labels} labels x {spec.examples_per_label} examples, "
            f"overlap {spec.overlap}"
        )
        return Corpus(self.vocab, examples, self.label_names, domain=spec.domain)

    def _log_likelihoods(self, tokens) -> np.ndarray:
        position = {int(t): i for i, t in enumerate(self._word_ids)}
        with np.errstate(divide="ignore"):
            log_p = np.log(self._distributions)
        scores = np.zeros(self.spec.num_labels)
        for t in tokens:
            i = position.get(int(t))
            if i is not None:
                scores = scores + log_p[:, i]
        return scores

    def bayes_predict(self, tokens, labels=None) -> int:
        """
        Label with the highest unigram likelihood under the generator's own
        distributions (uniform prior), optionally among ``labels`` only.
        Ties go to the lowest label id.
        """
        scores = self._log_likelihoods(tokens)
        candidates = np.arange(self.spec.num_labels) if labels is None else np.asarray(sorted(labels))
        return int(candidates[int(np.argmax(scores[candidates]))])

    def bayes_accuracy(self, corpus: Corpus, labels=None) -> float:
        examples = corpus.examples if labels is None else corpus.examples_of(labels)
        if not examples:
            raise ContractError("no examples to score")
        hits = sum(self.bayes_predict(e.tokens, labels) == e.label for e in examples)
        return hits / len(examples)
