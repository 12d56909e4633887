"""
Everything a run needs that does not depend on the meta-learning algorithm:
corpus, label splits, vocabulary, verbalizer, the prompt model with its
pretrained backbone, and the episode pools. An Experiment is built once per
seed and shared by every run that has to be paired with another.
"""

import logging
from dataclasses import replace
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from meta_prompting.episodes import (
    SPLIT_NAMES,
    Corpus,
    Episode,
    EpisodePool,
    GeneratorSpec,
    SyntheticGenerator,
    VocabPolicy,
    default_query_size,
    load_jsonl,
    make_splits,
)
from meta_prompting.lib.configuration.run_config import RunConfig
from meta_prompting.meta_opt.tasks import PromptTask
from meta_prompting.models.exceptions import ConfigError, ContractError
from meta_prompting.params import ParamSet
from meta_prompting.prompt_model import (
    PromptModel,
    PromptTemplate,
    Verbalizer,
    anchor_words,
    format_template,
    parse_template,
    perturb_template,
)
from meta_prompting.prompt_model.pretraining import pretrain_backbone
from meta_prompting.utils import derive_seed

logger = logging.getLogger(__name__)


def build_corpus(config: RunConfig) -> tuple[Corpus, Optional[SyntheticGenerator]]:
    """The run's corpus, and its generator when it is synthetic."""
    corpus_cfg = config.corpus
    if corpus_cfg.source == "jsonl":
        policy = VocabPolicy(corpus_cfg.max_vocab, corpus_cfg.min_freq, corpus_cfg.lowercase)
        try:
            return load_jsonl(corpus_cfg.path, policy), None
        except ContractError as e:
            raise ConfigError(str(e), key_path="corpus.path") from e
    generator = SyntheticGenerator(GeneratorSpec.from_config(corpus_cfg.generator))
    return generator.generate(corpus_cfg.generator.seed), generator


class Experiment:
    def __init__(self, config: RunConfig, templates: Sequence[str] = ()):
        self.logger = logging.getLogger(__name__)
        self.logger.info(f"Initializing Experiment (seed {config.run.seed})")
        self.config = config
        self.seed = config.run.seed
        self.template_texts: list[str] = list(dict.fromkeys([config.model.template, *templates]))

        self.corpus, self.generator = build_corpus(config)
        split = config.split
        explicit = None
        if split.train_labels is not None:
            explicit = (split.train_labels, split.val_labels, split.test_labels)
        self.splits = make_splits(
            self.corpus,
            (split.train_fraction, split.val_fraction, split.test_fraction),
            split.seed,
            min_way=config.task.way,
            explicit=explicit,
        )

        self.vocab = self.corpus.vocab.extend(w for text in self.template_texts for w in anchor_words(text))
        self.verbalizer = Verbalizer.from_corpus(self.corpus, self.vocab)
        self._templates: dict[str, PromptTemplate] = {}
        num_soft = max(parse_template(text, self.vocab).num_soft for text in self.template_texts)
        model_cfg = config.model
        self.model = PromptModel.build(
            self.vocab,
            num_soft,
            embed_dim=model_cfg.embed_dim,
            hidden_dim=model_cfg.hidden_dim,
            depth=model_cfg.depth,
            encoder_hidden=model_cfg.encoder_hidden,
            max_seq_len=model_cfg.max_seq_len,
            seed=derive_seed(model_cfg.init_seed, self.seed, "backbone"),
        )
        self.query_size = min(
            default_query_size(self.corpus, self.splits, name, config.task.shot, config.task.query)
            for name in SPLIT_NAMES
        )
        self._pools: dict[str, EpisodePool] = {}

    @property
    def workers(self) -> int:
        return self.config.run.workers

    def template(self, text: Optional[str] = None) -> PromptTemplate:
        """Parsed template (the run's own one by default)."""
        text = self.config.model.template if text is None else text
        if text not in self._templates:
            template = parse_template(text, self.vocab)
            if template.num_soft > self.model.encoder.num_soft:
                raise ContractError(
                    f"template '{text}' needs {template.num_soft} soft tokens, "
                    f"the encoder provides {self.model.encoder.num_soft}"
                )
            self._templates[text] = template
        return self._templates[text]

    def task(self, episode: Episode, template: Optional[str] = None) -> PromptTask:
        return PromptTask(self.model, self.template(template), self.verbalizer, episode)

    @cached_property
    def base_params(self) -> ParamSet:
        """Random prompt partition on top of the pretrained backbone; the random-init starting point."""
        model_cfg = self.config.model
        rng = np.random.default_rng(derive_seed(self.seed, "prompt-init"))
        params = self.model.init_params(rng, freeze_backbone=model_cfg.freeze_backbone)
        train_labels = set(self.splits.train)
        examples = [e for e in self.corpus.examples if e.label in train_labels]
        return pretrain_backbone(
            self.model,
            params,
            [e.tokens for e in examples],
            [self.verbalizer.answers[e.label][0] for e in examples],
            steps=model_cfg.pretrain_steps,
            lr=model_cfg.pretrain_lr,
            batch_size=model_cfg.pretrain_batch_size,
            rng=np.random.default_rng(derive_seed(self.seed, "pretrain-backbone")),
        )

    def random_init(self) -> ParamSet:
        return self.base_params

    def _episode_count(self, split: str) -> int:
        if split == "train":
            return self.config.train.train_episodes
        if split == "val":
            return self.config.train.val_episodes
        return self.config.test.test_episodes

    def pool(self, split: str) -> EpisodePool:
        """Episodes of ``split``, generated on first use from their own seeded stream."""
        if split not in self._pools:
            task = self.config.task
            self._pools[split] = EpisodePool.generate(
                self.corpus,
                self.splits,
                split,
                self._episode_count(split),
                task.way,
                task.shot,
                self.query_size,
                seed=derive_seed(self.seed, "episodes", split),
                workers=self.workers,
            )
        return self._pools[split]

    def perturbed_templates(self, count: int, rate: float, seed: int) -> list[str]:
        """``count`` variants of the run's template with anchor words swapped for random vocabulary words."""
        rng = np.random.default_rng(seed)
        base = self.template()
        return [format_template(perturb_template(base, self.vocab, rng, rate), self.vocab) for _ in range(count)]

    def transfer_pool(self, overlap: float, seed: int) -> EpisodePool:
        """
        Test episodes from a shifted synthetic distribution: the same
        generator with another topic overlap and corpus seed, over the same
        test labels.
        """
        if self.generator is None:
            raise ContractError("distribution transfer needs a synthetic corpus")
        spec = replace(self.generator.spec, overlap=overlap)
        shifted = SyntheticGenerator(spec).generate(seed)
        if shifted.vocab != self.corpus.vocab:
            raise ContractError("shifted generator does not share the source vocabulary")
        task = self.config.task
        query = min(self.query_size, default_query_size(shifted, self.splits, "test", task.shot, task.query))
        return EpisodePool.generate(
            shifted,
            self.splits,
            "test",
            self.config.test.test_episodes,
            task.way,
            task.shot,
            query,
            seed=derive_seed(self.seed, "episodes", "transfer", seed),
            workers=self.workers,
        )
