import json

import numpy as np
import pytest

from meta_prompting.episodes import (
    Corpus,
    EpisodePool,
    Example,
    GeneratorSpec,
    SplitSpec,
    SyntheticGenerator,
    VocabPolicy,
    default_query_size,
    load_jsonl,
    make_splits,
    sample_episode,
    write_jsonl,
)
from meta_prompting.models.exceptions import CapacityError, ContractError, CorpusParseError
from meta_prompting.prompt_model import Verbalizer, Vocab

SMALL = GeneratorSpec(num_labels=8, examples_per_label=12, background_words=10, topic_words=3, min_length=4, max_length=6)


@pytest.fixture
def corpus():
    return SyntheticGenerator(SMALL).generate(seed=3)


@pytest.fixture
def splits(corpus):
    return make_splits(corpus, (0.5, 0.25, 0.25), seed=0, min_way=2)


def test_episode_sizes_and_disjointness(corpus, splits, rng):
    episode = sample_episode(corpus, "train", splits, way=4, shot=1, query=5, rng=rng)
    assert len(episode.support) == 4
    assert len(episode.query) == 20
    episode.validate()
    assert set(episode.palette) <= set(splits.train)
    assert not set(episode.support.ids) & set(episode.query.ids)
    for idx, local in zip(episode.support.ids + episode.query.ids, episode.support.labels + episode.query.labels):
        assert corpus.examples[idx].label == episode.global_label(local)


def test_one_way_one_shot_uses_distinct_instances(corpus, splits, rng):
    episode = sample_episode(corpus, "test", splits, way=1, shot=1, query=1, rng=rng)
    assert episode.support.ids != episode.query.ids
    assert episode.support.labels == episode.query.labels == (0,)


def test_sampling_is_deterministic_in_the_seed(corpus, splits):
    a = sample_episode(corpus, "train", splits, 3, 2, 3, np.random.default_rng(9))
    b = sample_episode(corpus, "train", splits, 3, 2, 3, np.random.default_rng(9))
    assert a == b


def test_capacity_errors_name_the_shortfall(corpus, splits, rng):
    with pytest.raises(CapacityError):
        sample_episode(corpus, "val", splits, way=5, shot=1, query=1, rng=rng)
    with pytest.raises(CapacityError) as e:
        sample_episode(corpus, "train", splits, way=2, shot=6, query=7, rng=rng)
    assert e.value.label.startswith("label")


def test_default_query_size_is_capped(corpus, splits):
    assert default_query_size(corpus, splits, "train", shot=1) == 5
    assert default_query_size(corpus, splits, "train", shot=5) == 7
    assert default_query_size(corpus, splits, "train", shot=1, query=3) == 3


def test_splits_are_disjoint_and_seeded(corpus):
    a = make_splits(corpus, seed=4, min_way=2)
    b = make_splits(corpus, seed=4, min_way=2)
    assert a == b
    assert len(a.train) + len(a.val) + len(a.test) == corpus.num_labels
    assert not (set(a.train) & set(a.val)) and not (set(a.val) & set(a.test))


def test_forty_one_labels_support_five_way_splits():
    vocab = Vocab([f"l{i}" for i in range(41)])
    corpus = Corpus(vocab, [Example((5,), i) for i in range(41)], [f"l{i}" for i in range(41)])
    spec = make_splits(corpus, seed=0, min_way=5)
    assert min(len(spec.train), len(spec.val), len(spec.test)) >= 5


def test_too_few_labels_for_three_splits(corpus):
    with pytest.raises(CapacityError):
        make_splits(corpus, min_way=3)


def test_explicit_splits_by_name_and_overlap_rejected(corpus):
    spec = make_splits(corpus, explicit=[["label00", "label01"], ["label02"], [3, 4]])
    assert spec.train == (0, 1) and spec.val == (2,) and spec.test == (3, 4)
    with pytest.raises(ContractError):
        make_splits(corpus, explicit=[["label00"], ["label00"], ["label01"]])
    with pytest.raises(ContractError):
        SplitSpec((0, 1), (1,), ())


@pytest.mark.slow
def test_test_episodes_never_draw_a_train_label(corpus, splits):
    rng = np.random.default_rng(0)
    train = set(splits.train)
    for _ in range(10_000):
        episode = sample_episode(corpus, "test", splits, way=2, shot=1, query=1, rng=rng)
        assert not set(episode.palette) & train
        assert set(episode.palette) <= set(splits.test)


@pytest.mark.slow
def test_label_pairs_are_drawn_uniformly(corpus):
    splits = make_splits(corpus, explicit=[[0, 1, 2, 3], [4, 5], [6, 7]])
    rng = np.random.default_rng(0)
    draws = 40_000
    counts: dict = {}
    for _ in range(draws):
        pair = frozenset(sample_episode(corpus, "train", splits, way=2, shot=1, query=1, rng=rng).palette)
        counts[pair] = counts.get(pair, 0) + 1
    assert len(counts) == 6
    for count in counts.values():
        assert abs(count / draws - 1 / 6) < 0.01


def test_pool_does_not_depend_on_worker_count(corpus, splits):
    one = EpisodePool.generate(corpus, splits, "train", 230, 2, 1, 2, seed=5, workers=1)
    many = EpisodePool.generate(corpus, splits, "train", 230, 2, 1, 2, seed=5, workers=3)
    assert len(one) == 230
    assert one.episodes == many.episodes
    assert one.head(3) == list(one.episodes[:3])


def test_pool_draws(corpus, splits, rng):
    pool = EpisodePool.generate(corpus, splits, "train", 10, 2, 1, 2, seed=1)
    drawn = pool.draw(4, rng)
    assert len({id(e) for e in drawn}) == 4
    assert len(pool.draw(25, rng)) == 25


def test_generator_is_deterministic():
    a = SyntheticGenerator(SMALL).generate(seed=11)
    b = SyntheticGenerator(SMALL).generate(seed=11)
    assert a.examples == b.examples
    assert a.label_counts() == {label: 12 for label in range(8)}


def test_disjoint_topics_are_nearly_separable():
    spec = GeneratorSpec(num_labels=10, examples_per_label=30, overlap=0.0)
    generator = SyntheticGenerator(spec)
    assert generator.bayes_accuracy(generator.generate(seed=0)) >= 0.99


def test_fully_shared_topics_are_uninformative():
    spec = GeneratorSpec(num_labels=4, examples_per_label=20, overlap=1.0)
    generator = SyntheticGenerator(spec)
    assert generator.bayes_accuracy(generator.generate(seed=0)) == pytest.approx(0.25)


def test_degenerate_generator_spec():
    with pytest.raises(ContractError):
        SyntheticGenerator(GeneratorSpec(topic_words=0))


def test_label_names_are_answer_words(corpus):
    verbalizer = Verbalizer.from_corpus(corpus)
    assert len(verbalizer) == corpus.num_labels
    assert verbalizer.answers[3] == (corpus.vocab.id_of("label03"),)


def test_jsonl_loads_and_merges_labels(tmp_path):
    path = tmp_path / "tiny.jsonl"
    path.write_text(
        '{"text": "Rates rise again", "label": "economy"}\n'
        "\n"
        '{"text": "team wins", "label": "sports"}\n'
        '{"text": "rates fall", "label": "economy"}\n',
        encoding="utf-8",
    )
    corpus = load_jsonl(path)
    assert len(corpus) == 3
    assert corpus.label_names == ("economy", "sports")
    assert [e.label for e in corpus.examples] == [0, 1, 0]
    assert "economy" in corpus.vocab and "rates" in corpus.vocab
    assert corpus.text_of(0) == "rates rise again"


def test_jsonl_vocab_policy(tmp_path):
    path = tmp_path / "tiny.jsonl"
    path.write_text('{"text": "a a b", "label": "x"}\n{"text": "a c", "label": "y"}\n', encoding="utf-8")
    corpus = load_jsonl(path, VocabPolicy(min_freq=2))
    assert "a" in corpus.vocab and "b" not in corpus.vocab
    assert corpus.examples[0].tokens[-1] == corpus.vocab.unk_id


@pytest.mark.parametrize(
    "line, number",
    [
        ("not json", 2),
        ('["text", "label"]', 2),
        ('{"text": "", "label": "x"}', 2),
        ('{"text": "words", "label": 3}', 2),
    ],
)
def test_malformed_lines_report_their_number(tmp_path, line, number):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"text": "fine", "label": "x"}\n' + line + "\n", encoding="utf-8")
    with pytest.raises(CorpusParseError) as e:
        load_jsonl(path)
    assert e.value.line_number == number


def test_undecodable_bytes_report_their_line(tmp_path):
    path = tmp_path / "latin.jsonl"
    path.write_bytes(b'{"text": "a b", "label": "x"}\n{"text": "\xff\xfe", "label": "y"}\n')
    with pytest.raises(CorpusParseError) as e:
        load_jsonl(path)
    assert e.value.line_number == 2


def test_missing_corpus_file_is_a_contract_error(tmp_path):
    with pytest.raises(ContractError, match="absent.jsonl"):
        load_jsonl(tmp_path / "absent.jsonl")


def test_empty_jsonl_is_rejected(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("\n", encoding="utf-8")
    with pytest.raises(ContractError):
        load_jsonl(path)


def test_written_corpus_loads_back(corpus, tmp_path):
    path = tmp_path / "out" / "corpus.jsonl"
    write_jsonl(corpus, path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == len(corpus)
    assert json.loads(lines[0])["label"] == corpus.label_names[corpus.examples[0].label]
    loaded = load_jsonl(path)
    assert loaded.records() == corpus.records()
