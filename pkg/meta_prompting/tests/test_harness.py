import csv
import json
import os

import numpy as np
import pytest
import toml

from meta_prompting import cli
from meta_prompting.harness import (
    Experiment,
    check_paired_configs,
    check_pairing,
    meta_test,
    meta_train,
    paired_difference,
    pretrain_init,
    run_experiment_suite,
    source_loss,
)
from meta_prompting.harness.reporting import (
    CURVE,
    SUMMARY,
    TEST_METRICS,
    TRAIN_METRICS,
    write_run_metrics,
    write_suite_report,
)
from meta_prompting.harness.training import BEST_CHECKPOINT, LAST_CHECKPOINT
from meta_prompting.lib.configuration.run_config import RunConfig, nest_overrides
from meta_prompting.models.exceptions import PairingError
from meta_prompting.params import Partition

TINY_TEMPLATE = "[CLS] {x} {soft:2} [MASK] [SEP]"

TINY = {
    "corpus.generator.num_labels": 12,
    "corpus.generator.examples_per_label": 6,
    "corpus.generator.background_words": 6,
    "corpus.generator.topic_words": 2,
    "corpus.generator.min_length": 3,
    "corpus.generator.max_length": 5,
    "task.way": 2,
    "task.shot": 1,
    "task.query": 2,
    "model.template": TINY_TEMPLATE,
    "model.embed_dim": 4,
    "model.hidden_dim": 6,
    "model.encoder_hidden": 2,
    "model.max_seq_len": 16,
    "model.pretrain_steps": 2,
    "model.pretrain_batch_size": 4,
    "meta.meta_batch_size": 2,
    "train.train_episodes": 6,
    "train.val_episodes": 2,
    "train.episodes_per_epoch": 2,
    "train.max_epochs": 2,
    "train.pretrain_init_steps": 2,
    "train.pretrain_init_batch_size": 4,
    "test.test_episodes": 3,
    "test.adaptation_epochs": 1,
    "test.batch_size": 4,
    "run.seeds": [0],
    "suite.templates": [TINY_TEMPLATE, "[CLS] {soft:1} {x} [MASK] [SEP]"],
    "suite.init_modes": ["random", "meta"],
    "suite.algorithms": ["maml", "reptile"],
    "suite.settings": [(2, 1)],
}


def tiny_config(**overrides) -> RunConfig:
    return RunConfig.from_layers(overrides={**TINY, **{k.replace("__", "."): v for k, v in overrides.items()}})


@pytest.fixture
def config():
    return tiny_config()


@pytest.fixture
def experiment(config):
    return Experiment(config)


def test_experiment_is_deterministic_in_the_seed(config, experiment):
    again = Experiment(config)
    assert again.pool("train").episodes == experiment.pool("train").episodes
    assert again.random_init().equals(experiment.random_init())
    assert experiment.query_size == 2
    other = Experiment(config.with_overrides({"run.seed": 1}))
    assert other.pool("test").episodes != experiment.pool("test").episodes


def test_pretrain_init_tunes_the_prompt_only(config, experiment):
    base = experiment.random_init()
    tuned = pretrain_init(config, experiment)
    for name in base.names_in([Partition.BACKBONE]):
        assert np.array_equal(tuned[name].data, base[name].data)
    assert not np.array_equal(tuned.flat(), base.flat())
    assert np.isfinite(source_loss(tuned, experiment))
    untouched = pretrain_init(config.with_overrides({"train.pretrain_init_steps": 0}), experiment)
    assert untouched.equals(base)


def test_meta_training_history(config, experiment):
    result = meta_train(config, experiment)
    assert len(result.metrics.epochs) == 2
    assert result.metrics.epochs[0].improved
    assert result.optimizer_state.step == 2
    experiment.model.check_params(result.params)


def test_training_stops_when_validation_stalls():
    # a frozen outer optimizer leaves validation accuracy flat
    config = tiny_config(
        meta__optimizer="sgd", meta__lr_prompt=0.0, meta__lr_backbone=0.0, train__max_epochs=5, train__patience=1
    )
    result = meta_train(config, Experiment(config))
    assert result.stopped_early
    assert len(result.metrics.epochs) == 2
    assert result.metrics.best_epoch == 0


def test_resumed_training_matches_an_uninterrupted_run(config, tmp_path):
    straight = meta_train(config, Experiment(config), checkpoint_dir=str(tmp_path / "a"))
    short = config.with_overrides({"train.max_epochs": 1})
    meta_train(short, Experiment(short), checkpoint_dir=str(tmp_path / "b"))
    assert (tmp_path / "b" / LAST_CHECKPOINT).exists() and (tmp_path / "b" / BEST_CHECKPOINT).exists()
    resumed = meta_train(config, Experiment(config), resume=str(tmp_path / "b" / LAST_CHECKPOINT))
    assert resumed.metrics.epochs == straight.metrics.epochs
    assert resumed.params.equals(straight.params)
    assert resumed.optimizer_state.equals(straight.optimizer_state)


def test_meta_test_reports_episodes_and_curve(config, experiment):
    metrics = meta_test(experiment.random_init(), config, experiment)
    assert len(metrics.test_episodes) == 3
    assert metrics.curve.shape == (2, 2)
    assert 0.0 <= metrics.test_accuracy <= 1.0
    raw = meta_test(experiment.random_init(), config, experiment, epochs=0)
    assert raw.curve.shape == (1, 2)
    np.testing.assert_allclose(raw.curve[0], metrics.curve[0])


def test_runs_on_the_same_stream_are_paired(config, experiment):
    random = meta_test(experiment.random_init(), config, experiment)
    pretrained = meta_test(pretrain_init(config, experiment), config, experiment)
    check_pairing(random, pretrained)
    assert paired_difference(random, random) == 0.0
    other_config = config.with_overrides({"run.seed": 5})
    other = meta_test(Experiment(other_config).random_init(), other_config)
    with pytest.raises(PairingError):
        paired_difference(random, other)


def test_paired_configs_must_share_the_episode_stream(config):
    check_paired_configs(config, config.with_overrides({"meta.algorithm": "reptile"}))
    with pytest.raises(PairingError):
        check_paired_configs(config, config.with_overrides({"run.seed": 3}))
    with pytest.raises(PairingError):
        check_paired_configs(config, config.with_overrides({"task.shot": 2}))


def test_run_metric_files(config, experiment, tmp_path):
    trained = meta_train(config, experiment)
    metrics = trained.metrics.with_test(meta_test(trained.params, config, experiment))
    written = write_run_metrics(metrics, str(tmp_path), {"init": "meta"})
    assert {os.path.basename(p) for p in written} >= {TRAIN_METRICS, TEST_METRICS, SUMMARY}
    with open(tmp_path / TEST_METRICS, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 4 and rows[-1]["episode"] == "mean"
    summary = json.loads((tmp_path / SUMMARY).read_text(encoding="utf-8"))
    assert summary["epochs_run"] == 2 and summary["init"] == "meta"
    assert summary["test_accuracy"] == pytest.approx(metrics.test_accuracy)


def test_tiny_suite(config, tmp_path):
    seen = []
    report = run_experiment_suite(config, on_run=seen.append)
    # two templates x two inits, then two algorithms
    assert len(report.runs) == 6 == len(seen)
    assert {r.study for r in report.runs} == {"init", "template", "algorithm"}
    table = report.init_table()
    assert set(table) == {"random", "meta"}
    mean, std = table["meta"]["2-way 1-shot"]
    assert 0.0 <= mean <= 1.0 and std == 0.0
    assert report.template_std_table()["random"]["2-way 1-shot"] is not None
    paths = write_suite_report(report, str(tmp_path))
    assert all(os.path.exists(p) for p in paths)
    assert "Initialization" in (tmp_path / "suite_report.md").read_text(encoding="utf-8")


def test_reruns_write_identical_files(tmp_path):
    config = tmp_path / "tiny.toml"
    config.write_text(
        toml.dumps(nest_overrides({k: v for k, v in TINY.items() if not k.startswith("suite.")})), encoding="utf-8"
    )

    def run(*argv):
        assert cli.main([*argv, "--config", str(config), "--log-level", "WARNING"]) == 0

    run("meta-train", "--out", str(tmp_path / "train_a"))
    run("meta-train", "--out", str(tmp_path / "train_b"))
    for name in (TRAIN_METRICS, SUMMARY):
        assert (tmp_path / "train_a" / name).read_bytes() == (tmp_path / "train_b" / name).read_bytes()

    checkpoint = str(tmp_path / "train_a" / LAST_CHECKPOINT)
    run("meta-test", "--resume", checkpoint, "--out", str(tmp_path / "test_a"))
    run("meta-test", "--resume", checkpoint, "--out", str(tmp_path / "test_b"))
    for name in (TEST_METRICS, CURVE, SUMMARY):
        assert (tmp_path / "test_a" / name).read_bytes() == (tmp_path / "test_b" / name).read_bytes()
