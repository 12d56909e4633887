from meta_prompting.harness.evaluation import adaptation_config, check_pairing, meta_test, paired_difference
from meta_prompting.harness.experiment import Experiment, build_corpus
from meta_prompting.harness.suite import SuiteReport, SuiteRun, check_paired_configs, run_experiment_suite
from meta_prompting.harness.training import TrainingResult, meta_train, pretrain_init, source_loss

__all__ = [
    "Experiment",
    "SuiteReport",
    "SuiteRun",
    "TrainingResult",
    "adaptation_config",
    "build_corpus",
    "check_paired_configs",
    "check_pairing",
    "meta_test",
    "meta_train",
    "paired_difference",
    "pretrain_init",
    "run_experiment_suite",
    "source_loss",
]
