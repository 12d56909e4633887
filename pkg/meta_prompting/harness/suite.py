"""
The comparison suite: initialization ablation, template robustness,
meta-algorithm comparison and, for synthetic corpora, distribution transfer.

For every N-way K-shot setting and seed one Experiment is built; every run
under it draws the same episode streams, so differences between runs come
from the manipulated factor only.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from tqdm import tqdm

from meta_prompting.harness.evaluation import check_pairing, meta_test
from meta_prompting.harness.experiment import Experiment
from meta_prompting.harness.training import meta_train, pretrain_init
from meta_prompting.lib.configuration.run_config import RunConfig
from meta_prompting.models.exceptions import ContractError, PairingError
from meta_prompting.models.run_metrics import RunMetrics
from meta_prompting.params import ParamSet
from meta_prompting.utils import derive_seed, progress_enabled

logger = logging.getLogger(__name__)

INIT_STUDY = "init"
TEMPLATE_STUDY = "template"
ALGORITHM_STUDY = "algorithm"
TRANSFER_STUDY = "transfer"
PAIRED_SECTIONS = ("corpus", "split", "task", "model", "test")


def setting_label(way: int, shot: int) -> str:
    return f"{way}-way {shot}-shot"


@dataclass
class SuiteRun:
    setting: str
    seed: int
    init: str
    algorithm: str
    template: str
    metrics: RunMetrics
    study: str = ""

    @property
    def accuracy(self) -> float:
        return self.metrics.test_accuracy

    def row(self) -> dict:
        return {
            "study": self.study,
            "setting": self.setting,
            "seed": self.seed,
            "init": self.init,
            "algorithm": self.algorithm,
            "template": self.template,
            "test_accuracy": self.metrics.test_accuracy,
            "test_loss": self.metrics.test_loss,
            "episodes": len(self.metrics.test_episodes),
        }


@dataclass
class SuiteReport:
    settings: list[str]
    templates: list[str]
    init_modes: list[str]
    algorithms: list[str]
    base_algorithm: str
    runs: list[SuiteRun] = field(default_factory=list)

    def _select(self, **conditions) -> list[SuiteRun]:
        return [r for r in self.runs if all(getattr(r, k) == v for k, v in conditions.items())]

    def _template_runs(self, init: str, setting: str, template: str) -> list[SuiteRun]:
        return [
            r
            for r in self.runs
            if r.study in (INIT_STUDY, TEMPLATE_STUDY) and (r.init, r.setting, r.template) == (init, setting, template)
        ]

    def _mean_std(self, runs: list[SuiteRun]) -> Optional[tuple[float, float]]:
        if not runs:
            return None
        accuracies = [r.accuracy for r in runs]
        return float(np.mean(accuracies)), float(np.std(accuracies))

    def init_table(self) -> dict[str, dict[str, Optional[tuple[float, float]]]]:
        """Init mode -> setting -> test accuracy mean and std over seeds, on the run's own template."""
        return {
            init: {s: self._mean_std(self._select(study=INIT_STUDY, init=init, setting=s)) for s in self.settings}
            for init in self.init_modes
        }

    def template_std_table(self) -> dict[str, dict[str, Optional[float]]]:
        """
        Init mode -> setting -> standard deviation across templates of the
        seed-averaged test accuracy.
        """
        table: dict[str, dict[str, Optional[float]]] = {}
        for init in self.init_modes:
            table[init] = {}
            for s in self.settings:
                means = [
                    np.mean([r.accuracy for r in runs])
                    for t in self.templates
                    if (runs := self._template_runs(init, s, t))
                ]
                table[init][s] = float(np.std(means)) if len(means) > 1 else None
        return table

    def algorithm_table(self) -> dict[str, dict[str, Optional[tuple[float, float]]]]:
        return {
            algorithm: {
                s: self._mean_std(self._select(study=ALGORITHM_STUDY, algorithm=algorithm, setting=s))
                for s in self.settings
            }
            for algorithm in self.algorithms
        }

    def transfer_table(self) -> dict[str, dict[str, Optional[tuple[float, float]]]]:
        runs = self._select(study=TRANSFER_STUDY)
        inits = list(dict.fromkeys(r.init for r in runs))
        return {
            init: {s: self._mean_std(self._select(study=TRANSFER_STUDY, init=init, setting=s)) for s in self.settings}
            for init in inits
        }

    def curves(self) -> dict[tuple[str, str], np.ndarray]:
        """(setting, init mode) -> adaptation curve averaged over seeds, on the run's own template."""
        out = {}
        for s in self.settings:
            for init in self.init_modes:
                runs = self._select(study=INIT_STUDY, init=init, setting=s)
                if runs:
                    out[(s, init)] = RunMetrics.aggregate([r.metrics for r in runs]).curve
        return out

    def to_dict(self) -> dict:
        def cells(table):
            return {
                row: {col: None if v is None else {"mean": v[0], "std": v[1]} for col, v in cols.items()}
                for row, cols in table.items()
            }

        return {
            "settings": self.settings,
            "templates": self.templates,
            "base_algorithm": self.base_algorithm,
            "init_ablation": cells(self.init_table()),
            "template_std": self.template_std_table(),
            "algorithms": cells(self.algorithm_table()),
            "transfer": cells(self.transfer_table()),
            "runs": [r.row() for r in self.runs],
        }


def check_paired_configs(left: RunConfig, right: RunConfig) -> None:
    """
    :raises PairingError: when two configs differ in anything that shapes the episode streams
    """
    if left.run.seed != right.run.seed:
        raise PairingError(f"paired runs use different seeds ({left.run.seed} vs {right.run.seed})")
    for section in PAIRED_SECTIONS:
        if getattr(left, section) != getattr(right, section):
            raise PairingError(f"paired runs differ in [{section}]")


class _SeedRuns:
    """Initializations trained once per (template, init mode, algorithm) under one Experiment."""

    def __init__(self, config: RunConfig, experiment: Experiment):
        self.config = config
        self.experiment = experiment
        self._params: dict[tuple[str, str, str], ParamSet] = {}
        self._configs: dict[str, RunConfig] = {}

    def config_for(self, algorithm: str) -> RunConfig:
        if algorithm not in self._configs:
            cfg = self.config.with_overrides({"meta.algorithm": algorithm})
            check_paired_configs(self.config, cfg)
            self._configs[algorithm] = cfg
        return self._configs[algorithm]

    def params(self, template: str, init: str, algorithm: str) -> ParamSet:
        key = (template, init, algorithm if init == "meta" else "")
        if key not in self._params:
            if init == "random":
                self._params[key] = self.experiment.random_init()
            elif init == "pretrain":
                self._params[key] = pretrain_init(self.config, self.experiment, template)
            elif init == "meta":
                self._params[key] = meta_train(self.config_for(algorithm), self.experiment, template=template).params
            else:
                raise ContractError(f"unknown init mode '{init}'")
        return self._params[key]


def run_experiment_suite(
    config: RunConfig,
    on_run: Optional[Callable[[SuiteRun], None]] = None,
) -> SuiteReport:
    """
    Run every study the ``[suite]`` section asks for over all settings and
    seeds; ``on_run`` sees each finished run.
    """
    suite = config.suite
    if not suite.templates:
        raise ContractError("the suite needs at least one template")
    settings = [setting_label(way, shot) for way, shot in suite.settings]
    base_algorithm = config.meta.algorithm
    report = SuiteReport(settings, list(suite.templates), list(suite.init_modes), list(suite.algorithms), base_algorithm)

    def record(run: SuiteRun) -> None:
        report.runs.append(run)
        logger.info(
            f"[{run.study}] {run.setting} seed {run.seed} init={run.init} algo={run.algorithm}: "
            f"accuracy {run.accuracy:.4f}"
        )
        if on_run is not None:
            on_run(run)

    # one perturbation stream for the whole suite, so every seed sees the same variants
    perturb_seed = derive_seed(config.run.seed, "perturb")
    jobs = [(way, shot, seed) for way, shot in suite.settings for seed in config.run.seeds]
    for way, shot, seed in tqdm(jobs, desc="suite", disable=not progress_enabled()):
        label = setting_label(way, shot)
        cfg = config.with_overrides(
            {"task.way": way, "task.shot": shot, "run.seed": seed, "model.template": suite.templates[0]}
        )
        experiment = Experiment(cfg, templates=suite.templates)
        templates = list(suite.templates)
        if suite.perturbed_templates:
            templates += experiment.perturbed_templates(suite.perturbed_templates, suite.perturb_rate, perturb_seed)
            report.templates = list(dict.fromkeys(report.templates + templates))
        seed_runs = _SeedRuns(cfg, experiment)
        paired: list[RunMetrics] = []

        def test(params: ParamSet, template: str, run_config: RunConfig = cfg, pool=None) -> RunMetrics:
            metrics = meta_test(params, run_config, experiment, template, pool=pool)
            if pool is None:
                if paired:
                    check_pairing(paired[0], metrics)
                paired.append(metrics)
            return metrics

        for template in templates:
            study = INIT_STUDY if template == templates[0] else TEMPLATE_STUDY
            for init in suite.init_modes:
                metrics = test(seed_runs.params(template, init, base_algorithm), template)
                record(SuiteRun(label, seed, init, base_algorithm, template, metrics, study))

        for algorithm in suite.algorithms:
            params = seed_runs.params(templates[0], "meta", algorithm)
            metrics = test(params, templates[0], seed_runs.config_for(algorithm))
            record(SuiteRun(label, seed, "meta", algorithm, templates[0], metrics, ALGORITHM_STUDY))

        if suite.transfer_overlap is not None:
            pool = experiment.transfer_pool(suite.transfer_overlap, suite.transfer_seed)
            shifted: list[RunMetrics] = []
            for init in ("random", "meta"):
                metrics = test(seed_runs.params(templates[0], init, base_algorithm), templates[0], pool=pool)
                if shifted:
                    check_pairing(shifted[0], metrics)
                shifted.append(metrics)
                record(SuiteRun(label, seed, init, base_algorithm, templates[0], metrics, TRANSFER_STUDY))
    return report
