"""
Command-line entry point: ``meta-prompting <subcommand> [flags]``.

Every subcommand resolves a RunConfig (flags > environment > file > defaults).
Those that write results hold the lock on ``run.out_dir`` and leave a
``config.resolved`` snapshot there.
"""

import argparse
import logging
import os
import sys
from typing import Any, Callable, Optional, Sequence

from meta_prompting.__version__ import __description__, __version__
from meta_prompting.autodiff import set_check_finite
from meta_prompting.episodes import write_jsonl
from meta_prompting.gradcheck import run_gradcheck
from meta_prompting.harness import Experiment, build_corpus, meta_test, meta_train, pretrain_init, run_experiment_suite
from meta_prompting.harness.reporting import write_run_metrics, write_suite_report
from meta_prompting.harness.training import PRETRAIN_CHECKPOINT, source_loss
from meta_prompting.lib.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from meta_prompting.lib.configuration.run_config import RunConfig
from meta_prompting.lib.configuration.run_config_file import RunConfigFile
from meta_prompting.lib.run_directory import RunDirectory
from meta_prompting.models.exceptions import ContractError, MetaPromptingException
from meta_prompting.params import ParamSet
from meta_prompting.utils import configure_logging, get_full_class_name

logger = logging.getLogger(__name__)

CORPUS_FILE = "corpus.jsonl"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")

# flag destination -> dotted config key
FLAG_OVERRIDES = {
    "seed": "run.seed",
    "out": "run.out_dir",
    "algo": "meta.algorithm",
    "inner_steps": "inner.steps",
    "init": "run.init",
    "workers": "run.workers",
}


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="run definition (TOML); defaults when omitted")
    common.add_argument("--seed", type=int, help="overrides run.seed")
    common.add_argument("--out", metavar="DIR", help="overrides run.out_dir")
    common.add_argument("--algo", choices=("maml", "fomaml", "reptile", "mslb"), help="overrides meta.algorithm")
    common.add_argument("--inner-steps", dest="inner_steps", type=int, help="overrides inner.steps")
    common.add_argument("--init", choices=("random", "pretrain", "meta"), help="overrides run.init")
    common.add_argument("--resume", metavar="CKPT", help="checkpoint to resume from (meta-train) or to test (meta-test)")
    common.add_argument("--workers", type=int, help="overrides run.workers")
    common.add_argument("--log-level", dest="log_level", choices=LOG_LEVELS, default="INFO")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meta-prompting", description=__description__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="<subcommand>", required=True)
    common = _common_flags()

    gen = sub.add_parser("gen-data", parents=[common], help="write the synthetic corpus as JSONL")
    gen.add_argument("--output", metavar="PATH", help=f"default: <out>/{CORPUS_FILE}")
    sub.add_parser("pretrain", parents=[common], help="supervised prompt pretraining (the pretrain init)")
    sub.add_parser("meta-train", parents=[common], help="meta-train the prompt initialization")
    sub.add_parser("meta-test", parents=[common], help="adapt and score an initialization on test episodes")
    sub.add_parser("suite", parents=[common], help="run the comparison suite")
    check = sub.add_parser("gradcheck", parents=[common], help="run the gradient oracle suites")
    check.add_argument("--instances", type=int, default=100, help="randomized instances per check (default 100)")
    return parser


def overrides_from(args: argparse.Namespace) -> dict[str, Any]:
    return {key: getattr(args, dest) for dest, key in FLAG_OVERRIDES.items() if getattr(args, dest, None) is not None}


def gen_data(args: argparse.Namespace, config: RunConfig) -> int:
    corpus, generator = build_corpus(config)
    if generator is None:
        raise ContractError("gen-data needs a synthetic corpus ([corpus] source = \"synthetic\")")
    with RunDirectory(config.run.out_dir) as run_dir:
        RunConfigFile.write_resolved(config, run_dir.path())
        write_jsonl(corpus, args.output or run_dir.path(CORPUS_FILE))
    return 0


def pretrain(args: argparse.Namespace, config: RunConfig) -> int:
    experiment = Experiment(config)
    with RunDirectory(config.run.out_dir) as run_dir:
        RunConfigFile.write_resolved(config, run_dir.path())
        params = pretrain_init(config, experiment)
        loss = source_loss(params, experiment)
        save_checkpoint(
            Checkpoint(params, experiment.model.spec_hash(), extra={"init": "pretrain", "source_loss": loss}),
            run_dir.path(PRETRAIN_CHECKPOINT),
        )
        logger.info(f"Pretrained initialization written, source loss {loss:.4f}")
    return 0


def train(args: argparse.Namespace, config: RunConfig) -> int:
    experiment = Experiment(config)
    with RunDirectory(config.run.out_dir) as run_dir:
        RunConfigFile.write_resolved(config, run_dir.path())
        result = meta_train(config, experiment, checkpoint_dir=run_dir.path(), resume=args.resume)
        write_run_metrics(result.metrics, run_dir.path(), {"stopped_early": result.stopped_early})
    return 0


def initialization(args: argparse.Namespace, config: RunConfig, experiment: Experiment) -> ParamSet:
    """The parameters to test: a checkpoint when ``--resume`` is given, else built by ``run.init``."""
    if args.resume is not None:
        return load_checkpoint(args.resume, experiment.model.spec_hash()).params
    if config.run.init == "random":
        return experiment.random_init()
    if config.run.init == "pretrain":
        return pretrain_init(config, experiment)
    return meta_train(config, experiment).params


def evaluate(args: argparse.Namespace, config: RunConfig) -> int:
    experiment = Experiment(config)
    with RunDirectory(config.run.out_dir) as run_dir:
        RunConfigFile.write_resolved(config, run_dir.path())
        metrics = meta_test(initialization(args, config, experiment), config, experiment)
        source = os.path.basename(args.resume) if args.resume is not None else config.run.init
        write_run_metrics(metrics, run_dir.path(), {"init": source})
    return 0


def suite(args: argparse.Namespace, config: RunConfig) -> int:
    with RunDirectory(config.run.out_dir) as run_dir:
        RunConfigFile.write_resolved(config, run_dir.path())
        report = run_experiment_suite(config)
        write_suite_report(report, run_dir.path())
    return 0


def gradcheck(args: argparse.Namespace, config: RunConfig) -> int:
    if args.instances < 1:
        raise ContractError("--instances must be positive")
    report = run_gradcheck(args.instances, seed=config.run.seed)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


COMMANDS: dict[str, Callable[[argparse.Namespace, RunConfig], int]] = {
    "gen-data": gen_data,
    "pretrain": pretrain,
    "meta-train": train,
    "meta-test": evaluate,
    "suite": suite,
    "gradcheck": gradcheck,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None and not os.path.isfile(args.config):
        parser.error(f"config file not found: {args.config}")
    configure_logging(args.log_level)
    try:
        config = RunConfigFile(args.config).resolve(overrides_from(args))
        set_check_finite(config.run.check_finite)
        return COMMANDS[args.command](args, config)
    except MetaPromptingException as e:
        logger.error(f"{get_full_class_name(e)}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
