import logging
import threading
from typing import Optional

import numpy as np
from tqdm import tqdm

from meta_prompting.episodes import EpisodePool
from meta_prompting.harness.experiment import Experiment
from meta_prompting.lib.configuration.run_config import RunConfig
from meta_prompting.meta_opt import InnerLoopConfig, MetaTask, adapt, map_episodes
from meta_prompting.models.adaptation_trace import AdaptationTrace
from meta_prompting.models.exceptions import PairingError
from meta_prompting.models.run_metrics import EpisodeRecord, RunMetrics, episode_stream_id
from meta_prompting.params import Partition, ParamSet
from meta_prompting.utils import derive_seed, progress_enabled, worker_rng

logger = logging.getLogger(__name__)


def adaptation_config(config: RunConfig, support_size: int, epochs: Optional[int] = None) -> InnerLoopConfig:
    """
    Test-time adaptation: ``test.adaptation_epochs`` passes over the support
    set in minibatches of ``test.batch_size`` (one full batch when the support
    set is smaller).
    """
    return InnerLoopConfig.for_epochs(
        config.test.adaptation_epochs if epochs is None else epochs,
        support_size,
        config.test.lr if config.test.lr is not None else config.inner.lr,
        config.test.batch_size,
        tuple(Partition(p) for p in config.inner.partitions),
    )


def meta_test(
    params: ParamSet,
    config: RunConfig,
    experiment: Optional[Experiment] = None,
    template: Optional[str] = None,
    pool: Optional[EpisodePool] = None,
    epochs: Optional[int] = None,
) -> RunMetrics:
    """
    Adapt a copy of ``params`` on the support set of every test episode and
    score it on the query set. Reports per-episode results and the adaptation
    curve (query loss and accuracy after each inner step) averaged over
    episodes.

    :param pool: episodes to test on (default: the experiment's test pool)
    :param epochs: adaptation epochs, overriding ``test.adaptation_epochs`` (0 scores the raw init)
    """
    experiment = experiment or Experiment(config)
    experiment.model.check_params(params)
    episodes = (pool or experiment.pool("test")).head(config.test.test_episodes)
    tasks = [experiment.task(e, template) for e in episodes]
    base_seed = derive_seed(experiment.seed, "meta-test")
    bar = tqdm(total=len(tasks), desc="meta-test", disable=not progress_enabled(), leave=False)
    bar_lock = threading.Lock()

    def work(index: int, task: MetaTask) -> AdaptationTrace:
        cfg = adaptation_config(config, task.support_size, epochs)
        _, trace = adapt(params, task, cfg, rng=worker_rng(base_seed, index))
        with bar_lock:
            bar.update(1)
        return trace

    try:
        traces: list[AdaptationTrace] = map_episodes(work, tasks, experiment.workers)
    finally:
        bar.close()
    records = [
        EpisodeRecord(i, float(t.final_query_loss), float(t.final_query_accuracy)) for i, t in enumerate(traces)
    ]
    curve = np.mean(np.stack([t.curve() for t in traces]), axis=0)
    metrics = RunMetrics(
        test_episodes=records,
        curve=curve,
        stream_id=episode_stream_id(e.support.ids + e.query.ids for e in episodes),
    )
    logger.info(
        f"Meta-test over {len(records)} episodes: accuracy {metrics.test_accuracy:.4f}, "
        f"query loss {metrics.test_loss:.4f}"
    )
    return metrics


def check_pairing(left: RunMetrics, right: RunMetrics) -> None:
    """
    :raises PairingError: when the two runs were not tested on the same episode stream
    """
    if left.stream_id is None or left.stream_id != right.stream_id:
        raise PairingError("runs were tested on different episode streams and cannot be compared pairwise")


def paired_difference(left: RunMetrics, right: RunMetrics) -> float:
    """Mean per-episode accuracy difference, left minus right, on a shared episode stream."""
    check_pairing(left, right)
    a = np.asarray([e.accuracy for e in left.test_episodes])
    b = np.asarray([e.accuracy for e in right.test_episodes])
    return float(np.mean(a - b))
