"""
The outer (meta) update over a batch of episodes.

Per-episode work runs on a thread pool, each episode on its own tape and
parameter snapshot. Results are reduced in episode order, so the update does
not depend on the number of workers.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from meta_prompting.autodiff import Tensor
from meta_prompting.meta_opt.algorithms import (
    ALGORITHMS,
    FOMAML,
    MAML,
    REPTILE,
    MetaGradient,
    interpolate,
    meta_gradient_fomaml,
    meta_gradient_maml,
    meta_gradient_mslb,
    reptile_target,
)
from meta_prompting.meta_opt.inner import InnerLoopConfig
from meta_prompting.meta_opt.optimizers import Optimizer, OptimizerState
from meta_prompting.meta_opt.tasks import MetaTask
from meta_prompting.models.adaptation_trace import AdaptationTrace
from meta_prompting.models.exceptions import ContractError, EpisodeError, MetaPromptingException
from meta_prompting.params import ParamSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetaUpdateConfig:
    algorithm: str
    inner: InnerLoopConfig
    mslb_weights: Optional[tuple[float, ...]] = None
    mslb_anneal_epochs: int = 0
    reptile_epsilon: float = 1.0
    reptile_use_query: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ContractError(f"unknown meta-algorithm '{self.algorithm}', expected one of {ALGORITHMS}")
        if self.inner.steps < 1:
            raise ContractError("a meta-update needs at least one inner step")
        if not 0.0 < self.reptile_epsilon <= 1.0:
            raise ContractError("reptile_epsilon must lie in (0, 1]")
        if self.mslb_weights is not None:
            weights = tuple(float(w) for w in self.mslb_weights)
            if len(weights) != self.inner.steps:
                raise ContractError(f"{len(weights)} MSLB weights for {self.inner.steps} inner steps")
            if any(w < 0 for w in weights) or sum(weights) <= 0:
                raise ContractError("MSLB weights must be non-negative with a positive sum")
            total = sum(weights)
            object.__setattr__(self, "mslb_weights", tuple(w / total for w in weights))

    @classmethod
    def from_config(cls, config) -> "MetaUpdateConfig":
        """From a resolved RunConfig."""
        weights = config.meta.mslb_weights
        return cls(
            algorithm=config.meta.algorithm,
            inner=InnerLoopConfig.from_config(config.inner),
            mslb_weights=None if weights is None else tuple(weights),
            mslb_anneal_epochs=config.meta.mslb_anneal_epochs,
            reptile_epsilon=config.meta.reptile_epsilon,
            reptile_use_query=config.meta.reptile_use_query,
        )

    def step_weights(self, epoch: int = 0) -> tuple[float, ...]:
        """
        MSLB weights for ``epoch``: the configured (default uniform) weights,
        linearly annealed towards last-step-only over ``mslb_anneal_epochs``.
        """
        steps = self.inner.steps
        base = np.asarray(self.mslb_weights if self.mslb_weights is not None else [1.0 / steps] * steps)
        if self.mslb_anneal_epochs <= 0:
            return tuple(float(w) for w in base)
        last_only = np.zeros(steps)
        last_only[-1] = 1.0
        t = min(epoch / self.mslb_anneal_epochs, 1.0)
        return tuple(float(w) for w in (1.0 - t) * base + t * last_only)


@dataclass
class EpisodeResult:
    query_loss: float
    trace: AdaptationTrace
    gradient: Optional[MetaGradient] = None
    target: Optional[ParamSet] = None


@dataclass
class OuterStepResult:
    params: ParamSet
    state: OptimizerState
    episodes: list[EpisodeResult] = field(default_factory=list)

    @property
    def mean_query_loss(self) -> float:
        return float(np.mean([e.query_loss for e in self.episodes]))

    @property
    def retained_nodes(self) -> int:
        return max((e.gradient.retained_nodes for e in self.episodes if e.gradient is not None), default=0)


def _episode_work(params: ParamSet, task: MetaTask, cfg: MetaUpdateConfig, epoch: int) -> EpisodeResult:
    if cfg.algorithm == REPTILE:
        target, trace = reptile_target(params, task, cfg.inner, cfg.reptile_use_query)
        return EpisodeResult(trace.final_query_loss, trace, target=target)
    if cfg.algorithm == MAML:
        gradient = meta_gradient_maml(params, task, cfg.inner)
    elif cfg.algorithm == FOMAML:
        gradient = meta_gradient_fomaml(params, task, cfg.inner)
    else:
        gradient = meta_gradient_mslb(params, task, cfg.inner, cfg.step_weights(epoch))
    return EpisodeResult(gradient.trace.final_query_loss, gradient.trace, gradient=gradient)


def map_episodes(
    work: Callable[[int, MetaTask], object], tasks: Sequence[MetaTask], workers: int = 1
) -> list:
    """Apply ``work(index, task)`` to every task, in parallel when asked; results in task order."""

    def run(index: int):
        try:
            return work(index, tasks[index])
        except EpisodeError:
            raise
        except MetaPromptingException as e:
            raise EpisodeError(str(e), index) from e

    indices = range(len(tasks))
    if workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(run, indices))
    return [run(i) for i in indices]


def outer_step(
    params: ParamSet,
    tasks: Sequence[MetaTask],
    cfg: MetaUpdateConfig,
    optimizer: Optimizer,
    state: OptimizerState,
    workers: int = 1,
    epoch: int = 0,
) -> OuterStepResult:
    """
    One meta-update: average the per-episode meta-gradients and apply the
    outer optimizer, or, for Reptile, interpolate towards the average of the
    adapted parameters.

    :raises EpisodeError: wrapping any inner failure, with the episode index
    """
    if not tasks:
        raise ContractError("outer_step needs at least one episode")
    snapshot = params.detached()
    results: list[EpisodeResult] = map_episodes(
        lambda i, task: _episode_work(snapshot, task, cfg, epoch), tasks, workers
    )
    names = cfg.inner.adapted_names(params)
    count = float(len(results))
    logger.debug(f"Outer step {state.step} ({cfg.algorithm}) over {len(results)} episodes")

    if cfg.algorithm == REPTILE:
        mean_target = params.replace(
            {n: Tensor(sum_in_order([r.target[n].data for r in results]) / count) for n in names}
        )
        new_params = interpolate(params, mean_target, cfg.reptile_epsilon, names)
        new_state = state.copy()
        new_state.step += 1
        return OuterStepResult(new_params, new_state, results)

    mean = sum_in_order([r.gradient.flat for r in results]) / count
    offsets = params.offsets()
    grads = {n: mean[offsets[n][0] : offsets[n][1]].reshape(params[n].shape) for n in names}
    new_params, new_state = optimizer.apply(params, grads, state)
    return OuterStepResult(new_params, new_state, results)


def sum_in_order(values: Sequence[np.ndarray]) -> np.ndarray:
    """Left-to-right sum, independent of how the values were produced."""
    total = np.array(values[0], dtype=np.float64, copy=True)
    for v in values[1:]:
        total = total + v
    return total
