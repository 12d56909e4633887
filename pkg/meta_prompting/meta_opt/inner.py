"""
Inner-loop adaptation: plain gradient descent on a task's support loss.

With ``retain_graph`` every step is recorded, so the adapted parameters stay
differentiable functions of the initial ones (the unrolled loop MAML
differentiates through). Without it, each step starts from fresh leaves and
the graph never outlives a single step.
"""

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from meta_prompting.autodiff import Tensor, enable_grad, grad, no_grad
from meta_prompting.meta_opt.tasks import MetaTask
from meta_prompting.models.adaptation_trace import AdaptationTrace
from meta_prompting.models.exceptions import ContractError, NonFiniteError
from meta_prompting.params import ParamSet, Partition


@dataclass(frozen=True)
class InnerLoopConfig:
    """
    Inner-loop settings. ``steps=0`` is allowed only for evaluation (scoring an
    initialization without adaptation); meta-updates need at least one step.
    """

    steps: int
    lr: float
    partitions: tuple[Partition, ...] = (Partition.PROMPT,)
    batch_size: Optional[int] = None

    def __post_init__(self):
        if self.steps < 0:
            raise ContractError("inner steps must be >= 0")
        if not math.isfinite(self.lr) or self.lr < 0:
            raise ContractError(f"inner learning rate must be finite and >= 0, got {self.lr}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ContractError("inner batch size must be positive")
        object.__setattr__(self, "partitions", tuple(Partition(p) for p in self.partitions))

    @classmethod
    def for_epochs(
        cls,
        epochs: int,
        support_size: int,
        lr: float,
        batch_size: Optional[int],
        partitions: Iterable[Partition] = (Partition.PROMPT,),
    ) -> "InnerLoopConfig":
        """``epochs`` passes over the support set; full batch when it is smaller than ``batch_size``."""
        per_epoch = 1 if batch_size is None or support_size <= batch_size else math.ceil(support_size / batch_size)
        return cls(epochs * per_epoch, lr, tuple(partitions), batch_size)

    @classmethod
    def from_config(cls, inner) -> "InnerLoopConfig":
        return cls(inner.steps, inner.lr, tuple(Partition(p) for p in inner.partitions), inner.batch_size)

    def adapted_names(self, params: ParamSet) -> list[str]:
        return params.trainable_names(self.partitions)


def _batches(size: int, batch_size: Optional[int], steps: int, rng: Optional[np.random.Generator]):
    """Index batches for ``steps`` steps: the whole set, or epoch-wise (shuffled when ``rng`` is given) minibatches."""
    if batch_size is None or size <= batch_size:
        for _ in range(steps):
            yield None
        return
    emitted = 0
    while emitted < steps:
        order = rng.permutation(size) if rng is not None else np.arange(size)
        for start in range(0, size, batch_size):
            if emitted == steps:
                return
            yield [int(i) for i in order[start : start + batch_size]]
            emitted += 1


def _finite(value: float, what: str, step: int) -> None:
    if not math.isfinite(value):
        raise NonFiniteError(f"non-finite {what}", step_index=step)


def _record(trace: AdaptationTrace, task: MetaTask, params: ParamSet, support_loss: Optional[float], track_query: bool):
    with no_grad():
        if support_loss is None:
            support_loss = task.support_loss(params).item()
        trace.support_losses.append(support_loss)
        if track_query:
            trace.query_losses.append(task.query_loss(params).item())
            trace.query_accuracies.append(task.query_accuracy(params))


def unroll(
    leaves: ParamSet,
    task: MetaTask,
    cfg: InnerLoopConfig,
    retain_graph: bool,
    rng: Optional[np.random.Generator] = None,
    track_query: bool = True,
    names: Optional[Sequence[str]] = None,
) -> tuple[list[ParamSet], AdaptationTrace]:
    """
    Run the inner loop from ``leaves`` and return the parameters after every
    step (index 0 is ``leaves`` itself) with the trace.

    :raises NonFiniteError: carrying the index of the failing step
    """
    if task.support_size == 0:
        raise ContractError("cannot adapt on an empty support set")
    names = list(cfg.adapted_names(leaves) if names is None else names)
    trace = AdaptationTrace()
    history = [leaves]
    current = leaves
    for step, batch in enumerate(_batches(task.support_size, cfg.batch_size, cfg.steps, rng)):
        try:
            with enable_grad():
                loss = task.support_loss(current, batch)
                _finite(loss.item(), "support loss", step)
                grads = grad(loss, [current[n] for n in names], create_graph=retain_graph)
            for g in grads:
                if not np.all(np.isfinite(g.data)):
                    raise NonFiniteError("non-finite support gradient", step_index=step)
            _record(trace, task, current, loss.item() if batch is None else None, track_query)
            if retain_graph:
                with enable_grad():
                    updates = {n: current[n] - g * cfg.lr for n, g in zip(names, grads)}
            else:
                updates = {n: Tensor(current[n].data - cfg.lr * g.data).leaf(True) for n, g in zip(names, grads)}
            current = current.replace(updates)
        except NonFiniteError as e:
            if e.step_index is None:
                raise NonFiniteError(e.error_msg, step_index=step) from e
            raise
        history.append(current)
    _record(trace, task, current, None, track_query)
    trace.adapted = current
    return history, trace


def adapt(
    params: ParamSet,
    task: MetaTask,
    cfg: InnerLoopConfig,
    retain_graph: bool = False,
    rng: Optional[np.random.Generator] = None,
    track_query: bool = True,
) -> tuple[ParamSet, AdaptationTrace]:
    """
    ``cfg.steps`` gradient-descent steps on the support loss over the
    adapted partitions; ``params`` itself is never modified.
    """
    names = cfg.adapted_names(params)
    history, trace = unroll(params.as_leaves(names), task, cfg, retain_graph, rng, track_query, names)
    adapted = history[-1] if retain_graph else history[-1].detached()
    trace.adapted = adapted
    return adapted, trace
