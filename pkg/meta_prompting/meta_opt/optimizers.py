"""
Outer-loop optimizers over immutable ParamSets.

Optimizers hold hyperparameters only; all mutable state (step counter and
moment estimates) lives in an ``OptimizerState`` value that the caller threads
through ``apply`` and can checkpoint.
"""

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Protocol

import numpy as np

from meta_prompting.autodiff import Tensor
from meta_prompting.models.exceptions import ContractError
from meta_prompting.params import ParamSet, Partition

NO_DECAY_SUFFIXES = ("bias", "norm")


def decays(name: str, partition: Partition) -> bool:
    """Weight decay applies to backbone weights, never to biases, norm gains or the prompt."""
    return partition == Partition.BACKBONE and not name.endswith(NO_DECAY_SUFFIXES)


@dataclass(frozen=True)
class ParamGroup:
    name: str
    lr: float
    weight_decay: float = 0.0


@dataclass
class OptimizerState:
    step: int = 0
    moments: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "OptimizerState":
        return OptimizerState(self.step, {k: v.copy() for k, v in self.moments.items()})

    def equals(self, other: "OptimizerState") -> bool:
        return (
            self.step == other.step
            and self.moments.keys() == other.moments.keys()
            and all(np.array_equal(v, other.moments[k]) for k, v in self.moments.items())
        )


class LearningRateSchedule(Protocol):
    def factor(self, step: int) -> float: ...


class ConstantSchedule:
    def factor(self, step: int) -> float:
        return 1.0


@dataclass(frozen=True)
class LinearWarmupDecay:
    """Linear ramp from 0 over ``warmup_steps``, then linear decay to 0 at ``total_steps``."""

    warmup_steps: int
    total_steps: int

    def factor(self, step: int) -> float:
        if step < self.warmup_steps:
            return (step + 1) / (self.warmup_steps + 1)
        remaining = self.total_steps - step
        span = max(self.total_steps - self.warmup_steps, 1)
        return max(remaining / span, 0.0)


class Optimizer:
    """Two parameter groups: the backbone partition and the prompt partition."""

    def __init__(
        self,
        lr_backbone: float,
        lr_prompt: float,
        weight_decay: float = 0.0,
        schedule: Optional[LearningRateSchedule] = None,
    ):
        self.logger = logging.getLogger(__name__)
        self.groups = {
            Partition.BACKBONE: ParamGroup(Partition.BACKBONE.value, lr_backbone, weight_decay),
            Partition.PROMPT: ParamGroup(Partition.PROMPT.value, lr_prompt, 0.0),
        }
        self.schedule = schedule or ConstantSchedule()
        self.logger.debug(f"Initializing {type(self).__name__} (lr backbone {lr_backbone}, prompt {lr_prompt})")

    def init_state(self, params: ParamSet) -> OptimizerState:
        return OptimizerState()

    def _update(self, name: str, value: np.ndarray, grad: np.ndarray, group: ParamGroup, lr: float,
                state: OptimizerState, partition: Partition) -> np.ndarray:
        raise NotImplementedError

    def apply(
        self, params: ParamSet, grads: Mapping[str, np.ndarray], state: OptimizerState
    ) -> tuple[ParamSet, OptimizerState]:
        """One update of every trainable tensor that has a gradient; returns new params and state."""
        unknown = set(grads) - set(params.names())
        if unknown:
            raise ContractError(f"gradients for unknown parameters: {sorted(unknown)}")
        new_state = state.copy()
        new_state.step += 1
        factor = self.schedule.factor(state.step)
        updates: dict[str, Tensor] = {}
        for name in params.trainable_names():
            grad = grads.get(name)
            if grad is None:
                continue
            partition = params.partition_of(name)
            group = self.groups[partition]
            value = params[name].data
            updated = self._update(name, value, np.asarray(grad, dtype=np.float64), group,
                                   group.lr * factor, new_state, partition)
            updates[name] = Tensor(updated)
        return params.replace(updates), new_state

    def apply_flat(self, params: ParamSet, flat_grad: np.ndarray, state: OptimizerState):
        grads = {name: flat_grad[start:stop].reshape(params[name].shape) for name, (start, stop) in params.offsets().items()}
        return self.apply(params, grads, state)


class SGD(Optimizer):
    """Plain gradient descent, p <- p - lr * g (decoupled decay if configured)."""

    def _update(self, name, value, grad, group, lr, state, partition):
        out = value - lr * grad
        if group.weight_decay and decays(name, partition):
            out = out - lr * group.weight_decay * value
        return out


class AdamW(Optimizer):
    """Adam with decoupled weight decay."""

    def __init__(
        self,
        lr_backbone: float,
        lr_prompt: float,
        weight_decay: float = 0.1,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        schedule: Optional[LearningRateSchedule] = None,
    ):
        super().__init__(lr_backbone, lr_prompt, weight_decay, schedule)
        self.beta1, self.beta2 = betas
        self.eps = eps

    def _update(self, name, value, grad, group, lr, state, partition):
        m = state.moments.get(f"m.{name}", np.zeros_like(value))
        v = state.moments.get(f"v.{name}", np.zeros_like(value))
        m = self.beta1 * m + (1.0 - self.beta1) * grad
        v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
        state.moments[f"m.{name}"] = m
        state.moments[f"v.{name}"] = v
        m_hat = m / (1.0 - self.beta1**state.step)
        v_hat = v / (1.0 - self.beta2**state.step)
        out = value
        if group.weight_decay and decays(name, partition):
            out = out * (1.0 - lr * group.weight_decay)
        return out - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def build_optimizer(meta, total_steps: Optional[int] = None) -> Optimizer:
    """Optimizer from a ``[meta]`` config section."""
    schedule: LearningRateSchedule = ConstantSchedule()
    if meta.schedule == "linear":
        if total_steps is None:
            raise ContractError("a linear schedule needs the total number of outer steps")
        schedule = LinearWarmupDecay(meta.warmup_steps, total_steps)
    if meta.optimizer == "sgd":
        return SGD(meta.lr_backbone, meta.lr_prompt, meta.weight_decay, schedule)
    return AdamW(
        meta.lr_backbone,
        meta.lr_prompt,
        meta.weight_decay,
        betas=(meta.beta1, meta.beta2),
        eps=meta.eps,
        schedule=schedule,
    )
