"""
Meta-gradients of the MAML family and the Reptile interpolation update.

All meta-gradients are flat vectors in the ParamSet's flat order; entries of
tensors outside the adapted partitions (or frozen by their trainable flag)
are exactly zero.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from meta_prompting.autodiff import Tensor, enable_grad, grad, graph_size, hvp
from meta_prompting.meta_opt.inner import InnerLoopConfig, adapt, unroll
from meta_prompting.meta_opt.tasks import MetaTask
from meta_prompting.models.adaptation_trace import AdaptationTrace
from meta_prompting.models.exceptions import ContractError
from meta_prompting.params import ParamSet

logger = logging.getLogger(__name__)

MAML = "maml"
FOMAML = "fomaml"
REPTILE = "reptile"
MSLB = "mslb"
ALGORITHMS: tuple[str, ...] = (MAML, FOMAML, REPTILE, MSLB)


@dataclass
class MetaGradient:
    flat: np.ndarray
    names: list[str]
    query_loss: float
    trace: AdaptationTrace
    retained_nodes: int

    def as_dict(self, params: ParamSet) -> dict[str, np.ndarray]:
        offsets = params.offsets()
        return {n: self.flat[offsets[n][0] : offsets[n][1]].reshape(params[n].shape) for n in self.names}


def _collect(params: ParamSet, names: Sequence[str], grads: Sequence[Tensor]) -> np.ndarray:
    return params.flat_from(dict(zip(names, grads)))


def meta_gradient_maml(
    params: ParamSet, task: MetaTask, cfg: InnerLoopConfig, rng: Optional[np.random.Generator] = None
) -> MetaGradient:
    """
    Exact gradient of the query loss after adaptation with respect to the
    initial parameters, by differentiating through the unrolled inner loop.
    """
    names = cfg.adapted_names(params)
    leaves = params.as_leaves(names)
    history, trace = unroll(leaves, task, cfg, retain_graph=True, rng=rng, names=names)
    with enable_grad():
        query = task.query_loss(history[-1])
    grads = grad(query, [leaves[n] for n in names])
    return MetaGradient(_collect(params, names, grads), names, query.item(), trace, graph_size(query))


def meta_gradient_fomaml(
    params: ParamSet, task: MetaTask, cfg: InnerLoopConfig, rng: Optional[np.random.Generator] = None
) -> MetaGradient:
    """Query-loss gradient at the adapted parameters, used as the gradient at the initial ones."""
    names = cfg.adapted_names(params)
    history, trace = unroll(params.as_leaves(names), task, cfg, retain_graph=False, rng=rng, names=names)
    adapted = history[-1].as_leaves(names)
    with enable_grad():
        query = task.query_loss(adapted)
    grads = grad(query, [adapted[n] for n in names])
    return MetaGradient(_collect(params, names, grads), names, query.item(), trace, graph_size(query))


def meta_gradient_mslb(
    params: ParamSet,
    task: MetaTask,
    cfg: InnerLoopConfig,
    weights: Sequence[float],
    rng: Optional[np.random.Generator] = None,
) -> MetaGradient:
    """Gradient of sum_k w_k * query_loss(params after k steps), k = 1..steps, through the unrolled loop."""
    weights = [float(w) for w in weights]
    if len(weights) != cfg.steps:
        raise ContractError(f"{len(weights)} MSLB weights for {cfg.steps} inner steps")
    if any(w < 0 for w in weights):
        raise ContractError("MSLB weights must be non-negative")
    names = cfg.adapted_names(params)
    leaves = params.as_leaves(names)
    history, trace = unroll(leaves, task, cfg, retain_graph=True, rng=rng, names=names)
    objective: Optional[Tensor] = None
    with enable_grad():
        for w, step_params in zip(weights, history[1:]):
            if w == 0.0:
                continue
            term = task.query_loss(step_params)
            if w != 1.0:
                term = term * w
            objective = term if objective is None else objective + term
    if objective is None:
        return MetaGradient(np.zeros(params.num_params), names, 0.0, trace, 0)
    grads = grad(objective, [leaves[n] for n in names])
    return MetaGradient(_collect(params, names, grads), names, objective.item(), trace, graph_size(objective))


def maml_meta_gradient_hvp(params: ParamSet, task: MetaTask, cfg: InnerLoopConfig) -> np.ndarray:
    """
    One-step MAML meta-gradient in closed form, (I - lr * H_support) applied to
    the query gradient at the adapted parameters, with H v from ``hvp``.
    Full-batch single-step configs only.
    """
    if cfg.steps != 1 or cfg.batch_size is not None:
        raise ContractError("the closed form covers a single full-batch inner step")
    names = cfg.adapted_names(params)
    adapted, _ = adapt(params, task, cfg, retain_graph=False, track_query=False)
    adapted = adapted.as_leaves(names)
    with enable_grad():
        query = task.query_loss(adapted)
    query_grad = _collect(params, names, grad(query, [adapted[n] for n in names]))
    sub = ParamSet({n: params[n] for n in names}, {n: params.partition_of(n) for n in names})
    offsets = params.offsets()
    v = np.concatenate([query_grad[offsets[n][0] : offsets[n][1]] for n in names]) if names else np.zeros(0)

    def support_loss(p: ParamSet):
        return task.support_loss(params.replace({n: p[n] for n in names}))

    hv = hvp(support_loss, sub, v)
    out = np.zeros(params.num_params)
    start = 0
    for n in names:
        lo, hi = offsets[n]
        out[lo:hi] = v[start : start + hi - lo] - cfg.lr * hv[start : start + hi - lo]
        start += hi - lo
    return out


def reptile_target(
    params: ParamSet,
    task: MetaTask,
    cfg: InnerLoopConfig,
    use_query: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> tuple[ParamSet, AdaptationTrace]:
    """Adapted parameters Reptile moves towards (support only, or support and query)."""
    inner_task = task.with_query_in_support() if use_query else task
    return adapt(params, inner_task, cfg, retain_graph=False, rng=rng)


def interpolate(params: ParamSet, target: ParamSet, epsilon: float, names: Sequence[str]) -> ParamSet:
    """(1 - epsilon) * params + epsilon * target on ``names``."""
    if not 0.0 < epsilon <= 1.0:
        raise ContractError(f"Reptile step size must lie in (0, 1], got {epsilon}")
    return params.replace(
        {n: Tensor((1.0 - epsilon) * params[n].data + epsilon * target[n].data) for n in names}
    )


def reptile_update(
    params: ParamSet,
    task: MetaTask,
    cfg: InnerLoopConfig,
    epsilon: float,
    use_query: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> ParamSet:
    """params <- params + epsilon * (adapted - params)."""
    adapted, _ = reptile_target(params, task, cfg, use_query, rng)
    return interpolate(params, adapted, epsilon, cfg.adapted_names(params))
