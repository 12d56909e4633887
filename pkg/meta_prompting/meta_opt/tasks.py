"""
Tasks the meta-learning algorithms operate on: anything exposing a support
loss and a query loss as functions of a ParamSet.
"""

from typing import Optional, Protocol, Sequence, runtime_checkable

import numpy as np

from meta_prompting.autodiff import Tensor, matmul, no_grad, reshape, sub, tsum
from meta_prompting.episodes.sampler import Episode
from meta_prompting.models.exceptions import ContractError
from meta_prompting.params import ParamSet
from meta_prompting.prompt_model.model import PromptModel
from meta_prompting.prompt_model.template import PromptTemplate
from meta_prompting.prompt_model.verbalizer import Verbalizer


@runtime_checkable
class MetaTask(Protocol):
    @property
    def support_size(self) -> int: ...

    def support_loss(self, params: ParamSet, indices: Optional[Sequence[int]] = None) -> Tensor: ...

    def query_loss(self, params: ParamSet) -> Tensor: ...

    def query_accuracy(self, params: ParamSet) -> Optional[float]: ...

    def with_query_in_support(self) -> "MetaTask": ...


class PromptTask:
    """One episode seen through the prompt model, with the verbalizer restricted to its palette."""

    def __init__(self, model: PromptModel, template: PromptTemplate, verbalizer: Verbalizer, episode: Episode):
        self.model = model
        self.template = template
        self.episode = episode
        self.verbalizer = verbalizer.restrict(episode.palette)
        self.support = episode.support

    @property
    def support_size(self) -> int:
        return len(self.support)

    def support_loss(self, params: ParamSet, indices: Optional[Sequence[int]] = None) -> Tensor:
        part = self.support if indices is None else self.support.take(indices)
        if len(part) == 0:
            raise ContractError("support set is empty")
        return self.model.task_loss(params, self.template, self.verbalizer, part.texts, part.labels)

    def query_loss(self, params: ParamSet) -> Tensor:
        query = self.episode.query
        return self.model.task_loss(params, self.template, self.verbalizer, query.texts, query.labels)

    def query_accuracy(self, params: ParamSet) -> Optional[float]:
        query = self.episode.query
        return self.model.accuracy(params, self.template, self.verbalizer, query.texts, query.labels)

    def with_query_in_support(self) -> "PromptTask":
        task = PromptTask.__new__(PromptTask)
        task.model, task.template, task.episode, task.verbalizer = (
            self.model,
            self.template,
            self.episode,
            self.verbalizer,
        )
        task.support = self.support.union(self.episode.query)
        return task


def _quadratic(phi: Tensor, center: np.ndarray, curvature: Optional[np.ndarray]) -> Tensor:
    diff = sub(phi, Tensor(center.reshape(phi.shape)))
    if curvature is None:
        return tsum(diff * diff)
    column = reshape(diff, (diff.size, 1))
    return tsum(column * matmul(Tensor(curvature), column))


class QuadraticTask:
    """
    Analytic task on a single parameter ``name``:
    support loss (p - a)^T A (p - a), query loss (p - b)^T B (p - b),
    with A = B = I unless curvatures are given. Hessians are 2A and 2B.
    """

    def __init__(
        self,
        support_center,
        query_center,
        support_curvature: Optional[np.ndarray] = None,
        query_curvature: Optional[np.ndarray] = None,
        name: str = "phi",
    ):
        self.support_center = np.atleast_1d(np.asarray(support_center, dtype=np.float64))
        self.query_center = np.atleast_1d(np.asarray(query_center, dtype=np.float64))
        self.support_curvature = None if support_curvature is None else np.asarray(support_curvature, dtype=np.float64)
        self.query_curvature = None if query_curvature is None else np.asarray(query_curvature, dtype=np.float64)
        self.name = name
        self._query_in_support = False

    @property
    def support_size(self) -> int:
        return 1

    def support_loss(self, params: ParamSet, indices: Optional[Sequence[int]] = None) -> Tensor:
        loss = _quadratic(params[self.name], self.support_center, self.support_curvature)
        if self._query_in_support:
            loss = loss + self.query_loss(params)
        return loss

    def query_loss(self, params: ParamSet) -> Tensor:
        return _quadratic(params[self.name], self.query_center, self.query_curvature)

    def query_accuracy(self, params: ParamSet) -> Optional[float]:
        return None

    def with_query_in_support(self) -> "QuadraticTask":
        task = QuadraticTask(
            self.support_center, self.query_center, self.support_curvature, self.query_curvature, self.name
        )
        task._query_in_support = True
        return task

    def query_hessian(self, size: int) -> np.ndarray:
        return 2.0 * (np.eye(size) if self.query_curvature is None else self.query_curvature)

    def support_hessian(self, size: int) -> np.ndarray:
        return 2.0 * (np.eye(size) if self.support_curvature is None else self.support_curvature)


def evaluate_query(task: MetaTask, params: ParamSet) -> tuple[float, Optional[float]]:
    """Query loss and accuracy without building a graph."""
    with no_grad():
        loss = task.query_loss(params).item()
    return loss, task.query_accuracy(params)
