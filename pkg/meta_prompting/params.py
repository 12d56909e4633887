from enum import Enum
from typing import Iterable, Iterator, Mapping, Optional, Sequence

import numpy as np

from meta_prompting.autodiff.tensor import Tensor
from meta_prompting.models.exceptions import ContractError, DimensionError


class Partition(str, Enum):
    BACKBONE = "backbone"
    PROMPT = "prompt"


ALL_PARTITIONS: tuple[Partition, ...] = (Partition.BACKBONE, Partition.PROMPT)


class ParamSet:
    """
    Named, ordered collection of parameter tensors split into the backbone
    partition (theta) and the prompt partition (phi).

    A ParamSet never mutates: updates return a new ParamSet. Tensors inside may
    be graph nodes (during unrolled adaptation) or plain leaves. The flat view
    always follows insertion order, which clone/replace/from_flat preserve.
    """

    def __init__(
        self,
        tensors: Mapping[str, Tensor],
        partitions: Mapping[str, Partition],
        trainable: Optional[Mapping[Partition, bool]] = None,
    ):
        if set(tensors) != set(partitions):
            raise ContractError("Every parameter needs exactly one partition")
        self._tensors: dict[str, Tensor] = dict(tensors)
        self._partitions: dict[str, Partition] = {n: Partition(partitions[n]) for n in self._tensors}
        self._trainable: dict[Partition, bool] = {p: True for p in ALL_PARTITIONS}
        if trainable:
            self._trainable.update({Partition(k): bool(v) for k, v in trainable.items()})

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: object) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def __repr__(self) -> str:
        parts = ", ".join(f"{n}{list(t.shape)}" for n, t in self._tensors.items())
        return f"ParamSet({parts})"

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def partition_of(self, name: str) -> Partition:
        return self._partitions[name]

    @property
    def partitions(self) -> dict[str, Partition]:
        return dict(self._partitions)

    @property
    def trainable(self) -> dict[Partition, bool]:
        return dict(self._trainable)

    def names_in(self, partitions: Iterable[Partition]) -> list[str]:
        wanted = {Partition(p) for p in partitions}
        return [n for n in self._tensors if self._partitions[n] in wanted]

    def trainable_names(self, partitions: Optional[Iterable[Partition]] = None) -> list[str]:
        """Names that are trainable by the partition flags and, if given, inside ``partitions``."""
        wanted = set(ALL_PARTITIONS if partitions is None else (Partition(p) for p in partitions))
        return [
            n
            for n in self._tensors
            if self._partitions[n] in wanted and self._trainable[self._partitions[n]]
        ]

    def with_trainable(self, partitions: Iterable[Partition]) -> "ParamSet":
        wanted = {Partition(p) for p in partitions}
        return ParamSet(self._tensors, self._partitions, {p: p in wanted for p in ALL_PARTITIONS})

    @property
    def num_params(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {n: t.shape for n, t in self._tensors.items()}

    def shape_compatible(self, other: "ParamSet") -> bool:
        return self.names() == other.names() and self.shapes() == other.shapes()

    def offsets(self) -> dict[str, tuple[int, int]]:
        out, start = {}, 0
        for name, tensor in self._tensors.items():
            out[name] = (start, start + tensor.size)
            start += tensor.size
        return out

    def flat(self) -> np.ndarray:
        if not self._tensors:
            return np.zeros(0)
        return np.concatenate([t.data.reshape(-1) for t in self._tensors.values()])

    def from_flat(self, vector: np.ndarray) -> "ParamSet":
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.num_params,):
            raise DimensionError(f"Flat vector has {vector.size} entries, expected {self.num_params}")
        tensors = {}
        for name, (start, stop) in self.offsets().items():
            tensors[name] = Tensor(vector[start:stop].reshape(self._tensors[name].shape))
        return ParamSet(tensors, self._partitions, self._trainable)

    def flat_from(self, values: Mapping[str, Optional[Tensor]]) -> np.ndarray:
        """Flatten per-name values (gradients, deltas) in this set's order; missing names are zero."""
        out = np.zeros(self.num_params)
        for name, (start, stop) in self.offsets().items():
            value = values.get(name)
            if value is not None:
                out[start:stop] = np.asarray(value.data if isinstance(value, Tensor) else value).reshape(-1)
        return out

    def replace(self, updates: Mapping[str, Tensor]) -> "ParamSet":
        unknown = set(updates) - set(self._tensors)
        if unknown:
            raise ContractError(f"Unknown parameter(s): {sorted(unknown)}")
        tensors = dict(self._tensors)
        for name, tensor in updates.items():
            if tensor.shape != tensors[name].shape:
                raise DimensionError(f"{name}: shape {tensor.shape} != {tensors[name].shape}")
            tensors[name] = tensor
        return ParamSet(tensors, self._partitions, self._trainable)

    def as_leaves(self, names: Optional[Sequence[str]] = None) -> "ParamSet":
        """
        Value snapshot: every tensor becomes a fresh leaf cut from any graph.
        Tensors in ``names`` (default: the trainable ones) require gradients.
        """
        grad_names = set(self.trainable_names() if names is None else names)
        tensors = {n: t.leaf(requires_grad=n in grad_names) for n, t in self._tensors.items()}
        return ParamSet(tensors, self._partitions, self._trainable)

    def detached(self) -> "ParamSet":
        return self.as_leaves(names=())

    def clone(self) -> "ParamSet":
        return self.as_leaves()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self._tensors.items()}

    def equals(self, other: "ParamSet") -> bool:
        """Exact, bitwise equality of names, shapes and values."""
        return self.shape_compatible(other) and all(
            np.array_equal(self[n].data, other[n].data) for n in self._tensors
        )
