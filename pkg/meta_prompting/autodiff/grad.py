import logging
from typing import Callable, Optional, Sequence

import numpy as np

from meta_prompting.autodiff.tensor import (
    Tensor,
    enable_grad,
    mul,
    no_grad,
    ones_like,
    tsum,
    zeros,
)
from meta_prompting.models.exceptions import ContractError, DimensionError

logger = logging.getLogger(__name__)


def _graph_nodes(root: Tensor) -> list[Tensor]:
    """All nodes reachable from ``root`` through parent links, newest first."""
    seen: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node.id in seen:
            continue
        seen[node.id] = node
        stack.extend(p for p in node.parents if p.id not in seen)
    # Parents are always created before their children, so descending id is a
    # valid reverse topological order, and a deterministic one.
    return sorted(seen.values(), key=lambda n: n.id, reverse=True)


def graph_size(root: Tensor) -> int:
    """Number of nodes a graph keeps alive, root and leaves included."""
    return len(_graph_nodes(root))


def _propagate(root: Tensor, create_graph: bool) -> dict[int, Tensor]:
    if root.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    grads: dict[int, Tensor] = {root.id: ones_like(root)}
    if not root.requires_grad:
        return grads
    mode = enable_grad() if create_graph else no_grad()
    with mode:
        for node in _graph_nodes(root):
            g = grads.get(node.id)
            if g is None or node._backward is None:
                continue
            parent_grads = node._backward(g, node)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.id in grads:
                    grads[parent.id] = grads[parent.id] + pg
                else:
                    grads[parent.id] = pg
    return grads


def backward(root: Tensor, create_graph: bool = False) -> dict[int, Tensor]:
    """
    Gradients of a scalar ``root`` with respect to every leaf that requires
    gradients, keyed by tensor id.

    With ``create_graph`` the returned gradients are graph nodes themselves and
    can be differentiated again; otherwise they are constants.
    """
    grads = _propagate(root, create_graph)
    leaves = [n for n in _graph_nodes(root) if n.is_leaf and n.requires_grad]
    return {leaf.id: grads.get(leaf.id, zeros(leaf.shape)) for leaf in leaves}


def grad(root: Tensor, inputs: Sequence[Tensor], create_graph: bool = False) -> list[Tensor]:
    """Gradients of ``root`` aligned with ``inputs`` (leaves or intermediate nodes); zeros if unused."""
    grads = _propagate(root, create_graph)
    return [grads.get(t.id, zeros(t.shape)) if t.requires_grad else zeros(t.shape) for t in inputs]


def hvp(loss_fn: Callable, params, vector: np.ndarray) -> np.ndarray:
    """
    Hessian-vector product H.v of ``loss_fn`` at ``params`` by double backward.

    :param loss_fn: ParamSet -> scalar Tensor
    :param params: the ParamSet to differentiate at; every tensor takes part
    :param vector: flat vector in the ParamSet's flat order
    :return: flat H.v
    """
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != (params.num_params,):
        raise DimensionError(f"hvp: vector has {vector.size} entries, expected {params.num_params}")
    leaves = params.as_leaves(names=params.names())
    inputs = [leaves[n] for n in leaves.names()]
    with enable_grad():
        loss = loss_fn(leaves)
        first = grad(loss, inputs, create_graph=True)
        dot: Optional[Tensor] = None
        for name, g in zip(leaves.names(), first):
            start, stop = leaves.offsets()[name]
            term = tsum(mul(g, Tensor(vector[start:stop].reshape(g.shape))))
            dot = term if dot is None else dot + term
    if dot is None or not dot.requires_grad:
        return np.zeros_like(vector)
    second = grad(dot, inputs)
    return leaves.flat_from(dict(zip(leaves.names(), second)))


def numerical_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of a flat vector."""
    x0 = np.array(x, dtype=np.float64)
    out = np.zeros_like(x0)
    for j in range(x0.size):
        x = x0.copy()
        x.flat[j] = x0.flat[j] + eps
        fplus = f(x)
        x.flat[j] = x0.flat[j] - eps
        fminus = f(x)
        out.flat[j] = (fplus - fminus) / (2 * eps)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """||a - n||_inf / max(||a||_inf, ||n||_inf, floor)."""
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    numeric = np.asarray(numeric, dtype=np.float64).reshape(-1)
    if analytic.size == 0:
        return 0.0
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric)) / scale)
