"""
Prompt encoder: a two-layer bidirectional LSTM followed by a two-layer MLP,
mapping the m raw soft-token embeddings to m encoded ones. Every encoded
vector depends on all raw vectors through the recurrent passes.
"""

from dataclasses import dataclass

import numpy as np

from meta_prompting.autodiff import Tensor, concat, getitem, linear, relu, sigmoid, tanh
from meta_prompting.models.exceptions import DimensionError

PREFIX = "prompt"
SOFT_EMBEDDING = f"{PREFIX}.soft_embedding"
LSTM_LAYERS = 2
DIRECTIONS = ("fw", "bw")


@dataclass(frozen=True)
class EncoderSpec:
    num_soft: int
    embed_dim: int
    hidden_dim: int

    def shapes(self) -> dict[str, tuple[int, ...]]:
        d, h = self.embed_dim, self.hidden_dim
        shapes: dict[str, tuple[int, ...]] = {SOFT_EMBEDDING: (self.num_soft, d)}
        for layer in range(LSTM_LAYERS):
            in_dim = d if layer == 0 else 2 * h
            for direction in DIRECTIONS:
                base = f"{PREFIX}.lstm{layer}.{direction}"
                shapes[f"{base}.input_weight"] = (in_dim, 4 * h)
                shapes[f"{base}.hidden_weight"] = (h, 4 * h)
                shapes[f"{base}.bias"] = (4 * h,)
        shapes[f"{PREFIX}.mlp.hidden_weight"] = (2 * h, d)
        shapes[f"{PREFIX}.mlp.hidden_bias"] = (d,)
        shapes[f"{PREFIX}.mlp.out_weight"] = (d, d)
        shapes[f"{PREFIX}.mlp.out_bias"] = (d,)
        return shapes


def init_encoder(spec: EncoderSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Raw soft embeddings ~ N(0, 1); weights uniform in +-1/sqrt(fan), biases zero."""
    out: dict[str, np.ndarray] = {}
    for name, shape in spec.shapes().items():
        if name == SOFT_EMBEDDING:
            out[name] = rng.normal(0.0, 1.0, size=shape)
        elif name.endswith("bias"):
            out[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            out[name] = rng.uniform(-bound, bound, size=shape)
    return out


def _lstm_pass(inputs: list[Tensor], weights: dict[str, Tensor], base: str, hidden: int) -> list[Tensor]:
    w_in = weights[f"{base}.input_weight"]
    w_h = weights[f"{base}.hidden_weight"]
    bias = weights[f"{base}.bias"]
    h = Tensor(np.zeros((1, hidden)))
    c = Tensor(np.zeros((1, hidden)))
    outputs = []
    for x in inputs:
        gates = linear(x, w_in, bias) + linear(h, w_h)
        i = sigmoid(getitem(gates, (slice(None), slice(0, hidden))))
        f = sigmoid(getitem(gates, (slice(None), slice(hidden, 2 * hidden))))
        g = tanh(getitem(gates, (slice(None), slice(2 * hidden, 3 * hidden))))
        o = sigmoid(getitem(gates, (slice(None), slice(3 * hidden, 4 * hidden))))
        c = f * c + i * g
        h = o * tanh(c)
        outputs.append(h)
    return outputs


def encode_soft_prompts(raw: Tensor, weights: dict[str, Tensor], spec: EncoderSpec) -> Tensor:
    """(m, d) raw soft embeddings -> (m, d) encoded soft embeddings."""
    if raw.ndim != 2 or raw.shape != (spec.num_soft, spec.embed_dim):
        raise DimensionError(f"soft embeddings have shape {raw.shape}, expected ({spec.num_soft}, {spec.embed_dim})")
    h = spec.hidden_dim
    sequence = [getitem(raw, (slice(t, t + 1), slice(None))) for t in range(spec.num_soft)]
    for layer in range(LSTM_LAYERS):
        forward = _lstm_pass(sequence, weights, f"{PREFIX}.lstm{layer}.fw", h)
        backward = _lstm_pass(sequence[::-1], weights, f"{PREFIX}.lstm{layer}.bw", h)[::-1]
        sequence = [concat([fw, bw], axis=1) for fw, bw in zip(forward, backward)]
    states = concat(sequence, axis=0)
    hidden = relu(linear(states, weights[f"{PREFIX}.mlp.hidden_weight"], weights[f"{PREFIX}.mlp.hidden_bias"]))
    return linear(hidden, weights[f"{PREFIX}.mlp.out_weight"], weights[f"{PREFIX}.mlp.out_bias"])
