"""
Masked-token backbone standing in for a pretrained masked language model.

Token and position embeddings feed ``depth`` mixing layers. Each layer adds a
projection of the (padding-masked) mean of the sequence to every position,
applies a per-token MLP with a residual connection, then layer-normalizes.
Logits at the mask position come from the output projection tied to the
token embedding table.
"""

from dataclasses import dataclass

import numpy as np

from meta_prompting.autodiff import (
    Tensor,
    add,
    div,
    embedding,
    exp,
    getitem,
    linear,
    log,
    matmul,
    mean,
    mul,
    reshape,
    sub,
    tanh,
    transpose,
    tsum,
)
from meta_prompting.models.exceptions import ContractError

PREFIX = "backbone"
TOKEN_EMBEDDING = f"{PREFIX}.token_embedding"
POSITION_EMBEDDING = f"{PREFIX}.position_embedding"
OUTPUT_BIAS = f"{PREFIX}.output_bias"
NORM_EPS = 1e-5


@dataclass(frozen=True)
class BackboneSpec:
    vocab_size: int
    embed_dim: int
    hidden_dim: int
    depth: int
    max_seq_len: int
    seed: int

    def __post_init__(self):
        if self.embed_dim <= 0 or self.hidden_dim <= 0:
            raise ContractError("backbone dimensions must be positive")
        if self.depth < 1:
            raise ContractError("backbone needs at least one mixing layer")
        if self.vocab_size <= 0 or self.max_seq_len <= 0:
            raise ContractError("backbone needs a vocabulary and a sequence length")

    def shapes(self) -> dict[str, tuple[int, ...]]:
        d, h = self.embed_dim, self.hidden_dim
        shapes: dict[str, tuple[int, ...]] = {
            TOKEN_EMBEDDING: (self.vocab_size, d),
            POSITION_EMBEDDING: (self.max_seq_len, d),
        }
        for layer in range(self.depth):
            base = f"{PREFIX}.mix{layer}"
            shapes[f"{base}.context_weight"] = (d, d)
            shapes[f"{base}.hidden_weight"] = (d, h)
            shapes[f"{base}.hidden_bias"] = (h,)
            shapes[f"{base}.out_weight"] = (h, d)
            shapes[f"{base}.out_bias"] = (d,)
            shapes[f"{base}.norm"] = (d,)
            shapes[f"{base}.norm_bias"] = (d,)
        shapes[OUTPUT_BIAS] = (self.vocab_size,)
        return shapes


def init_backbone(spec: BackboneSpec) -> dict[str, np.ndarray]:
    """Deterministic in ``spec.seed``: the same spec always yields the same bits."""
    rng = np.random.default_rng(spec.seed)
    out: dict[str, np.ndarray] = {}
    for name, shape in spec.shapes().items():
        if name.endswith(".norm"):
            out[name] = np.ones(shape)
        elif name.endswith("bias"):
            out[name] = np.zeros(shape)
        elif name in (TOKEN_EMBEDDING, POSITION_EMBEDDING):
            out[name] = rng.normal(0.0, 0.5, size=shape)
        else:
            out[name] = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), size=shape)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    centered = sub(x, mean(x, axis=-1, keepdims=True))
    variance = mean(mul(centered, centered), axis=-1, keepdims=True)
    inv_std = exp(mul(log(add(variance, NORM_EPS)), -0.5))
    return add(mul(mul(centered, inv_std), gain), bias)


def mixing_layer(h: Tensor, pad_mask: np.ndarray, weights: dict[str, Tensor], layer: int) -> Tensor:
    """(B, L, d) -> (B, L, d); ``pad_mask`` is (B, L) with 1 at real positions."""
    base = f"{PREFIX}.mix{layer}"
    batch, length, d = h.shape
    mask = Tensor(pad_mask.reshape(batch, length, 1))
    counts = Tensor(pad_mask.sum(axis=1).reshape(batch, 1))
    context = div(tsum(mul(h, mask), axis=1), counts)
    projected = reshape(linear(context, weights[f"{base}.context_weight"]), (batch, 1, d))
    u = add(h, projected)
    flat = reshape(u, (batch * length, d))
    hidden = tanh(linear(flat, weights[f"{base}.hidden_weight"], weights[f"{base}.hidden_bias"]))
    out = linear(hidden, weights[f"{base}.out_weight"], weights[f"{base}.out_bias"])
    normed = layer_norm(add(flat, out), weights[f"{base}.norm"], weights[f"{base}.norm_bias"])
    return reshape(normed, (batch, length, d))


def backbone_logits(
    inputs: Tensor,
    pad_mask: np.ndarray,
    mask_index: np.ndarray,
    weights: dict[str, Tensor],
    spec: BackboneSpec,
) -> Tensor:
    """
    :param inputs: (B, L, d) input embeddings, positions not yet added
    :param pad_mask: (B, L), 1 at real positions
    :param mask_index: (B,) position of [MASK] in each row
    :return: (B, V) logits at the mask positions
    """
    batch, length, _ = inputs.shape
    if length > spec.max_seq_len:
        raise ContractError(f"sequence of {length} positions exceeds max_seq_len {spec.max_seq_len}")
    positions = embedding(weights[POSITION_EMBEDDING], np.arange(length))
    h = add(inputs, positions)
    for layer in range(spec.depth):
        h = mixing_layer(h, pad_mask, weights, layer)
    at_mask = getitem(h, (np.arange(batch), np.asarray(mask_index, dtype=np.int64)))
    return add(matmul(at_mask, transpose(weights[TOKEN_EMBEDDING])), weights[OUTPUT_BIAS])
