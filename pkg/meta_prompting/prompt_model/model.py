import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from meta_prompting.autodiff import Tensor, embedding, matmul, mul, no_grad, reshape
from meta_prompting.models.exceptions import ContractError
from meta_prompting.params import ParamSet, Partition
from meta_prompting.prompt_model.backbone import BackboneSpec, backbone_logits, init_backbone
from meta_prompting.prompt_model.encoder import SOFT_EMBEDDING, EncoderSpec, encode_soft_prompts, init_encoder
from meta_prompting.prompt_model.template import PromptTemplate, RenderedPrompt, render_prompt
from meta_prompting.prompt_model.verbalizer import Verbalizer, label_loss, label_probs, predict_labels
from meta_prompting.prompt_model.vocab import Vocab

CHECKPOINT_FORMAT = "meta-prompting/prompt-model"


@dataclass(frozen=True)
class PromptBatch:
    """Rendered prompts padded to a common length."""

    token_ids: np.ndarray  # (B, L)
    soft_onehot: np.ndarray  # (B, L, m)
    text_mask: np.ndarray  # (B, L, 1), 0 at soft positions
    pad_mask: np.ndarray  # (B, L)
    mask_index: np.ndarray  # (B,)

    @property
    def size(self) -> int:
        return int(self.token_ids.shape[0])


class PromptModel:
    """
    The prompt-based classifier: vocabulary, backbone spec and prompt-encoder
    spec. Holds no parameters; every call takes an immutable ParamSet.
    """

    def __init__(self, vocab: Vocab, backbone: BackboneSpec, encoder: EncoderSpec):
        self.logger = logging.getLogger(__name__)
        self.logger.debug(f"Initializing PromptModel ({len(vocab)} tokens, {encoder.num_soft} soft tokens)")
        if backbone.vocab_size != len(vocab):
            raise ContractError(f"backbone built for {backbone.vocab_size} tokens, vocabulary has {len(vocab)}")
        if backbone.embed_dim != encoder.embed_dim:
            raise ContractError("prompt encoder and backbone disagree on the embedding dimension")
        self.vocab = vocab
        self.backbone = backbone
        self.encoder = encoder

    @classmethod
    def build(
        cls,
        vocab: Vocab,
        num_soft: int,
        embed_dim: int = 16,
        hidden_dim: int = 32,
        depth: int = 1,
        encoder_hidden: int = 8,
        max_seq_len: int = 32,
        seed: int = 0,
    ) -> "PromptModel":
        backbone = BackboneSpec(len(vocab), embed_dim, hidden_dim, depth, max_seq_len, seed)
        return cls(vocab, backbone, EncoderSpec(max(num_soft, 1), embed_dim, encoder_hidden))

    def with_num_soft(self, num_soft: int) -> "PromptModel":
        encoder = EncoderSpec(max(num_soft, 1), self.encoder.embed_dim, self.encoder.hidden_dim)
        return PromptModel(self.vocab, self.backbone, encoder)

    def spec_hash(self) -> str:
        """Identifies the architecture and vocabulary a parameter set belongs to."""
        payload = json.dumps(
            {
                "format": CHECKPOINT_FORMAT,
                "backbone": asdict(self.backbone),
                "encoder": asdict(self.encoder),
                "vocab": self.vocab.fingerprint(),
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def init_params(self, rng: np.random.Generator, freeze_backbone: bool = False) -> ParamSet:
        """Backbone from the spec's own seed; prompt partition drawn from ``rng``."""
        tensors: dict[str, Tensor] = {}
        partitions: dict[str, Partition] = {}
        for name, value in init_backbone(self.backbone).items():
            tensors[name] = Tensor(value, name=name)
            partitions[name] = Partition.BACKBONE
        for name, value in init_encoder(self.encoder, rng).items():
            tensors[name] = Tensor(value, name=name)
            partitions[name] = Partition.PROMPT
        return ParamSet(tensors, partitions, {Partition.BACKBONE: not freeze_backbone, Partition.PROMPT: True})

    def reinit_prompt(self, params: ParamSet, rng: np.random.Generator) -> ParamSet:
        """Fresh prompt partition, backbone kept."""
        return params.replace({n: Tensor(v) for n, v in init_encoder(self.encoder, rng).items()})

    def check_params(self, params: ParamSet) -> None:
        expected = {**self.backbone.shapes(), **self.encoder.shapes()}
        if params.shapes() != expected:
            raise ContractError("parameter set does not match the prompt model's architecture")

    def render(self, template: PromptTemplate, texts: Sequence[Sequence[int]]) -> PromptBatch:
        if not texts:
            raise ContractError("forward needs a non-empty batch")
        if template.num_soft > self.encoder.num_soft:
            raise ContractError(
                f"template uses {template.num_soft} soft tokens, encoder has {self.encoder.num_soft}"
            )
        rendered: list[RenderedPrompt] = [
            render_prompt(template, text, self.vocab, self.backbone.max_seq_len) for text in texts
        ]
        batch, length, m = len(rendered), max(len(r) for r in rendered), self.encoder.num_soft
        token_ids = np.full((batch, length), self.vocab.pad_id, dtype=np.int64)
        soft_onehot = np.zeros((batch, length, m))
        text_mask = np.zeros((batch, length, 1))
        pad_mask = np.zeros((batch, length))
        mask_index = np.zeros(batch, dtype=np.int64)
        for b, r in enumerate(rendered):
            n = len(r)
            token_ids[b, :n] = r.token_ids
            pad_mask[b, :n] = 1.0
            mask_index[b] = r.mask_index
            for pos, s in enumerate(r.soft_index):
                if s >= 0:
                    soft_onehot[b, pos, s] = 1.0
                else:
                    text_mask[b, pos, 0] = 1.0
        return PromptBatch(token_ids, soft_onehot, text_mask, pad_mask, mask_index)

    def forward(self, params: ParamSet, template: PromptTemplate, texts: Sequence[Sequence[int]]) -> Tensor:
        """(B, |V|) logits at the mask position of each prompt."""
        batch = self.render(template, texts)
        weights = dict(params.items())
        b, length, m = batch.soft_onehot.shape
        d = self.backbone.embed_dim
        tokens = embedding(weights["backbone.token_embedding"], batch.token_ids)
        inputs = mul(tokens, Tensor(batch.text_mask))
        if template.num_soft:
            encoded = encode_soft_prompts(weights[SOFT_EMBEDDING], weights, self.encoder)
            soft = matmul(Tensor(batch.soft_onehot.reshape(b * length, m)), encoded)
            inputs = inputs + reshape(soft, (b, length, d))
        return backbone_logits(inputs, batch.pad_mask, batch.mask_index, weights, self.backbone)

    def label_probs(
        self,
        params: ParamSet,
        template: PromptTemplate,
        verbalizer: Verbalizer,
        texts: Sequence[Sequence[int]],
    ) -> Tensor:
        return label_probs(self.forward(params, template, texts), verbalizer)

    def task_loss(
        self,
        params: ParamSet,
        template: PromptTemplate,
        verbalizer: Verbalizer,
        texts: Sequence[Sequence[int]],
        labels: Sequence[int],
    ) -> Tensor:
        """Mean negative log label-renormalized probability of the gold labels."""
        if len(texts) != len(labels):
            raise ContractError(f"{len(texts)} texts but {len(labels)} labels")
        return label_loss(self.forward(params, template, texts), verbalizer, labels)

    def predict(
        self,
        params: ParamSet,
        template: PromptTemplate,
        verbalizer: Verbalizer,
        texts: Sequence[Sequence[int]],
    ) -> np.ndarray:
        with no_grad():
            probs = self.label_probs(params, template, verbalizer, texts)
        return predict_labels(probs.data)

    def accuracy(
        self,
        params: ParamSet,
        template: PromptTemplate,
        verbalizer: Verbalizer,
        texts: Sequence[Sequence[int]],
        labels: Sequence[int],
    ) -> float:
        predictions = self.predict(params, template, verbalizer, texts)
        return float(np.mean(predictions == np.asarray(labels)))
