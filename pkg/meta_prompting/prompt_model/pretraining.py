import logging
from typing import Sequence

import numpy as np
from tqdm import tqdm

from meta_prompting.autodiff import cross_entropy, grad
from meta_prompting.meta_opt.optimizers import AdamW
from meta_prompting.params import ParamSet, Partition
from meta_prompting.prompt_model.model import PromptModel
from meta_prompting.prompt_model.template import PromptTemplate, parse_template
from meta_prompting.utils import progress_enabled

logger = logging.getLogger(__name__)

PLAIN_TEMPLATE = "[CLS] {x} [MASK] [SEP]"


def plain_template(model: PromptModel) -> PromptTemplate:
    return parse_template(PLAIN_TEMPLATE, model.vocab)


def pretrain_backbone(
    model: PromptModel,
    params: ParamSet,
    texts: Sequence[Sequence[int]],
    answer_ids: Sequence[int],
    steps: int,
    lr: float,
    batch_size: int,
    rng: np.random.Generator,
) -> ParamSet:
    """
    Masked-token pretraining of the backbone: predict each text's answer
    token at the mask of a plain ``[CLS] {x} [MASK] [SEP]`` prompt with a
    softmax over the whole vocabulary. Only backbone tensors change.

    :param texts: tokenized source-split texts
    :param answer_ids: vocabulary id to predict for each text
    """
    if steps == 0 or not texts:
        return params
    template = plain_template(model)
    answer_ids = np.asarray(answer_ids, dtype=np.int64)
    optimizer = AdamW(lr_backbone=lr, lr_prompt=0.0, weight_decay=0.01)
    working = params.with_trainable([Partition.BACKBONE])
    state = optimizer.init_state(working)
    names = working.trainable_names()
    logger.info(f"Pretraining backbone for {steps} steps on {len(texts)} texts")
    for _ in tqdm(range(steps), desc="pretrain backbone", disable=not progress_enabled(), leave=False):
        batch = rng.choice(len(texts), size=min(batch_size, len(texts)), replace=False)
        leaves = working.as_leaves(names)
        logits = model.forward(leaves, template, [texts[i] for i in batch])
        loss = cross_entropy(logits, answer_ids[batch])
        grads = grad(loss, [leaves[n] for n in names])
        working, state = optimizer.apply(working, {n: g.data for n, g in zip(names, grads)}, state)
    logger.debug(f"Backbone pretraining finished, last batch loss {loss.item():.4f}")
    return ParamSet(dict(working.items()), working.partitions, params.trainable)
