"""
Meta-training with validation-based early stopping, and the supervised
"pretrain" initialization it is compared against.
"""

import logging
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from tqdm import tqdm

from meta_prompting.autodiff import grad, no_grad
from meta_prompting.episodes import Episode
from meta_prompting.harness.experiment import Experiment
from meta_prompting.lib.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from meta_prompting.lib.configuration.run_config import RunConfig
from meta_prompting.meta_opt import (
    AdamW,
    InnerLoopConfig,
    MetaUpdateConfig,
    OptimizerState,
    adapt,
    build_optimizer,
    map_episodes,
    outer_step,
)
from meta_prompting.models.run_metrics import EpochRecord, RunMetrics
from meta_prompting.params import ParamSet
from meta_prompting.utils import derive_seed, progress_enabled

logger = logging.getLogger(__name__)

LAST_CHECKPOINT = "last.ckpt"
BEST_CHECKPOINT = "best.ckpt"
PRETRAIN_CHECKPOINT = "pretrain.ckpt"


@dataclass
class TrainingResult:
    params: ParamSet
    metrics: RunMetrics
    optimizer_state: OptimizerState
    stopped_early: bool = False


def validate(
    params: ParamSet,
    experiment: Experiment,
    episodes: Sequence[Episode],
    cfg: InnerLoopConfig,
    template: Optional[str] = None,
) -> tuple[float, float]:
    """Mean query loss and accuracy after adapting on each episode's support set."""
    tasks = [experiment.task(e, template) for e in episodes]
    traces = map_episodes(lambda i, task: adapt(params, task, cfg)[1], tasks, experiment.workers)
    loss = float(np.mean([t.final_query_loss for t in traces]))
    accuracy = float(np.mean([t.final_query_accuracy for t in traces]))
    return loss, accuracy


def steps_per_epoch(config: RunConfig) -> int:
    return max(1, config.train.episodes_per_epoch // config.meta.meta_batch_size)


def _history_to_extra(history: list[EpochRecord]) -> list[dict]:
    return [
        {
            "epoch": r.epoch,
            "train_loss": r.train_loss,
            "val_loss": r.val_loss,
            "val_accuracy": r.val_accuracy,
            "improved": r.improved,
        }
        for r in history
    ]


def meta_train(
    config: RunConfig,
    experiment: Optional[Experiment] = None,
    init: Optional[ParamSet] = None,
    template: Optional[str] = None,
    checkpoint_dir: Optional[str] = None,
    resume: Optional[str] = None,
) -> TrainingResult:
    """
    Epochs of outer steps over episodes drawn from the training pool, each
    followed by a validation pass. Returns the best-validation snapshot;
    training stops once validation accuracy has not improved for
    ``train.patience`` epochs.

    :param init: starting parameters (default: the experiment's random init)
    :param checkpoint_dir: where ``last.ckpt`` / ``best.ckpt`` are written after every epoch
    :param resume: a ``last.ckpt`` to continue from; its sibling ``best.ckpt`` restores the best snapshot
    """
    experiment = experiment or Experiment(config)
    model = experiment.model
    params = init if init is not None else experiment.random_init()
    model.check_params(params)
    train_cfg = config.train
    update_cfg = MetaUpdateConfig.from_config(config)
    optimizer = build_optimizer(config.meta, total_steps=steps_per_epoch(config) * train_cfg.max_epochs)
    state = optimizer.init_state(params)
    rng = np.random.default_rng(derive_seed(experiment.seed, "meta-train"))

    history: list[EpochRecord] = []
    best_params, best_accuracy, best_epoch, bad_epochs = params, -np.inf, None, 0
    start_epoch = 0
    if resume is not None:
        checkpoint = load_checkpoint(resume, model.spec_hash())
        params, state, start_epoch = checkpoint.params, checkpoint.optimizer_state, checkpoint.epoch
        if checkpoint.rng_state is not None:
            rng.bit_generator.state = checkpoint.rng_state
        extra = checkpoint.extra
        history = [EpochRecord(**r) for r in extra.get("history", [])]
        bad_epochs = extra.get("bad_epochs", 0)
        best_epoch = extra.get("best_epoch")
        best_accuracy = extra["best_val_accuracy"] if extra.get("best_val_accuracy") is not None else -np.inf
        best_path = os.path.join(os.path.dirname(os.path.abspath(resume)), BEST_CHECKPOINT)
        best_params = load_checkpoint(best_path, model.spec_hash()).params if os.path.exists(best_path) else params
        logger.info(f"Resuming meta-training at epoch {start_epoch}")

    train_pool = experiment.pool("train")
    val_episodes = experiment.pool("val").head(train_cfg.val_episodes)
    stopped_early = bad_epochs >= train_cfg.patience
    epochs = range(start_epoch, train_cfg.max_epochs)
    for epoch in tqdm(epochs, desc=f"meta-train ({update_cfg.algorithm})", disable=not progress_enabled()):
        if stopped_early:
            break
        losses = []
        for _ in range(steps_per_epoch(config)):
            tasks = [experiment.task(e, template) for e in train_pool.draw(config.meta.meta_batch_size, rng)]
            step = outer_step(params, tasks, update_cfg, optimizer, state, experiment.workers, epoch)
            params, state = step.params, step.state
            losses.append(step.mean_query_loss)
        val_loss, val_accuracy = validate(params, experiment, val_episodes, update_cfg.inner, template)
        improved = val_accuracy > best_accuracy
        if improved:
            best_params, best_accuracy, best_epoch, bad_epochs = params, val_accuracy, epoch, 0
        else:
            bad_epochs += 1
        history.append(EpochRecord(epoch, float(np.mean(losses)), val_loss, val_accuracy, improved))
        logger.info(
            f"Epoch {epoch}: train query loss {history[-1].train_loss:.4f}, "
            f"val accuracy {val_accuracy:.4f}{' (best)' if improved else ''}"
        )
        stopped_early = bad_epochs >= train_cfg.patience

        if checkpoint_dir is not None:
            extra = {
                "history": _history_to_extra(history),
                "bad_epochs": bad_epochs,
                "best_epoch": best_epoch,
                "best_val_accuracy": None if best_epoch is None else best_accuracy,
                "algorithm": update_cfg.algorithm,
            }
            save_checkpoint(
                Checkpoint(params, model.spec_hash(), state, rng.bit_generator.state, epoch + 1, extra),
                os.path.join(checkpoint_dir, LAST_CHECKPOINT),
            )
            if improved:
                save_checkpoint(
                    Checkpoint(best_params, model.spec_hash(), state, None, epoch + 1, {"best_epoch": epoch}),
                    os.path.join(checkpoint_dir, BEST_CHECKPOINT),
                )
        if stopped_early:
            logger.info(f"No validation improvement for {bad_epochs} epochs, stopping after epoch {epoch}")

    metrics = RunMetrics(epochs=history, best_epoch=best_epoch)
    return TrainingResult(best_params, metrics, state, stopped_early)


def pretrain_init(
    config: RunConfig,
    experiment: Optional[Experiment] = None,
    template: Optional[str] = None,
) -> ParamSet:
    """
    Plain supervised prompt tuning on every training-split example (all
    training labels at once, no episodes, no meta objective), starting from
    the random init.
    """
    experiment = experiment or Experiment(config)
    params = experiment.random_init()
    steps = config.train.pretrain_init_steps
    if steps == 0:
        return params
    model = experiment.model
    prompt = experiment.template(template)
    train_labels = experiment.splits.train
    verbalizer = experiment.verbalizer.restrict(train_labels)
    local = {label: i for i, label in enumerate(train_labels)}
    examples = experiment.corpus.examples_of(train_labels)
    texts = [e.tokens for e in examples]
    labels = np.asarray([local[e.label] for e in examples], dtype=np.int64)

    optimizer = AdamW(
        lr_backbone=config.meta.lr_backbone,
        lr_prompt=config.train.pretrain_init_lr,
        weight_decay=config.meta.weight_decay,
        betas=(config.meta.beta1, config.meta.beta2),
        eps=config.meta.eps,
    )
    state = optimizer.init_state(params)
    rng = np.random.default_rng(derive_seed(experiment.seed, "pretrain-init"))
    names = params.trainable_names()
    batch_size = min(config.train.pretrain_init_batch_size, len(texts))
    logger.info(f"Pretraining the initialization for {steps} steps on {len(texts)} examples")
    for _ in tqdm(range(steps), desc="pretrain init", disable=not progress_enabled(), leave=False):
        batch = rng.choice(len(texts), size=batch_size, replace=False)
        leaves = params.as_leaves(names)
        loss = model.task_loss(leaves, prompt, verbalizer, [texts[i] for i in batch], labels[batch])
        grads = grad(loss, [leaves[n] for n in names])
        params, state = optimizer.apply(params, {n: g.data for n, g in zip(names, grads)}, state)
    return params.detached()


def source_loss(params: ParamSet, experiment: Experiment, template: Optional[str] = None) -> float:
    """Supervised loss over all training-split examples, as minimized by ``pretrain_init``."""
    train_labels = experiment.splits.train
    local = {label: i for i, label in enumerate(train_labels)}
    examples = experiment.corpus.examples_of(train_labels)

    with no_grad():
        loss = experiment.model.task_loss(
            params,
            experiment.template(template),
            experiment.verbalizer.restrict(train_labels),
            [e.tokens for e in examples],
            [local[e.label] for e in examples],
        )
    return loss.item()
