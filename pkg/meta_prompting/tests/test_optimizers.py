import numpy as np
import pytest

from meta_prompting.autodiff import Tensor
from meta_prompting.lib.configuration.run_config import MetaConfig
from meta_prompting.meta_opt import SGD, AdamW, LinearWarmupDecay, OptimizerState, build_optimizer
from meta_prompting.models.exceptions import ContractError
from meta_prompting.params import ParamSet, Partition


@pytest.fixture
def params():
    return ParamSet(
        {
            "backbone.weight": Tensor(np.array([1.0, -2.0])),
            "backbone.bias": Tensor(np.array([0.5])),
            "backbone.layer_norm": Tensor(np.array([1.0])),
            "prompt.soft_embedding": Tensor(np.array([[0.3, -0.3]])),
        },
        {
            "backbone.weight": Partition.BACKBONE,
            "backbone.bias": Partition.BACKBONE,
            "backbone.layer_norm": Partition.BACKBONE,
            "prompt.soft_embedding": Partition.PROMPT,
        },
    )


def ones_like(params):
    return {name: np.ones(t.shape) for name, t in params.items()}


def test_sgd_step_is_exact(params):
    optimizer = SGD(lr_backbone=0.1, lr_prompt=0.5)
    grads = {"backbone.weight": np.array([1.0, 2.0]), "prompt.soft_embedding": np.array([[2.0, -4.0]])}
    new, state = optimizer.apply(params, grads, OptimizerState())
    np.testing.assert_allclose(new["backbone.weight"].data, [0.9, -2.2])
    np.testing.assert_allclose(new["prompt.soft_embedding"].data, [[-0.7, 1.7]])
    assert new["backbone.bias"] is params["backbone.bias"]
    assert state.step == 1


def test_first_adamw_step_moves_by_the_learning_rate(params):
    optimizer = AdamW(lr_backbone=0.01, lr_prompt=0.02, weight_decay=0.0)
    grads = {"backbone.weight": np.array([3.0, -0.5]), "prompt.soft_embedding": np.array([[-7.0, 1e-3]])}
    new, state = optimizer.apply(params, grads, optimizer.init_state(params))
    np.testing.assert_allclose(new["backbone.weight"].data - params["backbone.weight"].data, [-0.01, 0.01], rtol=1e-6)
    np.testing.assert_allclose(
        new["prompt.soft_embedding"].data - params["prompt.soft_embedding"].data, [[0.02, -0.02]], rtol=1e-4
    )
    assert set(state.moments) == {"m.backbone.weight", "v.backbone.weight", "m.prompt.soft_embedding", "v.prompt.soft_embedding"}


def test_weight_decay_skips_biases_norms_and_the_prompt(params):
    optimizer = SGD(lr_backbone=0.1, lr_prompt=0.1, weight_decay=0.5)
    zeros = {name: np.zeros(t.shape) for name, t in params.items()}
    new, _ = optimizer.apply(params, zeros, OptimizerState())
    np.testing.assert_allclose(new["backbone.weight"].data, params["backbone.weight"].data * 0.95)
    for name in ("backbone.bias", "backbone.layer_norm", "prompt.soft_embedding"):
        np.testing.assert_array_equal(new[name].data, params[name].data)


def test_frozen_partition_is_untouched(params):
    frozen = params.with_trainable([Partition.PROMPT])
    new, _ = AdamW(0.1, 0.1).apply(frozen, ones_like(frozen), OptimizerState())
    for name in frozen.names_in([Partition.BACKBONE]):
        assert new[name] is frozen[name]
    assert not np.array_equal(new["prompt.soft_embedding"].data, frozen["prompt.soft_embedding"].data)


def test_state_threads_through_steps(params):
    optimizer = AdamW(0.01, 0.01)
    state = OptimizerState()
    _, first = optimizer.apply(params, ones_like(params), state)
    assert state.step == 0 and not state.moments
    _, second = optimizer.apply(params, ones_like(params), first)
    assert second.step == 2
    assert not second.equals(first)
    assert first.copy().equals(first)


def test_unknown_gradient_name_is_rejected(params):
    with pytest.raises(ContractError):
        SGD(0.1, 0.1).apply(params, {"backbone.missing": np.zeros(1)}, OptimizerState())


def test_flat_gradient_is_split_by_name(params):
    optimizer = SGD(1.0, 1.0)
    flat = np.arange(params.num_params, dtype=float)
    new, _ = optimizer.apply_flat(params, flat, OptimizerState())
    np.testing.assert_allclose(new.flat(), params.flat() - flat)


def test_linear_warmup_then_decay():
    schedule = LinearWarmupDecay(warmup_steps=2, total_steps=10)
    factors = [schedule.factor(step) for step in (0, 1, 2, 6, 10, 12)]
    np.testing.assert_allclose(factors, [1 / 3, 2 / 3, 1.0, 0.5, 0.0, 0.0])


def test_schedule_scales_the_step(params):
    optimizer = SGD(1.0, 1.0, schedule=LinearWarmupDecay(warmup_steps=1, total_steps=4))
    new, _ = optimizer.apply(params, ones_like(params), OptimizerState())
    np.testing.assert_allclose(new.flat(), params.flat() - 0.5)


def test_build_optimizer_from_config():
    assert isinstance(build_optimizer(MetaConfig()), AdamW)
    sgd = build_optimizer(MetaConfig(optimizer="sgd", lr_prompt=0.3))
    assert isinstance(sgd, SGD)
    assert sgd.groups[Partition.PROMPT].lr == 0.3
    assert isinstance(build_optimizer(MetaConfig(schedule="linear"), total_steps=50).schedule, LinearWarmupDecay)
    with pytest.raises(ContractError):
        build_optimizer(MetaConfig(schedule="linear"))
