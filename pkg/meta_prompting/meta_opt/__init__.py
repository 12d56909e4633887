from meta_prompting.meta_opt.algorithms import (
    ALGORITHMS,
    FOMAML,
    MAML,
    MSLB,
    REPTILE,
    MetaGradient,
    interpolate,
    maml_meta_gradient_hvp,
    meta_gradient_fomaml,
    meta_gradient_maml,
    meta_gradient_mslb,
    reptile_target,
    reptile_update,
)
from meta_prompting.meta_opt.inner import InnerLoopConfig, adapt, unroll
from meta_prompting.meta_opt.optimizers import (
    SGD,
    AdamW,
    ConstantSchedule,
    LinearWarmupDecay,
    Optimizer,
    OptimizerState,
    build_optimizer,
)
from meta_prompting.meta_opt.outer import (
    MetaUpdateConfig,
    OuterStepResult,
    map_episodes,
    outer_step,
    sum_in_order,
)
from meta_prompting.meta_opt.tasks import MetaTask, PromptTask, QuadraticTask, evaluate_query

__all__ = [
    "ALGORITHMS",
    "AdamW",
    "ConstantSchedule",
    "FOMAML",
    "InnerLoopConfig",
    "LinearWarmupDecay",
    "MAML",
    "MSLB",
    "MetaGradient",
    "MetaTask",
    "MetaUpdateConfig",
    "Optimizer",
    "OptimizerState",
    "OuterStepResult",
    "PromptTask",
    "QuadraticTask",
    "REPTILE",
    "SGD",
    "adapt",
    "build_optimizer",
    "evaluate_query",
    "interpolate",
    "maml_meta_gradient_hvp",
    "map_episodes",
    "meta_gradient_fomaml",
    "meta_gradient_maml",
    "meta_gradient_mslb",
    "outer_step",
    "reptile_target",
    "reptile_update",
    "sum_in_order",
    "unroll",
]
