"""
Gradient oracle suites run by the ``gradcheck`` subcommand.

Each suite compares an analytic quantity against an independent oracle
(central finite differences or a closed form) over randomized instances and
reports the largest relative error it saw.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from meta_prompting.autodiff import (
    Tensor,
    add,
    broadcast_to,
    concat,
    cross_entropy,
    div,
    embedding,
    exp,
    getitem,
    grad,
    hvp,
    log,
    log_softmax,
    logsumexp,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    numerical_gradient,
    relative_error,
    relu,
    reshape,
    scatter,
    sigmoid,
    softmax,
    stack,
    sub,
    sum_to,
    tanh,
    transpose,
    tsum,
)
from meta_prompting.episodes import GeneratorSpec, SplitSpec, SyntheticGenerator, sample_episode
from meta_prompting.meta_opt import (
    InnerLoopConfig,
    PromptTask,
    QuadraticTask,
    adapt,
    maml_meta_gradient_hvp,
    meta_gradient_fomaml,
    meta_gradient_maml,
    meta_gradient_mslb,
    reptile_update,
)
from meta_prompting.params import ParamSet, Partition
from meta_prompting.prompt_model import PromptModel, Verbalizer, parse_template

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
FIRST_ORDER_TOLERANCE = 1e-6
SECOND_ORDER_TOLERANCE = 1e-4
ANALYTIC_TOLERANCE = 1e-10
TINY_TEMPLATE = "[CLS] {x} {soft:2} [MASK] [SEP]"


@dataclass
class OracleResult:
    name: str
    instances: int
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


@dataclass
class GradcheckReport:
    results: list[OracleResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def max_error(self) -> float:
        return max((r.max_error for r in self.results), default=0.0)

    def lines(self) -> list[str]:
        out = [f"{'suite':<28} {'instances':>9} {'max rel. error':>15} {'tolerance':>10}  status"]
        for r in self.results:
            status = "ok" if r.passed else "FAIL"
            out.append(f"{r.name:<28} {r.instances:>9} {r.max_error:>15.3e} {r.tolerance:>10.0e}  {status}")
        out.append(f"max relative error {self.max_error:.3e}")
        return out


def _normal(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.normal(size=shape)


def _positive(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.uniform(0.5, 2.0, size=shape)


def _away_from_zero(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.1, 1.0, size=shape)


@dataclass(frozen=True)
class Primitive:
    name: str
    fn: Callable[..., Tensor]
    shapes: tuple[tuple[int, ...], ...]
    samplers: tuple[Callable, ...] = ()

    def sample(self, rng: np.random.Generator) -> list[np.ndarray]:
        samplers = self.samplers or (_normal,) * len(self.shapes)
        return [sampler(rng, shape) for sampler, shape in zip(samplers, self.shapes)]


PRIMITIVES: tuple[Primitive, ...] = (
    Primitive("add", add, ((3, 4), (4,))),
    Primitive("sub", sub, ((3, 4), (3, 1))),
    Primitive("mul", mul, ((2, 3), (2, 3))),
    Primitive("div", div, ((2, 3), (2, 3)), (_normal, _positive)),
    Primitive("neg", neg, ((5,),)),
    Primitive("matmul", matmul, ((3, 4), (4, 2))),
    Primitive("transpose", transpose, ((3, 4),)),
    Primitive("reshape", lambda a: reshape(a, (6, 2)), ((3, 4),)),
    Primitive("sum", lambda a: tsum(a, axis=1), ((3, 4),)),
    Primitive("mean", lambda a: mean(a, axis=0, keepdims=True), ((3, 4),)),
    Primitive("exp", exp, ((4,),)),
    Primitive("log", log, ((4,),), (_positive,)),
    Primitive("tanh", tanh, ((4,),)),
    Primitive("sigmoid", sigmoid, ((4,),)),
    Primitive("relu", relu, ((6,),), (_away_from_zero,)),
    Primitive("getitem", lambda a: getitem(a, (np.array([0, 2, 2]), slice(None))), ((3, 4),)),
    Primitive("scatter", lambda v: scatter(v, np.array([1, 1, 3]), (5,)), ((3,),)),
    Primitive("concat", lambda a, b: concat([a, b], axis=1), ((2, 3), (2, 2))),
    Primitive("stack", lambda a, b: stack([a, b], axis=0), ((3,), (3,))),
    Primitive("broadcast_to", lambda a: broadcast_to(a, (4, 3)), ((1, 3),)),
    Primitive("sum_to", lambda a: sum_to(a, (1, 3)), ((4, 3),)),
    Primitive("logsumexp", lambda a: logsumexp(a, axis=-1), ((3, 5),)),
    Primitive("log_softmax", log_softmax, ((3, 5),)),
    Primitive("softmax", softmax, ((3, 5),)),
    Primitive("cross_entropy", lambda a: cross_entropy(a, [0, 2, 1]), ((3, 4),)),
    Primitive("embedding", lambda t: embedding(t, np.array([[0, 2], [2, 1]])), ((3, 4),)),
)


def primitive_error(primitive: Primitive, rng: np.random.Generator) -> float:
    """Max relative error of every input's gradient of sum(w * op(inputs)) against central differences."""
    arrays = primitive.sample(rng)
    weight = Tensor(rng.normal(size=primitive.fn(*[Tensor(a) for a in arrays]).shape))

    def scalar(*tensors: Tensor) -> Tensor:
        return tsum(mul(primitive.fn(*tensors), weight))

    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    analytic = grad(scalar(*leaves), leaves)
    worst = 0.0
    for i, array in enumerate(arrays):

        def f(x: np.ndarray, i: int = i) -> float:
            args = [Tensor(a) for a in arrays]
            args[i] = Tensor(x.reshape(array.shape))
            return scalar(*args).item()

        numeric = numerical_gradient(f, array.reshape(-1), FD_STEP)
        worst = max(worst, relative_error(analytic[i].data, numeric))
    return worst


def check_primitives(rng: np.random.Generator, instances: int) -> OracleResult:
    worst = 0.0
    for _ in range(instances):
        for primitive in PRIMITIVES:
            error = primitive_error(primitive, rng)
            if error >= FIRST_ORDER_TOLERANCE:
                logger.warning(f"{primitive.name}: relative gradient error {error:.3e}")
            worst = max(worst, error)
    return OracleResult("primitives vs FD", instances * len(PRIMITIVES), worst, FIRST_ORDER_TOLERANCE)


def _composition_params(rng: np.random.Generator) -> ParamSet:
    tensors = {"x": Tensor(rng.normal(size=3)), "w": Tensor(rng.normal(size=(2, 3)))}
    return ParamSet(tensors, {"x": Partition.PROMPT, "w": Partition.PROMPT})


COMPOSITIONS: tuple[Callable[[ParamSet], Tensor], ...] = (
    lambda p: logsumexp(matmul(p["w"], p["x"])) + tsum(sigmoid(p["x"]) * p["x"]),
    lambda p: tsum(tanh(matmul(p["w"], p["x"])) * exp(0.3 * getitem(p["x"], slice(0, 2)))),
    lambda p: cross_entropy(matmul(reshape(p["x"], (1, 3)), transpose(p["w"])), [1]),
    lambda p: tsum(log(1.0 + p["x"] * p["x"])) / (1.5 + tsum(p["w"] * p["w"])),
)


def flat_gradient(loss_fn: Callable[[ParamSet], Tensor], params: ParamSet) -> np.ndarray:
    leaves = params.as_leaves(params.names())
    grads = grad(loss_fn(leaves), [leaves[n] for n in leaves.names()])
    return leaves.flat_from(dict(zip(leaves.names(), grads)))


def hvp_error(loss_fn: Callable[[ParamSet], Tensor], params: ParamSet, vector: np.ndarray) -> float:
    """``hvp`` against central differences of the gradient along ``vector``."""
    x = params.flat()
    plus = flat_gradient(loss_fn, params.from_flat(x + FD_STEP * vector))
    minus = flat_gradient(loss_fn, params.from_flat(x - FD_STEP * vector))
    return relative_error(hvp(loss_fn, params, vector), (plus - minus) / (2 * FD_STEP))


def check_second_order(rng: np.random.Generator, instances: int) -> OracleResult:
    worst = 0.0
    for _ in range(instances):
        for loss_fn in COMPOSITIONS:
            params = _composition_params(rng)
            worst = max(worst, hvp_error(loss_fn, params, rng.normal(size=params.num_params)))
    return OracleResult("hvp vs FD of gradient", instances * len(COMPOSITIONS), worst, SECOND_ORDER_TOLERANCE)


def quadratic_maml_gradient(phi0: float, a: float, b: float, lr: float, steps: int) -> float:
    """
    d/dphi0 of (phi_k - b)^2 where phi_k follows k gradient steps on
    (phi - a)^2: phi_k = a + (phi0 - a)(1 - 2 lr)^k.
    """
    contraction = (1.0 - 2.0 * lr) ** steps
    phi_k = a + (phi0 - a) * contraction
    return 2.0 * (phi_k - b) * contraction


def scalar_params(value: float = 0.0) -> ParamSet:
    return ParamSet({"phi": Tensor(np.array([value]))}, {"phi": Partition.PROMPT})


def analytic_quadratic_errors(
    phi0: float = 0.0, a: float = 1.0, b: float = -1.0, lr: float = 0.1, epsilon: float = 0.5
) -> dict[str, float]:
    """Absolute error of each algorithm's update against its closed form on the scalar quadratic family."""
    params = scalar_params(phi0)
    task = QuadraticTask(a, b)
    one_step = InnerLoopConfig(1, lr)
    two_steps = InnerLoopConfig(2, lr)
    adapted = a + (phi0 - a) * (1.0 - 2.0 * lr)
    expected = {
        "maml": quadratic_maml_gradient(phi0, a, b, lr, 1),
        "maml-hvp": quadratic_maml_gradient(phi0, a, b, lr, 1),
        "fomaml": 2.0 * (adapted - b),
        "reptile": (1.0 - epsilon) * phi0 + epsilon * adapted,
        "mslb": 0.5 * quadratic_maml_gradient(phi0, a, b, lr, 1) + 0.5 * quadratic_maml_gradient(phi0, a, b, lr, 2),
    }
    found = {
        "maml": meta_gradient_maml(params, task, one_step).flat[0],
        "maml-hvp": maml_meta_gradient_hvp(params, task, one_step)[0],
        "fomaml": meta_gradient_fomaml(params, task, one_step).flat[0],
        "reptile": reptile_update(params, task, one_step, epsilon)["phi"].data[0],
        "mslb": meta_gradient_mslb(params, task, two_steps, (0.5, 0.5)).flat[0],
    }
    return {name: abs(float(found[name]) - expected[name]) for name in expected}


def check_analytic(rng: np.random.Generator, instances: int) -> OracleResult:
    """The worked example first, then random points of the same family."""
    worst = max(analytic_quadratic_errors().values())
    for _ in range(instances - 1):
        phi0, a, b = rng.uniform(-2.0, 2.0, size=3)
        worst = max(worst, *analytic_quadratic_errors(phi0, a, b, lr=float(rng.uniform(0.01, 0.3))).values())
    return OracleResult("meta-updates vs closed form", max(instances, 1), worst, ANALYTIC_TOLERANCE)


@dataclass
class TinyPromptProblem:
    model: PromptModel
    params: ParamSet
    task: PromptTask


def tiny_prompt_problem(rng: np.random.Generator) -> TinyPromptProblem:
    """A 2-way 1-shot episode over a few-word synthetic corpus and a prompt model with a few hundred parameters."""
    generator = SyntheticGenerator(
        GeneratorSpec(num_labels=4, examples_per_label=3, background_words=4, topic_words=2, min_length=3, max_length=5)
    )
    corpus = generator.generate(int(rng.integers(2**31)))
    model = PromptModel.build(
        corpus.vocab,
        num_soft=2,
        embed_dim=4,
        hidden_dim=6,
        depth=1,
        encoder_hidden=2,
        max_seq_len=12,
        seed=int(rng.integers(2**31)),
    )
    episode = sample_episode(corpus, "train", SplitSpec(tuple(range(4)), (), ()), 2, 1, 2, rng)
    template = parse_template(TINY_TEMPLATE, corpus.vocab)
    task = PromptTask(model, template, Verbalizer.from_corpus(corpus), episode)
    return TinyPromptProblem(model, model.init_params(rng), task)


def _directions(rng: np.random.Generator, params: ParamSet, names: Sequence[str], count: int) -> np.ndarray:
    """Random unit directions supported on ``names`` only."""
    mask = np.zeros(params.num_params)
    offsets = params.offsets()
    for n in names:
        mask[offsets[n][0] : offsets[n][1]] = 1.0
    directions = rng.normal(size=(count, params.num_params)) * mask
    return directions / np.linalg.norm(directions, axis=1, keepdims=True)


def directional_error(
    analytic: np.ndarray, f: Callable[[np.ndarray], float], x: np.ndarray, directions: np.ndarray
) -> float:
    numeric = [(f(x + FD_STEP * d) - f(x - FD_STEP * d)) / (2 * FD_STEP) for d in directions]
    return relative_error(directions @ analytic, np.asarray(numeric))


def check_task_loss(rng: np.random.Generator, instances: int, directions: int = 3) -> OracleResult:
    """Support-loss gradient of the whole prompt model, every partition, along random directions."""
    worst = 0.0
    for _ in range(instances):
        problem = tiny_prompt_problem(rng)
        task, params = problem.task, problem.params
        analytic = flat_gradient(task.support_loss, params)

        def f(x: np.ndarray) -> float:
            with no_grad():
                return task.support_loss(params.from_flat(x)).item()

        dirs = _directions(rng, params, params.names(), directions)
        worst = max(worst, directional_error(analytic, f, params.flat(), dirs))
    return OracleResult("task_loss vs FD", instances, worst, FIRST_ORDER_TOLERANCE)


def check_maml_fd(
    rng: np.random.Generator, instances: int, directions: int = 3, max_steps: int = 3, lr: float = 0.1
) -> OracleResult:
    """Unrolled MAML meta-gradient against differences of the query loss after adaptation."""
    worst = 0.0
    for _ in range(instances):
        problem = tiny_prompt_problem(rng)
        task, params = problem.task, problem.params
        cfg = InnerLoopConfig(int(rng.integers(1, max_steps + 1)), lr)
        analytic = meta_gradient_maml(params, task, cfg).flat

        def f(x: np.ndarray) -> float:
            adapted, _ = adapt(params.from_flat(x), task, cfg, track_query=False)
            with no_grad():
                return task.query_loss(adapted).item()

        dirs = _directions(rng, params, cfg.adapted_names(params), directions)
        worst = max(worst, directional_error(analytic, f, params.flat(), dirs))
    return OracleResult("MAML meta-gradient vs FD", instances, worst, SECOND_ORDER_TOLERANCE)


def run_gradcheck(instances: int = 100, seed: int = 0, maml_instances: Optional[int] = None) -> GradcheckReport:
    """
    :param instances: randomized instances per primitive and per second-order composition
    :param maml_instances: tiny prompt models for the model-level checks (default: a fifth of ``instances``)
    """
    rng = np.random.default_rng(seed)
    model_instances = maml_instances if maml_instances is not None else max(1, instances // 5)
    report = GradcheckReport()
    suites: list[tuple[str, Callable[[], OracleResult]]] = [
        ("primitives", lambda: check_primitives(rng, instances)),
        ("second order", lambda: check_second_order(rng, instances)),
        ("analytic", lambda: check_analytic(rng, instances)),
        ("task loss", lambda: check_task_loss(rng, model_instances)),
        ("maml", lambda: check_maml_fd(rng, model_instances)),
    ]
    for label, suite in suites:
        logger.info(f"Running the {label} oracle suite")
        result = suite()
        report.results.append(result)
        logger.debug(f"{result.name}: max relative error {result.max_error:.3e}")
    return report
