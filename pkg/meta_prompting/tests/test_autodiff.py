import math

import numpy as np
import pytest

from meta_prompting import autodiff as ad
from meta_prompting.autodiff import Tensor
from meta_prompting.models.exceptions import (
    ContractError,
    DimensionError,
    NonFiniteError,
    NumericDomainError,
)
from meta_prompting.params import ParamSet, Partition


def _grads_of(fn, *arrays):
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*leaves)
    return [g.data for g in ad.grad(out, leaves)]


def _fd_check(fn, *arrays, tol=1e-6):
    analytic = _grads_of(fn, *arrays)
    for i, arr in enumerate(arrays):

        def f(x, i=i):
            args = [Tensor(a) for a in arrays]
            args[i] = Tensor(x.reshape(arr.shape))
            return fn(*args).item()

        numeric = ad.numerical_gradient(f, np.asarray(arr, dtype=float).reshape(-1), eps=1e-5)
        assert ad.relative_error(analytic[i].reshape(-1), numeric) < tol


def test_add_componentwise():
    assert np.array_equal(ad.add(Tensor([1, 2]), Tensor([3, 4])).data, [4, 6])


def test_softmax_of_zeros_is_uniform():
    np.testing.assert_allclose(ad.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3)


def test_cross_entropy_uniform_two_classes():
    assert ad.cross_entropy(Tensor([0.0, 0.0]), 0).item() == pytest.approx(math.log(2))


def test_power_rule():
    x = Tensor(3.0, requires_grad=True)
    (g,) = ad.grad(x * x, [x])
    assert g.item() == pytest.approx(6.0)


def test_second_derivative_through_create_graph():
    x = Tensor(2.0, requires_grad=True)
    (dx,) = ad.grad(x * x * x, [x], create_graph=True)
    assert dx.item() == pytest.approx(12.0)
    assert dx.requires_grad
    (ddx,) = ad.grad(dx, [x])
    assert ddx.item() == pytest.approx(12.0)


def test_backward_returns_leaf_gradients(rng):
    w = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    x = Tensor(rng.normal(size=(4, 1)), requires_grad=True)
    y = Tensor(rng.normal(size=(3, 1)))
    diff = ad.matmul(w, x) - y
    grads = ad.backward(ad.tsum(diff * diff))
    assert set(grads) == {w.id, x.id}
    expected_w = 2 * (w.data @ x.data - y.data) @ x.data.T
    np.testing.assert_allclose(grads[w.id].data, expected_w)


def test_least_squares_matches_finite_differences(rng):
    w, x, y = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=(3, 2))

    def f(w, x, y):
        d = ad.matmul(w, x) - y
        return ad.tsum(d * d)

    _fd_check(f, w, x, y)


PRIMITIVES = {
    "add_broadcast": (lambda a, b: a + b, [(3, 4), (4,)]),
    "sub": (lambda a, b: a - b, [(3, 4), (3, 4)]),
    "mul_broadcast": (lambda a, b: a * b, [(3, 4), (3, 1)]),
    "div": (lambda a, b: a / b, [(3, 4), "pos(3, 4)"]),
    "matmul": (lambda a, b: ad.matmul(a, b), [(3, 4), (4, 2)]),
    "tanh": (lambda a: ad.tanh(a), [(3, 4)]),
    "sigmoid": (lambda a: ad.sigmoid(a), [(3, 4)]),
    "relu": (lambda a: ad.relu(a), ["away(3, 4)"]),
    "exp": (lambda a: ad.exp(a), [(3, 4)]),
    "log": (lambda a: ad.log(a), ["pos(3, 4)"]),
    "sum_axis": (lambda a: ad.tsum(a, axis=1, keepdims=True), [(3, 4)]),
    "mean": (lambda a: ad.mean(a, axis=0), [(3, 4)]),
    "transpose": (lambda a: ad.transpose(a), [(3, 4)]),
    "reshape": (lambda a: a.reshape(2, 6), [(3, 4)]),
    "embedding": (lambda a: ad.embedding(a, np.array([[0, 2], [2, 1]])), [(3, 4)]),
    "concat": (lambda a, b: ad.concat([a, b], axis=1), [(3, 4), (3, 2)]),
    "softmax": (lambda a: ad.softmax(a, axis=-1), [(3, 4)]),
    "log_softmax": (lambda a: ad.log_softmax(a, axis=-1), [(3, 4)]),
    "cross_entropy": (lambda a: ad.cross_entropy(a, np.array([0, 3, 1])), [(3, 4)]),
}


def _draw(rng, spec):
    if isinstance(spec, str):
        kind, shape = spec.split("(", 1)
        shape = tuple(int(s) for s in shape.rstrip(")").split(","))
        base = rng.normal(size=shape)
        if kind == "pos":
            return np.abs(base) + 0.5
        return np.sign(base) * (np.abs(base) + 0.1)
    return rng.normal(size=spec)


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
@pytest.mark.parametrize("seed", range(6))
def test_primitive_gradients_match_finite_differences(name, seed):
    rng = np.random.default_rng(seed)
    op, specs = PRIMITIVES[name]
    arrays = [_draw(rng, s) for s in specs]
    out_shape = op(*[Tensor(a) for a in arrays]).shape
    weights = Tensor(rng.normal(size=out_shape))

    _fd_check(lambda *ts: ad.tsum(op(*ts) * weights), *arrays)


@pytest.mark.parametrize("seed", range(5))
def test_second_derivatives_match_finite_differences_of_gradients(seed):
    rng = np.random.default_rng(100 + seed)
    a0, w0 = rng.normal(size=(2, 3)), rng.normal(size=(3, 2))
    targets = np.array([1, 0])

    def loss(a, w):
        return ad.cross_entropy(ad.tanh(ad.matmul(a, w)), targets) + ad.tsum(ad.exp(a * 0.3))

    v = rng.normal(size=a0.size + w0.size)

    def grad_dot_v(flat):
        a = Tensor(flat[: a0.size].reshape(a0.shape), requires_grad=True)
        w = Tensor(flat[a0.size :].reshape(w0.shape), requires_grad=True)
        ga, gw = ad.grad(loss(a, w), [a, w])
        return float(np.concatenate([ga.data.ravel(), gw.data.ravel()]) @ v)

    params = ParamSet(
        {"a": Tensor(a0), "w": Tensor(w0)}, {"a": Partition.PROMPT, "w": Partition.BACKBONE}
    )
    analytic = ad.hvp(lambda p: loss(p["a"], p["w"]), params, v)
    flat0 = np.concatenate([a0.ravel(), w0.ravel()])
    # H is symmetric, so d/dx (g(x).v) == H v
    numeric = ad.numerical_gradient(grad_dot_v, flat0, eps=1e-5)
    assert ad.relative_error(analytic, numeric) < 1e-4


def _single(values):
    return ParamSet({"p": Tensor(values)}, {"p": Partition.PROMPT})


def test_hvp_identity_hessian(rng):
    v = rng.normal(size=4)
    hv = ad.hvp(lambda p: 0.5 * ad.tsum(p["p"] * p["p"]), _single(rng.normal(size=4)), v)
    np.testing.assert_allclose(hv, v)


def test_hvp_off_diagonal():
    hv = ad.hvp(lambda p: p["p"][0] * p["p"][1], _single([0.7, -1.3]), np.array([1.0, 0.0]))
    np.testing.assert_allclose(hv, [0.0, 1.0])


def test_hvp_matches_explicit_quadratic(rng):
    m = rng.normal(size=(5, 5))
    a = m + m.T
    v = rng.normal(size=5)

    def quad(p):
        x = p["p"].reshape(5, 1)
        return 0.5 * ad.tsum(x * ad.matmul(Tensor(a), x))

    hv = ad.hvp(quad, _single(rng.normal(size=5)), v)
    np.testing.assert_allclose(hv, a @ v, atol=1e-8)


def test_hvp_rejects_wrong_length():
    with pytest.raises(DimensionError):
        ad.hvp(lambda p: ad.tsum(p["p"]), _single([1.0, 2.0]), np.ones(3))


def test_backward_is_deterministic(rng):
    w0, x0 = rng.normal(size=(4, 4)), rng.normal(size=(4, 3))

    def run():
        w = Tensor(w0, requires_grad=True)
        x = Tensor(x0, requires_grad=True)
        h = ad.tanh(ad.matmul(w, x))
        loss = ad.tsum(ad.softmax(h, axis=0) * h) + ad.tsum(ad.matmul(w, h))
        return [g.data for g in ad.grad(loss, [w, x])]

    first, second = run(), run()
    for a, b in zip(first, second):
        assert np.array_equal(a, b)


def test_shape_mismatch_is_a_dimension_error():
    with pytest.raises(DimensionError):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))
    with pytest.raises(DimensionError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_domain_violations():
    with pytest.raises(NumericDomainError):
        ad.log(Tensor([1.0, 0.0]))
    with pytest.raises(NumericDomainError):
        ad.exp(Tensor([1000.0]))


def test_non_scalar_root_is_rejected():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        ad.backward(x * x)


def test_non_finite_results_are_caught_when_checking():
    big = Tensor([1e200])
    with pytest.raises(NonFiniteError):
        ad.mul(big, big)
    with ad.check_finite(False):
        assert np.isinf(ad.mul(big, big).data[0])


def test_no_grad_records_nothing():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with ad.no_grad():
        y = x * x
    assert not y.requires_grad and y.is_leaf


def test_unused_input_gets_zero_gradient():
    x = Tensor(1.0, requires_grad=True)
    y = Tensor([1.0, 2.0], requires_grad=True)
    gx, gy = ad.grad(x * 3.0, [x, y])
    assert gx.item() == 3.0
    assert np.array_equal(gy.data, [0.0, 0.0])


def test_graph_size_counts_retained_nodes():
    x = Tensor(1.0, requires_grad=True)
    y = x
    for _ in range(5):
        y = y * 2.0
    # x, five products and their five constant factors
    assert ad.graph_size(y) == 11


def test_generation_increases_towards_outputs():
    x = Tensor(1.0, requires_grad=True)
    y = ad.tanh(x)
    z = y * x
    assert x.generation < y.generation < z.generation
