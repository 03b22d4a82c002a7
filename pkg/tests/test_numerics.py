import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from quadnet import numerics as nx
from quadnet.errors import ContractError, DimensionError, DomainError
from quadnet.numerics import Graph, Tensor


def test_matmul_identity():
    eye = Tensor(np.eye(2))
    assert np.array_equal(nx.matmul(eye, eye).data, np.eye(2))


def test_matmul_hand_case():
    out = nx.matmul(Tensor([[1, 2], [3, 4]]), Tensor([[1], [1]]))
    assert np.array_equal(out.data, [[3], [7]])


def test_matmul_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\[2, 3\].*\[4, 2\]"):
        nx.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


def test_matmul_with_identity_is_exact(rng):
    a = rng.uniform(-2, 2, (5, 4))
    assert np.array_equal(nx.matmul(Tensor(a), Tensor(np.eye(4))).data, a)


@pytest.mark.parametrize("x, expected", [(-1.0, -0.01), (2.0, 2.0), (0.0, 0.0)])
def test_leaky_relu_values(x, expected):
    assert nx.elementwise("relu_leaky", Tensor([x]), slope=0.01).data[0] == pytest.approx(expected, abs=1e-15)


def test_leaky_relu_derivative_at_zero_is_one():
    x = Tensor([0.0], requires_grad=True)
    nx.backward(nx.reduce_sum(nx.leaky_relu(x, 0.01)))
    assert x.grad[0] == 1.0


def test_add_componentwise():
    assert np.array_equal(nx.elementwise("add", Tensor([1, 2]), Tensor([3, 4])).data, [4, 6])


def test_elementwise_shape_mismatch():
    with pytest.raises(DimensionError):
        nx.add(Tensor([1, 2]), Tensor([1, 2, 3]))
    with pytest.raises(DimensionError):
        nx.mul(Tensor(np.ones((2, 2))), Tensor(np.ones(4)))


def test_reduce_values():
    assert nx.reduce("mean", Tensor([1, 2, 3])).item() == 2
    assert nx.reduce("sum", Tensor([0.5, 0.25])).item() == 0.75
    with pytest.raises(DomainError):
        nx.reduce("sum", Tensor([]))


def test_backward_sum_gives_ones(rng):
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    nx.backward(nx.reduce_sum(x))
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_backward_mean_of_squares():
    x = Tensor([1.0, 2.0], requires_grad=True)
    nx.backward(nx.reduce_mean(nx.mul(x, x)))
    assert np.allclose(x.grad, [1.0, 2.0], atol=0, rtol=1e-15)


def test_backward_detached_leaf_gets_zeros():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = Tensor([3.0, 4.0], requires_grad=True)
    nx.backward(nx.reduce_sum(y), params=[x, y])
    assert np.array_equal(x.grad, [0.0, 0.0])


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        nx.backward(nx.scale(x, 2.0))


def test_backward_overwrites_rather_than_accumulates():
    x = Tensor([1.0, -1.0], requires_grad=True)
    for _ in range(3):
        nx.backward(nx.reduce_sum(nx.scale(x, 3.0)))
    assert np.array_equal(x.grad, [3.0, 3.0])


def test_graph_is_topological_and_visits_once():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = nx.mul(x, x)
    z = nx.add(y, y)
    loss = nx.reduce_sum(z)
    g = Graph.trace(loss)
    assert len(g.nodes) == len({id(n) for n in g.nodes}) == 3
    position = {id(n.output): i for i, n in enumerate(g.nodes)}
    for i, node in enumerate(g.nodes):
        for inp in node.inputs:
            if inp.node is not None:
                assert position[id(inp)] < i
    nx.backward(loss, graph=g)
    assert np.array_equal(x.grad, [4.0, 8.0])


def test_independent_subgraphs_concatenate(rng):
    a = Tensor(rng.normal(size=3), requires_grad=True)
    b = Tensor(rng.normal(size=2), requires_grad=True)
    fa = lambda: nx.reduce_sum(nx.mul(a, a))  # noqa: E731
    fb = lambda: nx.reduce_mean(nx.leaky_relu(b, 0.1))  # noqa: E731
    nx.backward(fa())
    ga = a.grad.copy()
    nx.backward(fb())
    gb = b.grad.copy()
    nx.backward(nx.add(fa(), fb()))
    assert np.array_equal(np.concatenate([a.grad, b.grad]), np.concatenate([ga, gb]))


def test_finite_diff_on_square():
    theta = Tensor([3.0], requires_grad=True)
    err = nx.finite_diff_check(lambda: nx.reduce_sum(nx.mul(theta, theta)), [theta], 1e-5)
    assert err <= 1e-8


def test_finite_diff_on_constant():
    theta = Tensor([3.0], requires_grad=True)
    assert nx.finite_diff_check(lambda: nx.reduce_sum(nx.scale(theta, 0.0)), [theta], 1e-5) == 0.0


def test_finite_diff_requires_positive_step():
    theta = Tensor([1.0], requires_grad=True)
    with pytest.raises(DomainError):
        nx.finite_diff_check(lambda: nx.reduce_sum(theta), [theta], 0.0)


def test_non_finite_forward_is_rejected():
    with pytest.raises(DomainError), np.errstate(over="ignore"):
        nx.scale(Tensor([1e308]), 10.0)


# every primitive against central differences on inputs in [-2, 2]

PRIMITIVES = {
    "matmul": (lambda t: nx.matmul(t[0], t[1]), [(3, 4), (4, 2)]),
    "add": (lambda t: nx.add(t[0], t[1]), [(3, 2), (3, 2)]),
    "sub": (lambda t: nx.sub(t[0], t[1]), [(3, 2), (3, 2)]),
    "mul": (lambda t: nx.mul(t[0], t[1]), [(3, 2), (3, 2)]),
    "scale": (lambda t: nx.scale(t[0], -1.7), [(4,)]),
    "shift": (lambda t: nx.shift(t[0], 0.3), [(4,)]),
    "leaky_relu": (lambda t: nx.leaky_relu(t[0], 0.05), [(6,)]),
    "hinge": (lambda t: nx.hinge(t[0]), [(6,)]),
    "mean": (lambda t: nx.reduce_mean(t[0]), [(2, 3)]),
    "add_bias": (lambda t: nx.add_bias(t[0], t[1]), [(3, 2), (2,)]),
    "take": (lambda t: nx.take(t[0], [2, 0, 2]), [(3, 2)]),
    "pick": (lambda t: nx.pick(t[0], [1, 0, 2]), [(3, 3)]),
    "row_norm": (lambda t: nx.row_norm(t[0]), [(4, 3)]),
    "log": (lambda t: nx.log(nx.shift(nx.mul(t[0], t[0]), 0.5)), [(4,)]),
    "power": (lambda t: nx.power(nx.shift(nx.mul(t[0], t[0]), 0.1), 2.5), [(4,)]),
    "softmax": (lambda t: nx.softmax(t[0]), [(3, 4)]),
    "batch_norm": (lambda t: nx.batch_norm(t[0], t[1], t[2], 1e-5)[0], [(5, 3), (3,), (3,)]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_match_central_differences(name):
    build, shapes = PRIMITIVES[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    inputs = [Tensor(rng.uniform(-2, 2, s), requires_grad=True) for s in shapes]
    weights = None

    def f():
        nonlocal weights
        out = build(inputs)
        if weights is None:
            weights = Tensor(rng.uniform(-2, 2, out.shape))
        return nx.reduce_sum(nx.mul(out, weights)) if out.shape else out

    assert nx.finite_diff_check(f, inputs, 1e-5) <= 1e-6


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=st.floats(-2, 2)))
def test_grad_shapes_match_data(values):
    x = Tensor(values, requires_grad=True)
    nx.backward(nx.reduce_sum(nx.leaky_relu(x, 0.01)))
    assert x.grad.shape == x.data.shape
