import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from otjr import autodiff as ad
from otjr.autodiff import ContractError, Graph, NumericError, gradcheck


def _grad(f, x):
    g = Graph()
    xv = g.variable(x)
    return g.grad(f(xv), [xv])[0].data


def test_square_value():
    assert ad.square(ad.as_tensor([3.0])).data.tolist() == [9.0]


def test_softmax_uniform():
    np.testing.assert_allclose(ad.softmax(ad.as_tensor([[0.0, 0.0, 0.0]])).data, [[1 / 3] * 3])


def test_logsumexp_no_overflow():
    v = ad.logsumexp(ad.as_tensor([[1000.0, 1000.0]])).data
    assert v.ravel()[0] == pytest.approx(1000 + np.log(2), abs=1e-12)


def test_x_squared_grad():
    assert _grad(lambda x: ad.sum(ad.square(x)), np.array([3.0]))[0] == 6.0


def test_x_cubed_second_derivative():
    g = Graph()
    x = g.variable(np.array([2.0]))
    y = ad.sum(ad.mul(ad.square(x), x))
    (dx,) = g.grad(y, [x], record=True)
    (d2,) = g.grad(ad.sum(dx), [x])
    assert d2.data[0] == pytest.approx(12.0, abs=1e-12)


def test_affine_softplus_mean_matches_fd():
    rng = np.random.default_rng(0)
    W, b = rng.normal(size=(3, 4)), rng.normal(size=3)
    rep = gradcheck(lambda x: ad.mean(ad.softplus(ad.affine(x, W, b))), rng.normal(size=(2, 4)), tol=1e-6)
    assert rep.passed and rep.max_rel_error < 1e-6


def test_gradcheck_sum_exact():
    rep = gradcheck(lambda x: ad.sum(x), np.random.default_rng(1).normal(size=5))
    assert rep.max_rel_error < 1e-9


def test_gradcheck_quadratic_form():
    W = np.random.default_rng(2).normal(size=(4, 4))
    rep = gradcheck(lambda x: ad.sum(ad.square(ad.matmul(x, W.T))), np.random.default_rng(3).normal(size=(1, 4)))
    assert rep.status == "pass"


def test_gradcheck_relu_kink_inconclusive():
    rep = gradcheck(lambda x: ad.sum(ad.relu(x)), np.array([0.0, 1.0]))
    assert rep.inconclusive and not rep.passed


def test_shape_mismatch_is_contract_error():
    with pytest.raises(ContractError):
        ad.add(ad.as_tensor(np.ones(3)), ad.as_tensor(np.ones(4)))


def test_nonfinite_names_primitive():
    with pytest.raises(NumericError, match="square"):
        ad.square(ad.as_tensor([1e200]))


def test_backward_rejects_nonscalar_and_foreign_wrt():
    g = Graph()
    x = g.variable(np.ones(3))
    with pytest.raises(ContractError):
        g.grad(ad.square(x), [x])
    other = Graph().variable(np.ones(3))
    with pytest.raises(ContractError):
        g.grad(ad.sum(x), [other])


def test_replay_bit_identical():
    rng = np.random.default_rng(4)
    g = Graph()
    x = g.variable(rng.normal(size=(3, 5)))
    W = g.variable(rng.normal(size=(2, 5)))
    out = ad.mean(ad.cross_entropy(ad.affine(x, W, np.zeros(2)), np.array([0, 1, 1])))
    vals = g.replay()
    assert np.array_equal(vals[out.id], out.data)
    a = g.grad(out, [x, W])
    b = g.grad(out, [x, W])
    assert all(np.array_equal(p.data, q.data) for p, q in zip(a, b))


def test_parents_precede_children():
    g = Graph()
    x = g.variable(np.ones((2, 2)))
    ad.sum(ad.softplus(ad.matmul(x, x)))
    for i, node in enumerate(g.nodes):
        assert all(p < i for p in node.parents)


def test_cross_entropy_matches_log_softmax():
    z = np.random.default_rng(5).normal(size=(4, 3))
    y = np.array([0, 2, 1, 1])
    ce = ad.cross_entropy(ad.as_tensor(z), y).data
    ls = z - np.log(np.exp(z).sum(1, keepdims=True))
    np.testing.assert_allclose(ce, -ls[np.arange(4), y], rtol=1e-13)


def test_second_order_softplus_mlp():
    # f(theta) = ||d(v.z)/dx||^2 ; theta-gradient through the recorded backward
    rng = np.random.default_rng(6)
    x0 = rng.uniform(size=(1, 3))
    v = rng.normal(size=(1, 2))
    W2 = rng.normal(size=(2, 4))

    def f(W1):
        g = W1.graph
        xv = g.variable(x0)
        z = ad.matmul(ad.softplus(ad.matmul(xv, ad.transpose(W1))), W2.T)
        (gx,) = g.grad(ad.sum(ad.inner(z, v)), [xv], record=True)
        return ad.sum(ad.square(gx))

    rep = gradcheck(f, rng.normal(size=(4, 3)), tol=1e-4)
    assert rep.passed, rep.max_rel_error


small = arrays(np.float64, (2, 3), elements=st.floats(-3, 3, allow_nan=False))


@settings(max_examples=30, deadline=None)
@given(small, st.floats(-2, 2), st.floats(-2, 2))
def test_linearity(x, a, b):
    f = lambda t: ad.sum(ad.softplus(t))
    h = lambda t: ad.mean(ad.square(t))
    lhs = _grad(lambda t: ad.add(ad.scale(f(t), a), ad.scale(h(t), b)), x)
    rhs = a * _grad(f, x) + b * _grad(h, x)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(small)
def test_softmax_rows_sum_to_one(x):
    np.testing.assert_allclose(ad.softmax(ad.as_tensor(x)).data.sum(1), 1.0, atol=1e-12)


_R = np.random.default_rng(40)
_C34 = _R.normal(size=(3, 4))
_PRIM_CASES = {
    "add": lambda x: ad.add(x, _C34),
    "subtract": lambda x: ad.sub(_C34, x),
    "multiply": lambda x: ad.mul(x, _C34),
    "scale": lambda x: ad.scale(x, -1.7),
    "matmul": lambda x: ad.matmul(x, _C34.T),
    "affine": lambda x: ad.affine(x, _C34[:2], np.array([0.3, -0.2])),
    "relu": ad.relu,
    "softplus": ad.softplus,
    "square": ad.square,
    "sum": lambda x: ad.sum(x, axis=1),
    "mean": lambda x: ad.mean(x, axis=0, keepdims=True),
    "inner": lambda x: ad.inner(x, _C34),
    "logsumexp": lambda x: ad.logsumexp(x, axis=1),
    "softmax": ad.softmax,
    "cross_entropy": lambda x: ad.cross_entropy(x, np.array([0, 3, 1])),
    "l2norm": ad.l2norm,
    "abs": ad.abs,
    "divide": lambda x: ad.div(_C34, ad.add(ad.square(x), np.full((3, 4), 1.5))),
    "transpose": ad.transpose,
    "reshape": lambda x: ad.reshape(x, (2, 6)),
    "sum_to": lambda x: ad.apply_primitive("sum_to", x, shape=(1, 4)),
    "broadcast_to": lambda x: ad.apply_primitive("broadcast_to", x, shape=(2, 3, 4)),
    "sigmoid": ad.sigmoid,
}


def test_prim_cases_cover_registry():
    assert set(_PRIM_CASES) == set(ad.primitive_kinds(public_only=False))


def _wrapped(kind):
    # squaring the primitive's output gives every case a nonzero second derivative
    def f(x):
        out = _PRIM_CASES[kind](x)
        w = np.random.default_rng(41).normal(size=out.shape)
        return ad.sum(ad.mul(ad.square(out), w))
    return f


def _away_from_kinks():
    x = np.random.default_rng(42).normal(size=(3, 4))
    return np.where(np.abs(x) < 0.2, 0.5, x)


@pytest.mark.parametrize("kind", sorted(_PRIM_CASES))
def test_primitive_first_order(kind):
    rep = gradcheck(_wrapped(kind), _away_from_kinks(), tol=1e-6)
    assert rep.status == "pass", (kind, rep.max_rel_error)


@pytest.mark.parametrize("kind", sorted(_PRIM_CASES))
def test_primitive_second_order(kind):
    f = _wrapped(kind)
    v = np.random.default_rng(43).normal(size=(3, 4))

    def g(xv):
        (gx,) = xv.graph.grad(f(xv), [xv], record=True)
        return ad.sum(ad.mul(gx, v))
    rep = gradcheck(g, _away_from_kinks(), tol=1e-6)
    assert rep.status == "pass", (kind, rep.max_rel_error)
