"""Backward machinery semantics plus the finite-difference battery over ops."""

import numpy as np
import pytest

from fbnet import gradcheck
from fbnet import tensor as T
from fbnet.tensor import Tape, Tensor


def test_backward_accumulates_over_shared_parent():
    x = Tensor(np.array([1.5, -2.0, 3.0]), requires_grad=True, dtype=np.float64)
    # f = sum(x*x + x) so df/dx = 2x + 1
    out = T.tsum(T.add(T.mul(x, x), x))
    T.backward(out)
    np.testing.assert_allclose(x.grad, 2.0 * x.data + 1.0, rtol=1e-12)


def test_backward_diamond_graph():
    x = Tensor(np.array(2.0), requires_grad=True, dtype=np.float64)
    y = T.mul(x, x)
    out = T.tsum(T.add(y, y))
    T.backward(out)
    np.testing.assert_allclose(x.grad, 8.0)


def test_backward_requires_scalar_root():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        T.backward(T.add(x, x))


def test_backward_runs_once_only():
    x = Tensor(np.ones(3), requires_grad=True)
    out = T.tsum(x * x)
    T.backward(out)
    with pytest.raises(RuntimeError):
        T.backward(out)


def test_backward_rejects_shared_spent_subgraph():
    x = Tensor(np.ones(3), requires_grad=True)
    mid = T.mul(x, x)
    T.backward(T.tsum(mid))
    with pytest.raises(RuntimeError):
        T.backward(T.tmean(mid))


def test_unbroadcast_gradients():
    a = Tensor(np.ones((2, 3)), requires_grad=True, dtype=np.float64)
    b = Tensor(np.ones((3,)), requires_grad=True, dtype=np.float64)
    T.backward(T.tsum(T.add(a, b)))
    assert a.grad.shape == (2, 3) and b.grad.shape == (3,)
    np.testing.assert_array_equal(b.grad, [2.0, 2.0, 2.0])


def test_tape_orders_parents_first():
    x = Tensor(np.ones(2), requires_grad=True)
    y = T.mul(x, x)
    z = T.tsum(T.add(y, x))
    order = Tape.trace(z).entries
    assert order.index(x) < order.index(y) < order.index(z)
    assert Tape.trace(z).parameters() == [x]


def test_grad_dtype_follows_parameter():
    x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    T.backward(T.tsum(T.mul(x, x)))
    assert x.grad.dtype == np.float32


def test_fd_battery_ops():
    results = gradcheck.battery(seeds=range(3), full=False)
    assert {name for name, _, _ in results} == set(gradcheck.case_names(full=False))
    failures = [f"{n} seed {s}: rel err {e:.3e}" for n, s, e in results if e >= gradcheck.TOL]
    assert not failures, "\n".join(failures)
