"""
Module to test the reverse-mode tape: primitive gradients against finite differences,
shape rules, grad mode and tape misuse.
"""
import threading

import numpy as np
import pytest

from hoiModule.autodiff import tensor as tn
from hoiModule.autodiff.gradcheck import check_gradient, finite_diff_grad, relative_error
from hoiModule.autodiff.tensor import Tape, Tensor, no_grad
from hoiModule.utils.errors import NonFiniteError, ShapeError, TapeError


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def test_add_mul_gradient():
    """d/dx sum(x * y + x) = y + 1"""
    x_value = np.array([1.0, -2.0, 3.0])
    y = Tensor([0.5, 4.0, -1.0])
    with Tape() as tape:
        x = tape.watch(x_value)
        out = (x * y + x).sum()
    grads = tape.backward(out)
    np.testing.assert_allclose(grads[x.id].data, [1.5, 5.0, 0.0])


def test_untracked_values_are_not_recorded():
    """Operations on constants leave the tape empty"""
    with Tape() as tape:
        _ = Tensor([1.0, 2.0]) * 3.0
    assert tape.nodes == []


def test_no_grad_suspends_recording():
    """No node is recorded inside no_grad"""
    with Tape() as tape:
        x = tape.watch(np.ones(3))
        with no_grad():
            y = x * 2.0
    assert not y.requires_grad
    assert tape.nodes == []


def test_second_backward_raises():
    """A tape is single use"""
    with Tape() as tape:
        x = tape.watch(np.ones(2))
        out = x.sum()
    tape.backward(out)
    with pytest.raises(TapeError):
        tape.backward(out)


def test_non_scalar_root_raises():
    """backward needs a scalar root"""
    with Tape() as tape:
        x = tape.watch(np.ones(2))
        out = x * 2.0
    with pytest.raises(TapeError):
        tape.backward(out)


def test_unused_leaf_gets_zero_gradient():
    """Leaves that do not reach the root get zeros of their shape"""
    with Tape() as tape:
        x = tape.watch(np.ones(3))
        unused = tape.watch(np.ones((2, 2)))
        out = x.sum()
    grads = tape.backward(out)
    np.testing.assert_array_equal(grads[unused.id].data, np.zeros((2, 2)))


def test_shape_rules():
    """Equal shapes, scalars and row vectors combine; anything else raises"""
    a = Tensor(np.ones((4, 3)))
    assert (a + Tensor(np.ones(3))).shape == (4, 3)
    assert (a * 2.0).shape == (4, 3)
    with pytest.raises(ShapeError):
        _ = a + Tensor(np.ones(4))
    with pytest.raises(ShapeError):
        _ = a + Tensor(np.ones((4, 1)))
    assert tn.broadcast_to(Tensor(np.ones((4, 1))), (4, 3)).shape == (4, 3)


def test_non_finite_output_raises():
    """Primitives refuse to produce NaN or inf"""
    with pytest.raises(NonFiniteError):
        tn.exp(Tensor([1000.0]))
    with pytest.raises(NonFiniteError):
        tn.log(Tensor([0.0]))
    with pytest.raises(NonFiniteError):
        _ = Tensor([1.0]) / Tensor([0.0])


def test_sqrt_gradient_at_zero():
    """The gradient of sqrt at 0 is 0 so norms of coincident points stay finite"""
    with Tape() as tape:
        x = tape.watch(np.array([0.0, 4.0]))
        out = tn.sqrt(x).sum()
    np.testing.assert_allclose(tape.backward(out)[x.id].data, [0.0, 0.25])


@pytest.mark.parametrize("name, fn, shape", [
    ("matmul", lambda x: tn.matmul(x, Tensor(np.arange(12.0).reshape(3, 4) / 10)).sum(), (2, 3)),
    ("batched matmul", lambda x: tn.matmul(x, tn.transpose(x)).sum(), (2, 3, 4)),
    ("softmax", lambda x: (tn.softmax(x) * Tensor(np.arange(5.0))).sum(), (3, 5)),
    ("layer_norm", lambda x: (tn.layer_norm(x) * Tensor(np.arange(4.0))).sum(), (3, 4)),
    ("gelu", lambda x: tn.gelu(x).sum(), (6,)),
    ("cross", lambda x: tn.cross(x, Tensor(np.ones((2, 3)) * [1.0, 2.0, 3.0])).sum(), (2, 3)),
    ("pairwise", lambda x: tn.pairwise_sq_dist(x, Tensor(np.eye(3))).sum(), (4, 3)),
    ("amax", lambda x: tn.amax(x, axis=0).sum(), (4, 3)),
    ("gather", lambda x: (tn.gather(x, [0, 2, 2], axis=1) ** 2).sum(), (2, 3)),
    ("concat", lambda x: (tn.concat([x, x * 2.0], axis=1) ** 2).sum(), (2, 3)),
    ("stack", lambda x: (tn.stack([x, x], axis=0) ** 3).sum(), (2, 3)),
    ("index", lambda x: (x[1:, :2] ** 2).sum(), (3, 3)),
    ("broadcast", lambda x: (tn.broadcast_to(x, (4, 2, 3)) ** 2).mean(), (2, 3)),
    ("transpose axes", lambda x: (tn.transpose(x, (1, 0, 2)) * Tensor(
        np.arange(24.0).reshape(3, 2, 4))).sum(), (2, 3, 4)),
    ("div", lambda x: (Tensor(np.ones(4)) / (x * x + 1.0)).sum(), (4,)),
])
def test_primitive_gradients(rng, name, fn, shape):
    """Tape gradients match central finite differences"""
    x = rng.normal(size=shape)
    assert check_gradient(fn, x) < 1e-4, name


def test_finite_diff_of_quadratic():
    """Central differences are exact on quadratics"""
    grad = finite_diff_grad(lambda x: (x * x).sum(), np.array([1.0, -3.0]))
    np.testing.assert_allclose(grad.data, [2.0, -6.0], atol=1e-8)


def test_relative_error_floor():
    """Small absolute differences are measured against the floor"""
    err = relative_error(np.array([1e-8]), np.array([0.0]))
    assert err[0] == pytest.approx(1e-6)


def test_tapes_are_thread_local():
    """A tape recording on one thread does not see another thread's operations"""
    results = {}

    def worker():
        with Tape() as inner:
            y = inner.watch(np.ones(2))
            results["out"] = (y * 3.0).sum()
            results["nodes"] = len(inner.nodes)

    with Tape() as tape:
        x = tape.watch(np.ones(2))
        thread = threading.Thread(target=worker)
        thread.start()
        thread.join()
        out = (x * 2.0).sum()
    assert results["nodes"] == 2
    assert len(tape.nodes) == 2
    np.testing.assert_allclose(tape.backward(out)[x.id].data, [2.0, 2.0])


def test_tensor_values_are_read_only():
    """The wrapped array cannot be modified in place"""
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0
