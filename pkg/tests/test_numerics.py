import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.special import erf, logsumexp as sp_logsumexp

from noisyalign import numerics as nx
from noisyalign.exceptions import DegenerateVectorError, DimensionError, DomainError, FormatError, InstabilityError
from noisyalign.numerics import Tensor

from conftest import analytic_grad, numeric_grad

finite = st.floats(-3, 3, allow_nan=False, width=64)


def _check(op, *arrays, tol=1e-6, weights=None):
    grads = analytic_grad(op, *arrays, weights=weights)
    for i, a in enumerate(arrays):
        def f(x, i=i):
            args = [Tensor(v) for v in arrays]
            args[i] = Tensor(x)
            out = op(*args).numpy()
            return float(np.sum(out * (1 if weights is None else weights)))
        num = numeric_grad(f, a)
        np.testing.assert_allclose(grads[i], num, atol=tol, rtol=tol)


UNARY = {
    "exp": (nx.exp, np.exp),
    "tanh": (nx.tanh, np.tanh),
    "gelu": (nx.gelu, lambda x: 0.5 * x * (1 + erf(x / math.sqrt(2)))),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_forward_and_grad(name, rng):
    op, ref = UNARY[name]
    x = rng.normal(size=(3, 4))
    np.testing.assert_allclose(op(Tensor(x)).numpy(), ref(x), rtol=1e-14, atol=1e-15)
    _check(op, x, weights=rng.normal(size=(3, 4)))


def test_log_grad(rng):
    _check(nx.log, rng.uniform(0.5, 2.0, size=(5,)))


@pytest.mark.parametrize("op", [nx.add, nx.sub, nx.mul, nx.div])
def test_broadcasting_binary_ops(op, rng):
    a = rng.normal(size=(2, 3, 4))
    b = rng.uniform(0.5, 1.5, size=(3, 1))
    _check(op, a, b, weights=rng.normal(size=(2, 3, 4)))


def test_matmul_batched_and_vector(rng):
    _check(nx.matmul, rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5)), weights=rng.normal(size=(2, 3, 5)))
    out = nx.matmul(Tensor(np.arange(3.0)), Tensor(np.ones((3, 2))))
    assert out.shape == (2,)
    with pytest.raises(DimensionError):
        nx.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_softmax_layer_norm_l2_grads(rng):
    w = rng.normal(size=(3, 5))
    _check(lambda t: nx.softmax(t, axis=-1), rng.normal(size=(3, 5)), weights=w)
    _check(lambda t: nx.softmax(t, axis=0), rng.normal(size=(3, 5)), weights=w)
    _check(lambda t: nx.layer_norm(t), rng.normal(size=(3, 5)), weights=w, tol=1e-5)
    _check(lambda t: nx.l2_normalize(t), rng.normal(size=(3, 5)), weights=w)
    _check(lambda t: nx.logsumexp(t, axis=1), rng.normal(size=(3, 5)), weights=rng.normal(size=3))


def test_reshape_take_concat_clip_grads(rng):
    _check(lambda t: nx.reshape(t, (6, 2)), rng.normal(size=(3, 4)), weights=rng.normal(size=(6, 2)))
    _check(lambda t: nx.take(t, np.array([0, 2, 2])), rng.normal(size=(4, 2)), weights=rng.normal(size=(3, 2)))
    _check(lambda a, b: nx.concat([a, b], axis=1), rng.normal(size=(2, 3)), rng.normal(size=(2, 1)),
           weights=rng.normal(size=(2, 4)))
    x = np.array([-2.0, -0.5, 0.3, 2.0])
    (g,) = analytic_grad(lambda t: nx.clip(t, -1.0, 1.0), x)
    np.testing.assert_array_equal(g, [0.0, 1.0, 1.0, 0.0])


def test_swap_last_and_sum_mean(rng):
    x = rng.normal(size=(2, 3, 4))
    assert Tensor(x).T.shape == (2, 4, 3)
    np.testing.assert_array_equal(Tensor(x).T.numpy(), np.swapaxes(x, -1, -2))
    _check(lambda t: nx.mean(t, axis=1), x, weights=rng.normal(size=(2, 4)))
    _check(lambda t: nx.tsum(t, axis=(0, 2), keepdims=True), x, weights=rng.normal(size=(1, 3, 1)))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=st.floats(-500, 500)))
def test_logsumexp_matches_scipy(x):
    out = nx.logsumexp(Tensor(x), axis=1).numpy()
    np.testing.assert_allclose(out, sp_logsumexp(x, axis=1), rtol=1e-12, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 6)), elements=finite))
def test_softmax_is_a_distribution(x):
    p = nx.softmax(Tensor(x), axis=-1).numpy()
    assert np.all(p > 0)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)


def test_softmax_stable_for_huge_logits():
    p = nx.softmax(Tensor([1000.0, 1000.0, -1000.0])).numpy()
    np.testing.assert_allclose(p, [0.5, 0.5, 0.0], atol=1e-300)


def test_layer_norm_statistics(rng):
    y = nx.layer_norm(Tensor(rng.normal(3.0, 2.0, size=(4, 64)))).numpy()
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-4)


def test_l2_normalize_degenerate_raises():
    with pytest.raises(DegenerateVectorError):
        nx.l2_normalize(Tensor(np.zeros((2, 3))))


def test_backward_accumulates_shared_inputs():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    (x * x + x).sum().backward()
    np.testing.assert_array_equal(x.grad, [3.0, 5.0])


def test_no_graph_without_requires_grad():
    y = Tensor([1.0]) * Tensor([2.0])
    assert not y.requires_grad and y._parents == ()


def test_grad_check_accepts_correct_and_rejects_bad_step(rng):
    w = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    x = rng.normal(size=3)
    err = nx.grad_check(lambda: nx.tanh(Tensor(x) @ w).sum(), [w])
    assert err < 1e-7
    with pytest.raises(DomainError):
        nx.grad_check(lambda: w.sum(), [w], h=1e-2)


def test_grad_check_flags_wrong_backward():
    w = Tensor(np.array([0.7, -0.4]), requires_grad=True)

    def broken():
        out = Tensor._from_op(w.data ** 2, (w,), lambda g: (g * 3.0,))
        return out.sum()

    assert nx.grad_check(broken, [w]) > 0.1


def test_grad_check_non_finite():
    w = Tensor(np.array([800.0]), requires_grad=True)
    with np.errstate(over="ignore"), pytest.raises(InstabilityError):
        nx.grad_check(lambda: nx.exp(w).sum(), [w])


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.lists(st.integers(1, 3), min_size=0, max_size=3).map(tuple),
              elements=st.floats(allow_nan=True, allow_infinity=True, width=64)))
def test_tensor_record_round_trip(x):
    back = nx.decode_tensor(nx.encode_tensor(x))
    assert back.shape == x.shape
    np.testing.assert_array_equal(back.view(np.uint64), x.astype("<f8").view(np.uint64))


def test_tensor_record_layout():
    blob = nx.encode_tensor(np.array([[1.5, -2.0]]))
    assert blob[:4] == b"LIMT"
    assert int.from_bytes(blob[4:8], "little") == 2
    assert np.frombuffer(blob[-16:], "<f8").tolist() == [1.5, -2.0]


def test_tensor_record_bad_magic_and_truncation():
    with pytest.raises(FormatError):
        nx.read_tensor(io.BytesIO(b"NOPE" + bytes(8)))
    with pytest.raises(FormatError):
        nx.decode_tensor(nx.encode_tensor(np.ones(4))[:-3])


def test_checkpoint_round_trip(tmp_path, rng):
    state = {"scalar": np.array(0.5), "matrix": rng.normal(size=(3, 2)), "vec": rng.normal(size=4)}
    nx.save_checkpoint(tmp_path / "m.limt", state)
    back = nx.load_checkpoint(tmp_path / "m.limt")
    assert set(back) == set(state)
    for k in state:
        assert back[k].shape == state[k].shape
        np.testing.assert_array_equal(back[k], state[k])
