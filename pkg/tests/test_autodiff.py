import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from oracles import central_difference, random_program, run_program_numpy
from srcnet.autodiff import Tape, backward, forward_op
from srcnet.errors import ConfigurationError, UsageError


def test_forward_examples():
    t = Tape()
    assert t.tanh(t.const([0.0])).value.tolist() == [0.0]
    assert t.relu(t.const([-1.0, 2.0])).value.tolist() == [0.0, 2.0]
    v = t.matvec(t.const(np.eye(2)), t.const([3.0, 4.0]))
    assert v.value.tolist() == [3.0, 4.0]


def test_forward_op_generic_entry():
    t = Tape()
    out = forward_op(t, "sub", t.const([5.0]), t.const([2.0]))
    assert out.value.tolist() == [3.0]
    with pytest.raises(UsageError, match="unknown op kind"):
        forward_op(t, "conv", t.const([1.0]))


def test_shape_mismatch_names_both_shapes():
    t = Tape()
    with pytest.raises(ConfigurationError, match=r"\(2,\).*\(3,\)"):
        t.add(t.const(np.zeros(2)), t.const(np.zeros(3)))
    with pytest.raises(ConfigurationError, match=r"\(2, 3\).*\(2,\)"):
        t.matvec(t.const(np.zeros((2, 3))), t.const(np.zeros(2)))


def test_relu_bypass_forward_and_backward():
    t = Tape()
    h = t.leaf([-0.3, 0.7], name="h")
    out = t.relu_bypass(h)
    assert out.value.tolist() == [0.0, 0.7]
    grads = t.backward(t.sum(out))
    assert grads["h"].tolist() == [1.0, 1.0]


def test_plain_relu_backward_contrast():
    t = Tape()
    h = t.leaf([-0.3, 0.7], name="h")
    grads = t.backward(t.sum(t.relu(h)))
    assert grads["h"].tolist() == [0.0, 1.0]


def test_detach():
    t = Tape()
    v = t.leaf([1.5], name="v")
    d = t.detach(v)
    assert d.value.tolist() == [1.5]
    loss = t.sum(t.scale(d, 7.0))
    grads = t.backward(loss)
    assert grads["v"].tolist() == [0.0]


def test_detach_blocks_only_its_branch():
    t = Tape()
    v = t.leaf([2.0], name="v")
    loss = t.sum(t.add(t.mul(v, t.detach(v)), v))
    # d/dv [v * c + v] with c = v held constant
    assert t.backward(loss)["v"].tolist() == [3.0]


def test_linear_and_tanh_grads():
    t = Tape()
    w = t.leaf([0.5, -1.0], name="w")
    grads = backward(t, t.sum(t.mul(w, t.const([2.0, 3.0]))))
    assert grads["w"].tolist() == [2.0, 3.0]

    t = Tape()
    w = t.leaf([0.0], name="w")
    assert t.backward(t.sum(t.tanh(w)))["w"].tolist() == [1.0]


def test_constants_receive_no_gradient():
    t = Tape()
    c = t.const([1.0, 2.0])
    w = t.leaf([3.0, 4.0], name="w")
    t.backward(t.sum(t.mul(c, w)))
    assert c.grad is None


def test_non_scalar_loss_is_usage_error():
    t = Tape()
    w = t.leaf([1.0, 2.0], name="w")
    with pytest.raises(UsageError, match="scalar"):
        t.backward(t.tanh(w))


def test_softmax_cross_entropy_values():
    t = Tape()
    loss = t.softmax_cross_entropy(t.const(np.zeros((1, 10))), [3])
    assert loss.value == pytest.approx(np.log(10), rel=1e-12)
    loss = t.softmax_cross_entropy(t.const([[1000.0, 0.0]]), [0])
    assert np.isfinite(loss.value) and loss.value == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ConfigurationError):
        t.softmax_cross_entropy(t.const([[0.0, 1.0]]), [2])


def test_spike_atan_surrogate():
    t = Tape()
    u = t.leaf([-0.5, 0.0, 0.5], name="u")
    s = t.spike_atan(u, slope=2.0)
    assert s.value.tolist() == [0.0, 0.0, 1.0]
    g = t.backward(t.sum(s))["u"]
    expected = (2.0 / np.pi) / (1.0 + (2.0 * np.array([-0.5, 0.0, 0.5])) ** 2)
    np.testing.assert_allclose(g, expected, rtol=1e-15)


def test_row_ops_reduce_over_batch():
    t = Tape()
    x = t.const(np.arange(6.0).reshape(2, 3))
    b = t.leaf([1.0, 1.0, 1.0], name="b")
    a = t.leaf([2.0, 2.0, 2.0], name="a")
    grads = t.backward(t.sum(t.add_row(t.mul_row(x, a), b)))
    assert grads["b"].tolist() == [2.0, 2.0, 2.0]
    assert grads["a"].tolist() == [3.0, 5.0, 7.0]


def test_first_nonfinite():
    t = Tape()
    a = t.const([1.0])
    assert t.first_nonfinite() is None
    bad = t.mul(a, t.const([np.inf]))
    assert t.first_nonfinite() is not None
    assert t.first_nonfinite() is not bad  # the inf const was recorded first


def _tape_loss(prog, leaf_values, mix):
    t = Tape()
    vals = [t.leaf(v, name=f"p{k}") for k, v in enumerate(leaf_values)]
    terms = []
    for (op, idx, c), m in zip(prog, mix):
        a = vals[idx[0]]
        if op == "scale":
            v = t.scale(a, c)
        elif op in ("tanh", "sigmoid", "relu"):
            v = t.apply(op, a)
        else:
            v = t.apply(op, a, vals[idx[1]])
        vals.append(v)
        terms.append(t.sum(t.mul(v, t.const(m))))
    loss = terms[0]
    for term in terms[1:]:
        loss = t.add(loss, term)
    return t, loss


@given(seed=st.integers(0, 2**32 - 1), length=st.integers(1, 8))
def test_random_graphs_match_finite_differences(seed, length):
    rng = np.random.default_rng(seed)
    leaves = [rng.normal(size=3) for _ in range(5)]
    prog = random_program(rng, len(leaves), length)
    mix = [rng.normal(size=3) for _ in prog]

    _, relu_inputs = run_program_numpy(prog, leaves, mix)
    assume(all(np.min(np.abs(a)) > 1e-3 for a in relu_inputs))

    tape, loss = _tape_loss(prog, leaves, mix)
    ref, _ = run_program_numpy(prog, leaves, mix)
    assert float(loss.value) == pytest.approx(ref, rel=1e-12, abs=1e-12)
    analytic = tape.backward(loss)

    params = {f"p{k}": v.copy() for k, v in enumerate(leaves)}
    numeric = central_difference(
        lambda: run_program_numpy(prog, [params[f"p{k}"] for k in range(5)], mix)[0], params
    )
    for name in params:
        np.testing.assert_allclose(analytic[name], numeric[name], rtol=1e-4, atol=1e-8)


@given(seed=st.integers(0, 2**32 - 1))
def test_custom_nodes_match_surrogate_differences(seed):
    rng = np.random.default_rng(seed)
    w0 = rng.normal(size=4)
    v0 = rng.normal(size=4)
    c = rng.normal(size=4)

    t = Tape()
    w = t.leaf(w0, name="w")
    v = t.leaf(v0, name="v")
    h = t.tanh(t.add(t.mul(w, t.detach(v)), v))
    loss = t.sum(t.mul(t.relu_bypass(h), t.const(c)))
    analytic = t.backward(loss)

    # surrogate: detached v frozen at v0, relu replaced by identity plus frozen offset
    h0 = np.tanh(w0 * v0 + v0)
    offset = np.maximum(h0, 0) - h0
    params = {"w": w0.copy(), "v": v0.copy()}

    def f():
        hh = np.tanh(params["w"] * v0 + params["v"])
        return float(np.sum((hh + offset) * c))

    numeric = central_difference(f, params)
    for name in params:
        np.testing.assert_allclose(analytic[name], numeric[name], rtol=1e-4, atol=1e-8)


@given(seed=st.integers(0, 2**32 - 1))
def test_backward_is_idempotent(seed):
    rng = np.random.default_rng(seed)
    t = Tape()
    w = t.leaf(rng.normal(size=(3, 4)), name="w")
    x = t.const(rng.normal(size=(2, 4)))
    loss = t.softmax_cross_entropy(t.tanh(t.matvec(w, x)), [0, 2])
    first = t.backward(loss)["w"].copy()
    second = t.backward(loss)["w"]
    assert np.array_equal(first, second)


@given(seed=st.integers(0, 2**32 - 1))
def test_softmax_cross_entropy_gradient(seed):
    rng = np.random.default_rng(seed)
    z0 = rng.normal(size=(3, 5)) * 3
    y = rng.integers(0, 5, size=3)
    t = Tape()
    z = t.leaf(z0, name="z")
    analytic = t.backward(t.softmax_cross_entropy(z, y))["z"]

    params = {"z": z0.copy()}

    def f():
        s = params["z"] - params["z"].max(axis=1, keepdims=True)
        return float(np.mean(np.log(np.exp(s).sum(axis=1)) - s[np.arange(3), y]))

    np.testing.assert_allclose(analytic, central_difference(f, params)["z"], rtol=1e-4, atol=1e-9)
