import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oplab import autodiff as ad
from oplab.autodiff import ParamStore, ShapeError, Tensor, backward, finite_diff_check
from oplab.models import ModelConfig, ModelVariant, forward, init_params

TOL = 1e-4


def _p(rng, *shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _check(f, params):
    errs = finite_diff_check(f, params)
    assert max(errs.values()) < TOL, errs
    return errs


# every differentiable op, each reduced to a scalar through a random projection
UNARY = {
    "sigmoid": ad.sigmoid,
    "tanh": ad.tanh,
    "relu": ad.relu,
    "softplus": ad.softplus,
    "abs": ad.abs_,
    "square": ad.square,
    "neg": ad.neg,
    "softmax0": lambda x: ad.softmax(x, axis=0),
    "softmax-1": lambda x: ad.softmax(x, axis=-1),
    "reshape": lambda x: ad.reshape(x, (4, 3)),
    "slice": lambda x: x[1:, ::2],
    "fancy-index": lambda x: x[[0, 2, 2]],
    "sum-axis": lambda x: ad.sum_(x, axis=1),
    "mean-keep": lambda x: ad.mean(x, axis=0, keepdims=True),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_op_gradients(name):
    unary_case(name)


def unary_case(name):
    rng = np.random.default_rng(0)
    x = _p(rng, 3, 4)
    # keep relu/abs away from their kink
    x.data[np.abs(x.data) < 0.05] += 0.1
    op = UNARY[name]
    probe = None

    def f():
        nonlocal probe
        y = op(x)
        if probe is None:
            probe = np.random.default_rng(1).normal(size=y.shape)
        return ad.sum_(y * probe)

    return _check(f, {"x": x})


BINARY = ["add", "sub", "mul", "matmul", "matmul-batched", "broadcast-add", "broadcast-mul",
          "concat", "stack"]


@pytest.mark.parametrize("name", BINARY)
def test_binary_op_gradients(name):
    binary_case(name)


def binary_case(name):
    rng = np.random.default_rng(2)
    if name == "matmul":
        a, b = _p(rng, 3, 4), _p(rng, 4, 2)
        op = ad.matmul
    elif name == "matmul-batched":
        a, b = _p(rng, 2, 3, 4), _p(rng, 4, 2)
        op = ad.matmul
    elif name == "broadcast-add":
        a, b = _p(rng, 3, 4), _p(rng, 4)
        op = ad.add
    elif name == "broadcast-mul":
        a, b = _p(rng, 2, 3, 4), _p(rng, 3, 1)
        op = ad.mul
    elif name == "concat":
        a, b = _p(rng, 3, 2), _p(rng, 3, 5)
        op = lambda u, v: ad.concat([u, v], axis=-1)
    elif name == "stack":
        a, b = _p(rng, 3, 2), _p(rng, 3, 2)
        op = lambda u, v: ad.stack([u, v], axis=1)
    else:
        a, b = _p(rng, 3, 4), _p(rng, 3, 4)
        op = {"add": ad.add, "sub": ad.sub, "mul": ad.mul}[name]
    probe = None

    def f():
        nonlocal probe
        y = op(a, b)
        if probe is None:
            probe = np.random.default_rng(3).normal(size=y.shape)
        return ad.sum_(y * probe)

    return _check(f, {"a": a, "b": b})


def test_lstm_sequence_gradients():
    lstm_case()


def lstm_case():
    rng = np.random.default_rng(4)
    store = ParamStore()
    ad.init_lstm(store, rng, "l", 3, 4)
    xs = _p(rng, 2, 5, 3)
    probe = rng.normal(size=(2, 5, 4))

    def f():
        return ad.sum_(ad.lstm_sequence(xs, store["l.W"], store["l.b"]) * probe)

    return _check(f, {"xs": xs, "W": store["l.W"], "b": store["l.b"]})


def test_fused_lstm_matches_reference_unroll():
    rng = np.random.default_rng(5)
    store = ParamStore()
    ad.init_lstm(store, rng, "l", 3, 6)
    xs = Tensor(rng.normal(size=(4, 7, 3)))
    probe = rng.normal(size=(4, 7, 6))
    W, b = store["l.W"], store["l.b"]

    fused = ad.lstm_sequence(xs, W, b)
    backward(ad.sum_(fused * probe))
    g_fused = W.grad.copy(), b.grad.copy()
    store.zero_grad()
    ref = ad.run_lstm_cells(xs, W, b)
    backward(ad.sum_(ref * probe))
    np.testing.assert_allclose(fused.data, ref.data, atol=1e-12)
    np.testing.assert_allclose(g_fused[0], W.grad, atol=1e-12)
    np.testing.assert_allclose(g_fused[1], b.grad, atol=1e-12)


def test_lstm_cell_matches_scalar_hand_computation():
    # one hidden unit, one input, forget gate bias large enough to saturate
    W = Tensor(np.array([[0.3, -0.2, 0.5, 0.1],
                         [0.4, 0.6, -0.7, 0.2]]))
    b = Tensor(np.array([0.1, 50.0, -0.3, 0.05]))
    x, h, c = 0.8, -0.5, 0.25
    h1, c1 = ad.lstm_cell(Tensor([[x]]), Tensor([[h]]), Tensor([[c]]), W, b)
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    zi = 0.3 * x + 0.4 * h + 0.1
    zg = 0.5 * x - 0.7 * h - 0.3
    zo = 0.1 * x + 0.2 * h + 0.05
    c_expected = c + sig(zi) * np.tanh(zg)      # forget gate ~ 1
    assert c1.data[0, 0] == pytest.approx(c_expected, abs=1e-12)
    assert h1.data[0, 0] == pytest.approx(sig(zo) * np.tanh(c_expected), abs=1e-12)


def test_lstm_cell_zero_weights():
    H = 3
    W = Tensor(np.zeros((2 + H, 4 * H)))
    b = Tensor(np.zeros(4 * H))
    h, c = ad.lstm_cell(Tensor(np.ones((1, 2))), Tensor(np.zeros((1, H))),
                        Tensor(np.full((1, H), 2.0)), W, b)
    # every gate is 0.5 and the candidate is 0
    np.testing.assert_allclose(c.data, 1.0)
    np.testing.assert_allclose(h.data, 0.5 * np.tanh(1.0))


def test_lstm_cell_shape_mismatch():
    with pytest.raises(ShapeError):
        ad.lstm_cell(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 3))),
                     Tensor(np.zeros((1, 3))), Tensor(np.zeros((4, 12))), Tensor(np.zeros(12)))


def test_opnet_end_to_end_gradients():
    opnet_case()


def opnet_case():
    """Full OPNet forward: 3 frames, K=3, hidden 8."""
    cfg = ModelConfig(ModelVariant.OPNET, slots=3, hidden=8, seed=1)
    params = init_params(cfg)
    rng = np.random.default_rng(6)
    obs = rng.uniform(size=(2, 3, 3, 5))
    obs[..., 4] = rng.integers(0, 2, size=(2, 3, 3))
    gt = rng.uniform(size=(2, 3, 4))

    def f():
        boxes, _ = forward(ModelVariant.OPNET, obs, params)
        return ad.mean(ad.abs_(boxes - gt))

    return _check(f, params)


@pytest.mark.parametrize("variant", ["opnet-mlp", "baseline-lstm", "nonlinear-lstm"])
def test_variant_gradients(variant):
    variant_case(variant)


def variant_case(variant):
    v = ModelVariant.parse(variant)
    cfg = ModelConfig(v, slots=2, hidden=5, baseline_hidden=6, embed=4, mlp_hidden=5, seed=2)
    params = init_params(cfg)
    rng = np.random.default_rng(7)
    obs = rng.uniform(size=(2, 3, 2, 5))
    probe = rng.normal(size=(2, 3, 4))

    def f():
        boxes, _ = forward(v, obs, params)
        return ad.sum_(boxes * probe)

    return _check(f, params)


def test_shared_parent_accumulates():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    y = ad.sum_(x * x + x)
    backward(y)
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3,), elements=st.floats(-3, 3)),
       st.floats(-2, 2), st.floats(-2, 2))
def test_backward_is_linear(xv, a, b):
    probe = np.array([0.3, -1.2, 0.7])

    def grad_of(fn):
        x = Tensor(xv.copy(), requires_grad=True)
        backward(fn(x))
        return x.grad

    f = lambda x: ad.sum_(ad.tanh(x) * probe)
    g = lambda x: ad.sum_(ad.square(x))
    combined = grad_of(lambda x: a * f(x) + b * g(x))
    np.testing.assert_allclose(combined, a * grad_of(f) + b * grad_of(g), atol=1e-12)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        backward(x * 2.0)


def test_no_graph_without_grad():
    y = ad.tanh(Tensor(np.ones(3))) * 2.0
    assert y._parents == ()


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


def test_sigmoid_is_stable():
    y = ad.sigmoid(Tensor(np.array([-1000.0, 0.0, 1000.0])))
    np.testing.assert_allclose(y.data, [0.0, 0.5, 1.0])


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------

def _adam_oracle(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return theta


def test_adam_matches_closed_form():
    store = ParamStore()
    store.add("w", np.array([0.5, -1.0]))
    state = ad.AdamState()
    seq = [np.array([0.1, -0.3]), np.array([0.2, 0.05]), np.array([-0.4, 0.1])]
    for g in seq:
        ad.adam_step(store, {"w": g}, state, 1e-3)
    expected = _adam_oracle(np.array([0.5, -1.0]), seq, 1e-3)
    np.testing.assert_allclose(store["w"].data, expected, atol=1e-15)


def test_adam_first_step_is_lr_times_sign():
    store = ParamStore()
    store.add("w", np.zeros(3))
    ad.adam_step(store, {"w": np.array([5.0, -0.01, 2.0])}, ad.AdamState(), 1e-3)
    np.testing.assert_allclose(store["w"].data, [-1e-3, 1e-3, -1e-3], rtol=1e-6)


def test_adam_state_round_trip():
    store = ParamStore()
    store.add("w", np.ones(2))
    st_ = ad.AdamState()
    ad.adam_step(store, {"w": np.ones(2)}, st_, 1e-2)
    again = ad.AdamState.from_dict(json.loads(json.dumps(st_.to_dict())))
    assert again.step == st_.step
    np.testing.assert_array_equal(again.m["w"], st_.m["w"])


def test_checkpoint_round_trip(tmp_path):
    store = init_params(ModelConfig(ModelVariant.OPNET, slots=3, hidden=4))
    ad.save_checkpoint(tmp_path / "m.json", store, {"note": "x"})
    tensors, meta = ad.load_checkpoint(tmp_path / "m.json")
    assert meta["note"] == "x"
    for k, p in store.items():
        np.testing.assert_array_equal(tensors[k], p.data)
