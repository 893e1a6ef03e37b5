import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from airl_interp.errors import ContractError, DataError, DimensionError, TrainingError
from airl_interp.numkit import (
    Adam,
    AdamConfig,
    Mlp,
    Sgd,
    SgdConfig,
    Tensor,
    concat,
    forward,
    load_checkpoint,
    make_optimizer,
    save_checkpoint,
    sigmoid,
    step,
)

from conftest import central_diff, rel_err


def _leaf(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


UNARY = {
    "tanh": lambda t: t.tanh(),
    "exp": lambda t: (t * 0.5).exp(),
    "log": lambda t: (t * t + 1.0).log(),
    "softplus": lambda t: t.softplus(),
    "log_sigmoid": lambda t: t.log_sigmoid(),
    "log_softmax": lambda t: t.log_softmax(axis=-1),
    "neg": lambda t: -t,
    "reshape": lambda t: t.reshape(-1),
    "transpose": lambda t: t.T,
    "getitem": lambda t: t[1:, ::2],
    "mean": lambda t: t.mean(axis=0),
    "pick": lambda t: t.pick(np.array([0, 2, 1])),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients_match_finite_differences(name, rng):
    x = _leaf(rng, 3, 4)
    w = rng.normal(size=UNARY[name](Tensor(x.data)).shape)

    def loss_value():
        return float((UNARY[name](Tensor(x.data)).data * w).sum())

    (UNARY[name](x) * w).sum().backward()
    assert rel_err(x.grad, central_diff(loss_value, x.data)) < 1e-6


BINARY = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "rsub": lambda a, b: 2.0 - a * b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / (b * b + 1.0),
    "rdiv": lambda a, b: 1.0 / (a * a + 1.0) + b,
    "matmul": lambda a, b: a @ b.T,
    "concat": lambda a, b: concat([a, b], axis=-1),
}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_gradients_match_finite_differences(name, rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
    out_shape = BINARY[name](Tensor(a.data), Tensor(b.data)).shape
    w = rng.normal(size=out_shape)

    def value():
        return float((BINARY[name](Tensor(a.data), Tensor(b.data)).data * w).sum())

    (BINARY[name](a, b) * w).sum().backward()
    assert rel_err(a.grad, central_diff(value, a.data)) < 1e-6
    assert rel_err(b.grad, central_diff(value, b.data)) < 1e-6


def test_broadcast_add_reduces_gradient_to_operand_shape(rng):
    a, b = _leaf(rng, 5, 3), _leaf(rng, 3)
    (a + b).sum().backward()
    assert b.grad.shape == (3,)
    np.testing.assert_allclose(b.grad, np.full(3, 5.0))


def test_gradients_accumulate_across_backward_calls(rng):
    x = _leaf(rng, 4)
    (x * 3.0).sum().backward()
    first = x.grad.copy()
    (x * 3.0).sum().backward()
    np.testing.assert_array_equal(x.grad, 2 * first)


def test_intermediate_nodes_do_not_keep_gradients(rng):
    x = _leaf(rng, 4)
    mid = x * 2.0
    (mid * mid).sum().backward()
    assert mid.grad is None
    assert x.grad is not None


def test_reused_node_sums_both_paths():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = x * x + x  # dy/dx = 2x + 1
    y.sum().backward()
    assert x.grad[0] == 7.0


def test_backward_rejects_non_scalar_loss(rng):
    x = _leaf(rng, 3)
    with pytest.raises(ContractError):
        (x * 2.0).backward()


def test_matmul_dimension_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((4, 5)))


def test_sigmoid_is_stable_at_extremes():
    out = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    np.testing.assert_array_equal(out, [0.0, 0.5, 1.0])


def test_softplus_does_not_overflow():
    t = Tensor(np.array([-800.0, 800.0]), requires_grad=True)
    out = t.softplus()
    assert np.all(np.isfinite(out.data))
    out.sum().backward()
    np.testing.assert_allclose(t.grad, [0.0, 1.0])


# -- MLP ---------------------------------------------------------------------

def test_mlp_init_is_seeded_and_bounded():
    a = Mlp.init([5, 7, 3], seed=9)
    b = Mlp.init([5, 7, 3], seed=9)
    np.testing.assert_array_equal(a.flat_weights(), b.flat_weights())
    for w, bias in zip(a.weights, a.biases):
        fan_out, fan_in = w.shape
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        assert np.all(np.abs(w.data) <= bound)
        assert np.all(bias.data == 0.0)
    assert not np.array_equal(Mlp.init([5, 7, 3], seed=10).flat_weights(), a.flat_weights())


def test_mlp_forward_matches_manual_computation(rng):
    net = Mlp.init([4, 6, 2], seed=1)
    x = rng.normal(size=(3, 4))
    h = np.tanh(x @ net.weights[0].data.T + net.biases[0].data)
    expected = h @ net.weights[1].data.T + net.biases[1].data
    np.testing.assert_allclose(forward(net, x).data, expected, rtol=0, atol=1e-14)
    np.testing.assert_array_equal(net.predict(x), forward(net, x).data)


def test_mlp_accepts_batched_leading_dims(rng):
    net = Mlp.init([4, 3], seed=0)
    assert net(rng.normal(size=(2, 5, 4))).shape == (2, 5, 3)


def test_mlp_rejects_wrong_input_width():
    net = Mlp.init([4, 3], seed=0)
    with pytest.raises(DimensionError, match=r"\(2, 5\)"):
        net.predict(np.zeros((2, 5)))


def test_mlp_rejects_inconsistent_arrays():
    with pytest.raises(DimensionError):
        Mlp.from_arrays([np.zeros((3, 4)), np.zeros((2, 5))], [np.zeros(3), np.zeros(2)])


@given(st.integers(0, 2**31 - 1))
def test_mlp_gradients_match_finite_differences_property(seed):
    rng = np.random.default_rng(seed)
    dims = [int(d) for d in rng.integers(1, 5, size=int(rng.integers(2, 4)))]
    net = Mlp.init(dims, seed=seed)
    x = rng.normal(size=(3, dims[0]))
    target = rng.normal(size=(3, dims[-1]))

    def value():
        return float(((net.predict(x) - target) ** 2).sum())

    net.zero_grad()
    d = forward(net, x) - target
    (d * d).sum().backward()
    for p in net.parameters():
        assert rel_err(p.grad, central_diff(value, p.data)) < 1e-5


# -- optimizers ----------------------------------------------------------------

def test_sgd_momentum_matches_hand_iteration():
    w = Tensor(np.array([1.0]), requires_grad=True)
    opt = Sgd([w], SgdConfig(learning_rate=0.1, momentum=0.5))
    grads = [2.0, 2.0, -1.0]
    v, expected = 0.0, 1.0
    for g in grads:
        w.grad = np.array([g])
        opt.step()
        v = 0.5 * v + g
        expected -= 0.1 * v
        assert w.data[0] == pytest.approx(expected, abs=1e-15)


def test_step_helper_carries_momentum_across_calls():
    net = Mlp.init([2, 1], seed=0)
    cfg = SgdConfig(learning_rate=0.1, momentum=0.9)
    for p in net.parameters():
        p.grad = np.ones_like(p.data)
    start = net.flat_weights()
    opt = step(net, cfg)
    opt = step(net, cfg, opt)
    # velocity after two steps is 1 then 1.9: total move 0.1 * 2.9
    np.testing.assert_allclose(net.flat_weights(), start - 0.29)


def test_sgd_config_validation():
    with pytest.raises(ValueError):
        SgdConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        SgdConfig(learning_rate=0.1, momentum=1.0)


def test_adam_first_step_moves_by_learning_rate():
    w = Tensor(np.array([0.0, 0.0]), requires_grad=True)
    opt = Adam([w], AdamConfig(learning_rate=0.01))
    w.grad = np.array([3.0, -0.2])
    opt.step()
    np.testing.assert_allclose(w.data, [-0.01, 0.01], atol=1e-8)


def test_nonfinite_gradient_raises_with_layer_index():
    net = Mlp.init([2, 3, 1], seed=0)
    for p in net.parameters():
        p.grad = np.zeros_like(p.data)
    net.weights[1].grad[0, 1] = np.nan
    opt = make_optimizer("sgd", net, 0.1)
    before = net.flat_weights()
    with pytest.raises(TrainingError) as info:
        opt.step()
    assert info.value.layer == 1
    np.testing.assert_array_equal(net.flat_weights(), before)


def test_optimizer_skips_params_without_grad():
    a = Tensor(np.array([1.0]), requires_grad=True)
    b = Tensor(np.array([1.0]), requires_grad=True)
    a.grad = np.array([1.0])
    make_optimizer("sgd", [a, b], 0.5).step()
    assert a.data[0] == 0.5 and b.data[0] == 1.0


def test_unknown_optimizer_kind():
    with pytest.raises(ValueError):
        make_optimizer("rmsprop", [], 0.1)


# -- checkpoints -------------------------------------------------------------

def test_checkpoint_round_trip_is_bit_exact(tmp_path, rng):
    net = Mlp.init([3, 8, 2], seed=4)
    for p in net.parameters():
        p.data += rng.normal(size=p.shape) * 1e-3  # awkward, non-round values
    path = tmp_path / "net.json"
    save_checkpoint(path, {"a": net}, {"note": "x"})
    nets, meta = load_checkpoint(path)
    assert meta == {"note": "x"}
    np.testing.assert_array_equal(nets["a"].flat_weights(), net.flat_weights())
    x = rng.normal(size=(5, 3))
    np.testing.assert_array_equal(nets["a"].predict(x), net.predict(x))


def test_checkpoint_rejects_foreign_documents(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"format": "something-else"}))
    with pytest.raises(DataError):
        load_checkpoint(path)
    path.write_text("{not json")
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_overflowing_update_raises_and_leaves_weights_alone():
    net = Mlp.init([2, 3, 1], seed=0)
    for p in net.parameters():
        p.grad = np.full_like(p.data, 1e300)
    before = net.flat_weights()
    with np.errstate(over="ignore"), pytest.raises(TrainingError) as info:
        make_optimizer("sgd", net, 1e300).step()
    assert info.value.layer == 0
    np.testing.assert_array_equal(net.flat_weights(), before)
