import numpy as np
import pytest

from diff_core import (
    AdamState,
    ParamSet,
    Tape,
    Tensor,
    adam_step,
    assign_params,
    backward,
    clamp_log,
    concat,
    conv1d,
    copy_params,
    current_dtype,
    dense,
    dropout,
    global_maxpool,
    grad_check,
    load_checkpoint,
    maxpool1d,
    mean,
    mul,
    precision,
    reduce_sum,
    relu,
    reshape,
    save_checkpoint,
    sgd_step,
    softmax,
)
from errors import InvariantError, NumericError, ShapeError, TapeError


def _params(group="encoder", **values):
    return ParamSet(group, {k: np.asarray(v, dtype=np.float64) for k, v in values.items()})


# --------------------------------
# Primitives
# --------------------------------


def test_conv1d_identity_kernel():
    out = conv1d([1.0, 2.0, 3.0], [1.0])
    np.testing.assert_allclose(out.data, [1.0, 2.0, 3.0])


def test_conv1d_sliding_sum():
    out = conv1d([1.0, 2.0, 3.0, 4.0], [1.0, 1.0])
    np.testing.assert_allclose(out.data, [3.0, 5.0, 7.0])


def test_conv1d_stride_and_same_padding_shapes():
    x = np.zeros((2, 3, 17))
    w = np.zeros((4, 3, 5))
    assert conv1d(x, w, stride=2).shape == (2, 4, 7)
    assert conv1d(x, w, stride=2, padding="same").shape == (2, 4, 9)
    assert conv1d(x, w, np.zeros(4), padding="same").shape == (2, 4, 17)


def test_conv1d_channel_mismatch():
    with pytest.raises(ShapeError) as info:
        conv1d(np.zeros((1, 2, 10)), np.zeros((4, 3, 3)))
    assert info.value.primitive == "conv1d"


def test_softmax_of_zeros_is_uniform():
    np.testing.assert_allclose(softmax(np.zeros(5)).data, np.full(5, 0.2))


def test_softmax_is_shift_invariant():
    x = np.array([[1.0, 2.0, 3.0], [1000.0, 1001.0, 1002.0]])
    out = softmax(x).data
    np.testing.assert_allclose(out[0], out[1], rtol=1e-6)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, rtol=1e-6)


def test_maxpool_and_global_maxpool():
    x = np.array([[[1.0, 5.0, 2.0, 2.0, 7.0, 0.0]]])
    np.testing.assert_allclose(maxpool1d(x, 2).data, [[[5.0, 2.0, 7.0]]])
    np.testing.assert_allclose(global_maxpool(x).data, [[7.0]])


def test_dense_shape_mismatch():
    with pytest.raises(ShapeError):
        dense(np.zeros((2, 3)), np.zeros((4, 5)))


def test_dropout_identity_outside_training(rng):
    x = Tensor(np.ones(100))
    assert dropout(x, 0.5, rng, train=False) is x


def test_dropout_rate_and_scaling(rng):
    out = dropout(np.ones(20000), 0.5, rng).data
    assert np.mean(out == 0) == pytest.approx(0.5, abs=0.02)
    np.testing.assert_allclose(np.unique(out), [0.0, 2.0])


def test_precision_selects_dtype():
    assert Tensor([1.0]).data.dtype == np.float32
    with precision(np.float64):
        assert current_dtype() is np.float64
        assert Tensor([1.0]).data.dtype == np.float64
    assert current_dtype() is np.float32


def test_checked_mode_reports_non_finite_values():
    with precision(np.float64, checked=True):
        with pytest.raises(NumericError):
            mul(Tensor([np.inf]), 0.0)
    assert not np.isfinite(mul(Tensor([np.inf]), 0.0).data).any()


# --------------------------------
# Reverse pass
# --------------------------------


def test_square_gradient():
    ps = _params(w=3.0)
    tape = Tape()
    with tape:
        w = ps.var("w")
        loss = mul(w, w)
    assert backward(tape, loss) == pytest.approx(9.0)
    assert ps.grads["w"] == pytest.approx(6.0)
    assert len(tape) == 0


def test_unused_parameter_gets_exact_zero():
    ps = _params(w=2.0, c=[1.0, -4.0])
    ps.grads["c"][...] = 99.0
    tape = Tape()
    with tape:
        w = ps.var("w")
        c = ps.var("c")
        loss = mul(w, w) + reduce_sum(mul(c, 0.0))
    backward(tape, loss)
    np.testing.assert_array_equal(ps.grads["c"], [0.0, 0.0])


def test_accumulate_adds_to_existing_gradients():
    ps = _params(w=[1.0, 2.0])
    for accumulate in (False, True):
        tape = Tape()
        with tape:
            loss = reduce_sum(mul(ps.var("w"), 3.0))
        backward(tape, loss, accumulate=accumulate)
    np.testing.assert_allclose(ps.grads["w"], [6.0, 6.0])


def test_backward_without_forward_pass():
    with pytest.raises(TapeError):
        backward(Tape(), Tensor(1.0))


def test_backward_requires_scalar_loss():
    ps = _params(w=[1.0, 2.0])
    tape = Tape()
    with tape:
        out = mul(ps.var("w"), 2.0)
    with pytest.raises(ShapeError):
        backward(tape, out)


def test_nothing_is_recorded_without_a_tape():
    ps = _params(w=[1.0])
    mul(ps.var("w"), 2.0)
    tape = Tape()
    with tape:
        mul(Tensor([1.0]), 2.0)
    assert len(tape) == 0


def test_gradients_are_deterministic():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 2, 20))

    def run():
        ps = _params(k=np.linspace(-1, 1, 12).reshape(2, 2, 3), b=[0.1, -0.2])
        tape = Tape()
        with tape:
            h = relu(conv1d(x, ps.var("k"), ps.var("b"), stride=2))
            loss = mean(global_maxpool(h))
        backward(tape, loss)
        return ps.grads["k"].copy(), ps.grads["b"].copy()

    first, second = run(), run()
    np.testing.assert_array_equal(first[0], second[0])
    np.testing.assert_array_equal(first[1], second[1])


# --------------------------------
# Gradient checking
# --------------------------------


def test_grad_check_linear_function():
    ps = _params(w=[0.5, -1.5, 2.0])
    coeff = np.array([3.0, -2.0, 0.25])
    result = grad_check(lambda: reduce_sum(mul(ps.var("w"), coeff)), ps, h=1e-3)
    assert result.n_checked == 3
    assert result.max_rel_error < 1e-10


def test_grad_check_skips_relu_kinks():
    ps = _params(w=[0.0, 1.0, -1.0])
    result = grad_check(lambda: reduce_sum(relu(ps.var("w"))), ps)
    assert result.skipped == [("encoder", "w", 0)]
    assert result.n_checked == 2
    assert result.passed(1e-8)


@pytest.mark.parametrize("stride,padding", [(1, "valid"), (2, "same"), (3, 2)])
def test_grad_check_conv_pool_dense_stack(stride, padding):
    rng = np.random.default_rng(stride)
    enc = _params(k=rng.normal(size=(3, 2, 4)), b=rng.normal(size=3))
    head = _params("sl_head", w=rng.normal(size=(3, 5)), c=rng.normal(size=5))
    inputs = _params("ssl_head", x=rng.normal(size=(2, 2, 13)))

    def f():
        h = relu(conv1d(inputs.var("x"), enc.var("k"), enc.var("b"), stride=stride, padding=padding))
        h = maxpool1d(h, 2)
        z = global_maxpool(h)
        p = softmax(dense(z, head.var("w"), head.var("c")))
        return mean(clamp_log(p))

    result = grad_check(f, [enc, head, inputs])
    assert result.n_checked > 0
    assert result.passed(1e-6)


def test_grad_check_reshape_and_concat():
    ps = _params(a=np.arange(6.0).reshape(2, 3), b=[1.0, 2.0])

    def f():
        joined = concat([reshape(ps.var("a"), (6,)), ps.var("b")])
        return reduce_sum(mul(joined, joined))

    assert grad_check(f, ps, h=1e-3).passed(1e-6)


def test_grad_check_kernel_longer_than_output():
    rng = np.random.default_rng(9)
    ps = _params(x=rng.normal(size=(1, 2, 6)), k=rng.normal(size=(2, 2, 4)))

    def f():
        out = conv1d(ps.var("x"), ps.var("k"), stride=3)
        return reduce_sum(mul(out, out))

    assert conv1d(ps["x"], ps["k"], stride=3).shape == (1, 2, 1)
    assert grad_check(f, ps, h=1e-4).passed(1e-6)


def test_grad_check_keeps_parameter_dtype():
    ps = ParamSet("encoder", {"w": np.array([0.5, -1.5, 2.0], dtype=np.float32)})
    before = ps["w"].copy()
    coeff = np.array([3.0, -2.0, 0.25])
    grad_check(lambda: reduce_sum(mul(ps.var("w"), coeff)), ps, h=1e-3)
    assert ps["w"].dtype == np.float32
    assert ps.grads["w"].dtype == np.float32
    np.testing.assert_array_equal(ps["w"], before)
    np.testing.assert_allclose(ps.grads["w"], coeff, rtol=1e-6)


# --------------------------------
# Optimizers
# --------------------------------


def test_sgd_step():
    ps = _params(p=1.0)
    ps.grads["p"][...] = 2.0
    sgd_step(ps, 0.1)
    assert ps["p"] == pytest.approx(0.8)


def test_sgd_zero_rate_leaves_parameters():
    ps = _params(p=[1.0, -3.0])
    ps.grads["p"][...] = 5.0
    sgd_step(ps, 0.0)
    np.testing.assert_array_equal(ps["p"], [1.0, -3.0])


def test_adam_zero_gradient_is_identity():
    ps = _params(p=[1.0, -2.0])
    state = AdamState.for_params(ps)
    adam_step(ps, state, 1e-3)
    np.testing.assert_array_equal(ps["p"], [1.0, -2.0])
    assert state.t == 1


def test_adam_first_step():
    ps = _params(p=1.0)
    ps.grads["p"][...] = 0.5
    state = AdamState.for_params(ps)
    adam_step(ps, state, 1e-4)
    assert ps["p"] == pytest.approx(1.0 - 1e-4 * 0.5 / (0.5 + 1e-8), abs=1e-12)


def test_adam_constant_gradient_trace():
    # With a constant gradient the bias-corrected moments equal g and g**2
    ps = _params(p=0.0)
    state = AdamState.for_params(ps)
    for _ in range(2):
        ps.grads["p"][...] = 0.5
        adam_step(ps, state, 0.01)
    assert ps["p"] == pytest.approx(-2 * 0.01 * 0.5 / (0.5 + 1e-8), abs=1e-12)
    assert state.m["p"] == pytest.approx(0.095)
    assert state.v["p"] == pytest.approx(0.00049975)


# --------------------------------
# Parameter sets and checkpoints
# --------------------------------


def test_unknown_group_is_rejected():
    with pytest.raises(InvariantError):
        ParamSet("decoder")


def test_copy_is_isolated():
    src = _params(w=[1.0, 2.0, 3.0])
    before = src["w"].copy()
    dup = copy_params(src)
    dup.grads["w"][...] = 1.0
    sgd_step(dup, 0.5)
    np.testing.assert_array_equal(src["w"], before)
    np.testing.assert_array_equal(dup["w"], before - 0.5)


def test_assign_copies_values():
    dst = _params(w=[0.0, 0.0])
    src = _params(w=[4.0, 5.0])
    assign_params(dst, src)
    np.testing.assert_array_equal(dst["w"], src["w"])
    src["w"][0] = -1.0
    assert dst["w"][0] == 4.0


def test_assign_rejects_mismatched_sets():
    with pytest.raises(ShapeError):
        assign_params(_params(w=[0.0]), _params(v=[0.0]))
    with pytest.raises(ShapeError):
        assign_params(_params(w=[0.0]), _params(w=[0.0, 1.0]))


def test_checkpoint_round_trip(tmp_path):
    enc = _params(k=np.arange(12.0).reshape(2, 2, 3), b=[0.5, -0.5])
    head = ParamSet("sl_head", {"w": np.ones((4, 5), dtype=np.float32)})
    state = AdamState.for_params(enc)
    enc.grads["b"][...] = 1.0
    adam_step(enc, state, 0.1)

    save_checkpoint(tmp_path / "ckpt", [enc, head], {"encoder": state}, {"iteration": 7, "mode": "S2MAML"})
    params, states, meta = load_checkpoint(tmp_path / "ckpt")

    assert sorted(params) == ["encoder", "sl_head"]
    np.testing.assert_array_equal(params["encoder"]["k"], enc["k"])
    np.testing.assert_array_equal(params["encoder"]["b"], enc["b"])
    assert params["sl_head"]["w"].dtype == np.float32
    assert states["encoder"].t == 1
    np.testing.assert_array_equal(states["encoder"].m["b"], state.m["b"])
    assert meta == {"iteration": 7, "mode": "S2MAML"}
