import numpy as np
import pytest

from plateattn import autograd as ag
from plateattn.autograd import (
    ContractViolation,
    Tape,
    Tensor,
    backward,
    precision,
)
from helpers import (
    fd_gradcheck,
    naive_max_pool,
    naive_separable_conv2d,
    rand_tensor,
)


@pytest.fixture(autouse=True)
def double_precision():
    with precision(np.float64):
        yield


# ---------------------------------------------------------------- separable conv

def test_separable_conv_hand_example():
    # all-ones 3x3 input and depthwise weight, pointwise [2]: depthwise sum 9, x2
    x = Tensor(np.ones((1, 3, 3)))
    dw = Tensor(np.ones((1, 3, 3)))
    pw = Tensor([[2.0]])
    out = ag.separable_conv2d(x, dw, pw, stride=1, padding=0)
    assert out.shape == (1, 1, 1)
    assert out.item() == pytest.approx(18.0)


def test_separable_conv_identity():
    rng = np.random.default_rng(3)
    x = Tensor(rng.uniform(0, 1, (2, 5, 7)))
    delta = np.zeros((2, 3, 3))
    delta[:, 1, 1] = 1.0  # centered delta kernel
    out = ag.separable_conv2d(x, Tensor(delta), Tensor(np.eye(2)), padding=1)
    np.testing.assert_allclose(out.data, x.data, atol=1e-12)


def test_separable_parameter_count():
    c, k = 256, 3
    depthwise = c * k * k
    pointwise = c * c
    assert depthwise + pointwise == 67840
    assert c * c * k * k == 589824  # standard conv equivalent


@pytest.mark.parametrize("seed", range(5))
def test_separable_conv_matches_naive(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 8, 8))
    dw = rng.standard_normal((1, 3, 3))
    pw = rng.standard_normal((2, 1))
    got = ag.separable_conv2d(Tensor(x), Tensor(dw), Tensor(pw), padding=1)
    want = naive_separable_conv2d(x, dw, pw, padding=1)
    np.testing.assert_allclose(got.data, want, atol=1e-10)


def test_separable_conv_shape_errors():
    x = Tensor(np.ones((2, 4, 4)))
    with pytest.raises(ContractViolation, match="channel"):
        ag.separable_conv2d(x, Tensor(np.ones((3, 3, 3))), Tensor(np.ones((1, 3))))
    with pytest.raises(ContractViolation, match="odd"):
        ag.depthwise_conv2d(x, Tensor(np.ones((2, 2, 2))))


def test_separable_conv_gradcheck():
    rng = np.random.default_rng(0)
    x = rand_tensor(rng, (1, 2, 5, 6))
    dw = rand_tensor(rng, (2, 3, 3))
    pw = rand_tensor(rng, (3, 2))
    fd_gradcheck(lambda *a: ag.tsum(ag.separable_conv2d(a[0], a[1], a[2], padding=1)),
                 [x, dw, pw])


def test_depthwise_stride2_gradcheck():
    rng = np.random.default_rng(1)
    x = rand_tensor(rng, (1, 2, 6, 6))
    dw = rand_tensor(rng, (2, 3, 3))
    fd_gradcheck(
        lambda *a: ag.tsum(ag.mul(ag.depthwise_conv2d(a[0], a[1], stride=2, padding=1),
                                  ag.depthwise_conv2d(a[0], a[1], stride=2, padding=1))),
        [x, dw],
    )


# ---------------------------------------------------------------- max pool

def test_max_pool_basic():
    out = ag.max_pool2d(Tensor([[[1.0, 2.0], [3.0, 4.0]]]), 2, 2)
    assert out.data.reshape(-1)[0] == 4.0


def test_max_pool_constant():
    x = Tensor(np.full((1, 4, 4), 0.7))
    out = ag.max_pool2d(x, 2, 2)
    np.testing.assert_allclose(out.data, 0.7)


def test_max_pool_matches_naive():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((1, 6, 6))
    got = ag.max_pool2d(Tensor(x), 2, 2)
    np.testing.assert_allclose(got.data, naive_max_pool(x, 2, 2))


def test_max_pool_tie_gradient_lowest_flat_index():
    x = Tensor(np.ones((1, 2, 2)), requires_grad=True)
    with Tape() as tape:
        out = ag.tsum(ag.max_pool2d(x, 2, 2))
    backward(out, tape)
    expect = np.zeros((1, 2, 2))
    expect[0, 0, 0] = 1.0
    np.testing.assert_allclose(x.grad, expect)


def test_max_pool_window_too_large():
    with pytest.raises(ContractViolation):
        ag.max_pool2d(Tensor(np.ones((1, 2, 2))), 3, 1)


def test_max_pool_gradcheck():
    rng = np.random.default_rng(2)
    x = rand_tensor(rng, (1, 2, 6, 6))
    fd_gradcheck(lambda t: ag.tsum(ag.mul(ag.max_pool2d(t, 2, 2),
                                          ag.max_pool2d(t, 2, 2))), [x])


# ---------------------------------------------------------------- affine

def test_affine_identity():
    x = Tensor([1.0, 2.0, 3.0])
    out = ag.affine(x, Tensor(np.eye(3)), Tensor(np.zeros(3)))
    np.testing.assert_allclose(out.data, x.data)


def test_affine_hand():
    out = ag.affine(Tensor([2.0, 3.0]), Tensor([[1.0, 1.0]]), Tensor([0.5]))
    assert out.item() == pytest.approx(5.5)


def test_affine_grad_w_is_outer_product():
    x = Tensor([2.0, 3.0])
    W = Tensor(np.zeros((2, 2)), requires_grad=True)
    b = Tensor(np.zeros(2))
    with Tape() as tape:
        out = ag.tsum(ag.affine(x, W, b))
    backward(out, tape)
    np.testing.assert_allclose(W.grad, np.outer(np.ones(2), x.data))
    fd_gradcheck(lambda w: ag.tsum(ag.affine(x, w, b)), [W])


def test_affine_dim_mismatch():
    with pytest.raises(ContractViolation):
        ag.affine(Tensor([1.0, 2.0]), Tensor(np.ones((2, 3))), Tensor(np.zeros(2)))


# ---------------------------------------------------------------- activations

def test_softmax_uniform():
    out = ag.softmax(Tensor([3.3, 3.3, 3.3, 3.3]))
    np.testing.assert_allclose(out.data, 0.25)


def test_tanh_relu_basics():
    assert ag.tanh(Tensor([0.0])).item() == 0.0
    assert ag.relu(Tensor([-1.0])).item() == 0.0


def test_softmax_overflow_stability():
    out = ag.softmax(Tensor([1000.0, 1000.0]))
    np.testing.assert_allclose(out.data, [0.5, 0.5])
    assert np.isfinite(out.data).all()


def test_softmax_sums_and_range():
    rng = np.random.default_rng(5)
    x = Tensor(rng.standard_normal((7, 9)) * 10)
    out = ag.softmax(x, axis=1)
    np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-6)
    assert (out.data > 0).all() and (out.data < 1).all()


def test_softmax_permutation_equivariance():
    rng = np.random.default_rng(6)
    x = rng.standard_normal(8)
    perm = rng.permutation(8)
    a = ag.softmax(Tensor(x)).data
    b = ag.softmax(Tensor(x[perm])).data
    np.testing.assert_allclose(a[perm], b, atol=1e-12)


def test_masked_softmax_zero_mass():
    x = Tensor(np.array([[1.0, 5.0, 2.0, 9.0]]))
    mask = np.array([[True, True, False, False]])
    out = ag.softmax(x, axis=1, mask=mask)
    assert out.data[0, 2] == 0.0 and out.data[0, 3] == 0.0
    assert out.data.sum() == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("op", [ag.relu, ag.tanh, ag.sigmoid,
                                lambda t: ag.softmax(t, axis=-1)])
def test_activation_gradchecks(op):
    rng = np.random.default_rng(7)
    x = rand_tensor(rng, (3, 5))
    fd_gradcheck(lambda t: ag.tsum(ag.mul(op(t), ag.tanh(t))), [x])


# ---------------------------------------------------------------- lstm cell

def _lstm_args(rng, d_in=3, hd=4, zero=False):
    x = rand_tensor(rng, (d_in,), scale=0.5)
    h = rand_tensor(rng, (hd,), scale=0.5)
    c = rand_tensor(rng, (hd,), scale=0.5)
    scale = 0.0 if zero else 0.5
    W = rand_tensor(rng, (4 * hd, d_in + hd), scale=scale)
    b = Tensor(np.zeros(4 * hd), requires_grad=True)
    return x, h, c, W, b


def test_lstm_zero_weights_zero_hidden():
    rng = np.random.default_rng(8)
    x, h, c, W, b = _lstm_args(rng, zero=True)
    h2, c2 = ag.lstm_cell(x, h, c, W, b)
    np.testing.assert_allclose(h2.data, np.tanh(c2.data) * 0.5, atol=1e-12)
    x0 = Tensor(np.zeros(3))
    c0 = Tensor(np.zeros(4))
    hz, _ = ag.lstm_cell(x0, Tensor(np.zeros(4)), c0, W, b)
    np.testing.assert_allclose(hz.data, 0.0, atol=1e-12)


def test_lstm_cell_state_bounded():
    rng = np.random.default_rng(9)
    x, h, c, W, b = _lstm_args(rng)
    _, c2 = ag.lstm_cell(x, h, c, W, b)
    assert (np.abs(c2.data) <= np.abs(c.data) + 1 + 1e-12).all()


def test_lstm_gradcheck():
    rng = np.random.default_rng(10)
    x, h, c, W, b = _lstm_args(rng)

    def f(x, h, c, W, b):
        h2, c2 = ag.lstm_cell(x, h, c, W, b)
        return ag.add(ag.tsum(ag.mul(h2, h2)), ag.tsum(ag.mul(c2, c2)))

    fd_gradcheck(f, [x, h, c, W, b])


def test_lstm_weight_shape_error():
    with pytest.raises(ContractViolation):
        ag.lstm_cell(Tensor(np.zeros(3)), Tensor(np.zeros(4)), Tensor(np.zeros(4)),
                     Tensor(np.zeros((16, 8))), Tensor(np.zeros(16)))


# ---------------------------------------------------------------- cross entropy

def test_cross_entropy_confident_limit():
    losses = []
    for scale in (2.0, 5.0, 10.0, 50.0):
        logits = Tensor(np.eye(5)[[2]] * scale)
        losses.append(ag.cross_entropy(logits, [2]).item())
    assert losses[0] > losses[1] > losses[2]  # decreasing as confidence grows
    assert losses[-1] < 1e-10


def test_cross_entropy_uniform_is_log_vocab():
    logits = Tensor(np.zeros((3, 68)))
    loss = ag.cross_entropy(logits, [0, 5, 67])
    assert loss.item() == pytest.approx(np.log(68), abs=1e-6)
    assert np.log(68) == pytest.approx(4.2195, abs=1e-4)


def test_cross_entropy_out_of_range():
    with pytest.raises(ContractViolation):
        ag.cross_entropy(Tensor(np.zeros((2, 4))), [0, 4])


def test_cross_entropy_gradcheck():
    rng = np.random.default_rng(12)
    logits = rand_tensor(rng, (4, 6))
    fd_gradcheck(lambda t: ag.cross_entropy(t, [1, 0, 5, 3]), [logits])


# ---------------------------------------------------------------- backward

def test_backward_sum_gives_ones():
    x = Tensor(np.random.default_rng(0).standard_normal((3, 4)), requires_grad=True)
    with Tape() as tape:
        loss = ag.tsum(x)
    backward(loss, tape)
    np.testing.assert_allclose(x.grad, 1.0)


def test_backward_quadratic():
    x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    with Tape() as tape:
        loss = ag.tsum(ag.mul(x, x))
    backward(loss, tape)
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_backward_fanout_accumulates():
    x = Tensor([2.0], requires_grad=True)
    with Tape() as tape:
        loss = ag.add(ag.tsum(ag.mul(x, x)), ag.tsum(ag.mul(x, 3.0)))
    backward(loss, tape)
    np.testing.assert_allclose(x.grad, [2 * 2.0 + 3.0])


def test_backward_non_scalar_rejected():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = ag.mul(x, x)
    with pytest.raises(ContractViolation):
        backward(y, tape)


def test_backward_double_replay_rejected():
    x = Tensor([1.0], requires_grad=True)
    with Tape() as tape:
        loss = ag.tsum(x)
    backward(loss, tape)
    with pytest.raises(ContractViolation):
        backward(loss, tape)


def test_forward_outputs_finite():
    rng = np.random.default_rng(13)
    x = Tensor(rng.standard_normal((2, 3, 8, 8)))
    dw = Tensor(rng.standard_normal((3, 3, 3)))
    pw = Tensor(rng.standard_normal((4, 3)))
    out = ag.separable_conv2d(x, dw, pw, padding=1)
    out = ag.softmax(ag.reshape(ag.max_pool2d(out, 2, 2), (2, -1)), axis=1)
    assert np.isfinite(out.data).all()


# ---------------------------------------------------------------- misc ops

def test_gather_rows_grad():
    W = Tensor(np.arange(12.0).reshape(4, 3), requires_grad=True)
    with Tape() as tape:
        out = ag.tsum(ag.gather_rows(W, [1, 1, 3]))
    backward(out, tape)
    expect = np.zeros((4, 3))
    expect[1] = 2.0
    expect[3] = 1.0
    np.testing.assert_allclose(W.grad, expect)


def test_concat_slice_reshape_gradcheck():
    rng = np.random.default_rng(14)
    a = rand_tensor(rng, (2, 3))
    b = rand_tensor(rng, (2, 2))

    def f(a, b):
        c = ag.concat([a, b], axis=1)
        return ag.tsum(ag.mul(c[:, 1:4], c[:, 1:4]))

    fd_gradcheck(f, [a, b])


def test_upsample_nearest_gradcheck():
    rng = np.random.default_rng(15)
    x = rand_tensor(rng, (1, 2, 3, 3))
    fd_gradcheck(lambda t: ag.tsum(ag.mul(ag.upsample_nearest(t, 2),
                                          ag.upsample_nearest(t, 2))), [x])
