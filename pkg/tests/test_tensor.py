import math

import numpy as np
import pytest

from osmamba.tensor import (
    DomainError,
    GradTape,
    ShapeError,
    TapeError,
    Tensor,
    conv2d,
    gradient_check,
    no_grad,
    ops,
)


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


def naive_conv(x, k, padding, groups=1):
    ci, h, w = x.shape
    co, cig, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    ho, wo = h + 2 * padding - kh + 1, w + 2 * padding - kw + 1
    cog = co // groups
    out = np.zeros((co, ho, wo))
    for o in range(co):
        g = o // cog
        for i in range(ho):
            for j in range(wo):
                s = 0.0
                for c in range(cig):
                    for dy in range(kh):
                        for dx in range(kw):
                            s += xp[g * cig + c, i + dy, j + dx] * k[o, c, dy, dx]
                out[o, i, j] = s
    return out


# elementwise ----------------------------------------------------------------


def test_elementwise_examples():
    assert ops.silu(Tensor(0.0)).item() == 0.0
    assert abs(ops.softplus(Tensor(0.0)).item() - math.log(2.0)) < 1e-15
    np.testing.assert_array_equal(ops.add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).data, [4.0, 6.0])
    np.testing.assert_array_equal(ops.elementwise("relu", Tensor([-1.0, 2.0])).data, [0.0, 2.0])
    np.testing.assert_array_equal(ops.elementwise("clip", Tensor([-1.0, 0.5, 2.0]), lo=0.0, hi=1.0).data, [0.0, 0.5, 1.0])


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4,\)"):
        ops.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros(4)))


def test_domain_errors():
    with pytest.raises(DomainError):
        ops.log(Tensor([1.0, 0.0]))
    with pytest.raises(DomainError):
        ops.div(Tensor([1.0]), Tensor([0.0]))


def test_broadcast_add_commutes_and_associates_bitwise():
    rng = np.random.default_rng(0)
    a, b, c = rng.normal(size=(3, 4)), rng.normal(size=(4,)), rng.normal(size=(1, 4))
    np.testing.assert_array_equal(ops.add(a, b).data, ops.add(b, a).data)
    left = ops.add(ops.add(a, b), c).data
    again = ops.add(ops.add(a, b), c).data
    np.testing.assert_array_equal(left, again)


@pytest.mark.parametrize("name", ["exp", "softplus", "silu", "gelu", "sigmoid", "negate", "square", "sin", "cos"])
def test_unary_gradients(name):
    rng = np.random.default_rng(1)
    fn = getattr(ops, name)
    for _ in range(10):
        x = rng.normal(size=(3, 2))
        assert gradient_check(lambda t: ops.sum(fn(t)), x) < 1e-5


def test_binary_and_positive_domain_gradients():
    rng = np.random.default_rng(2)
    for _ in range(10):
        x = rng.uniform(0.5, 2.0, size=(4,))
        y = rng.uniform(0.5, 2.0, size=(4,))
        assert gradient_check(lambda t: ops.sum(ops.log(t)), x) < 1e-5
        assert gradient_check(lambda t: ops.sum(ops.sqrt(t)), x) < 1e-5
        assert gradient_check(lambda t: ops.sum(ops.div(y, t)), x) < 1e-5
        assert gradient_check(lambda t: ops.sum(ops.mul(t, ops.sub(t, y))), x) < 1e-5
        assert gradient_check(lambda t: ops.sum(ops.hypot(t, y)), x) < 1e-5
        assert gradient_check(lambda t: ops.sum(ops.atan2(y, t)), x) < 1e-5
        # kinks kept away from the sample points
        z = np.where(rng.random(4) < 0.5, -1.0, 1.0) * x
        assert gradient_check(lambda t: ops.sum(ops.relu(t)), z) < 1e-5
        assert gradient_check(lambda t: ops.sum(ops.abs(t)), z) < 1e-5
        assert gradient_check(lambda t: ops.sum(ops.clip(t, -0.25, 0.25)), z) < 1e-5


# linear algebra ---------------------------------------------------------------


def test_linear_examples():
    w = np.array([[2.0, 3.0], [5.0, 7.0]])
    np.testing.assert_array_equal(ops.linear(Tensor([1.0, 0.0]), w).data, [2.0, 3.0])
    np.testing.assert_array_equal(ops.linear(Tensor([1.0, 1.0]), w, np.ones(2)).data, [8.0, 11.0])
    with pytest.raises(ShapeError):
        ops.linear(Tensor(np.zeros(3)), w)


def test_linear_matches_naive_matmul():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    assert np.max(np.abs(ops.linear(a, b).data - naive_matmul(a, b))) < 1e-12
    assert np.max(np.abs(ops.matmul(a, b).data - naive_matmul(a, b))) < 1e-12


def test_linear_gradients():
    rng = np.random.default_rng(4)
    x, w, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5)), rng.normal(size=(5,))
    assert gradient_check(lambda t: ops.sum(ops.square(ops.linear(t, w, b))), x) < 1e-5
    assert gradient_check(lambda t: ops.sum(ops.square(ops.linear(x, t, b))), w) < 1e-5
    assert gradient_check(lambda t: ops.sum(ops.square(ops.linear(x, w, t))), b) < 1e-5


# conv2d -----------------------------------------------------------------------


def test_conv_ones_example():
    out = conv2d(np.ones((1, 3, 3)), np.ones((1, 1, 3, 3)), padding=1).data
    assert out[0, 1, 1] == 9.0
    assert out[0, 0, 0] == 4.0


def test_conv_identity_kernel():
    x = np.random.default_rng(5).normal(size=(3, 4, 5))
    k = np.eye(3).reshape(3, 3, 1, 1)
    np.testing.assert_array_equal(conv2d(x, k).data, x)


@pytest.mark.parametrize("groups,ci,co,ksize,pad", [(1, 3, 4, 3, 1), (1, 2, 2, 1, 0), (3, 3, 3, 3, 1), (2, 4, 6, 3, 0)])
def test_conv_matches_naive(groups, ci, co, ksize, pad):
    rng = np.random.default_rng(6)
    x = rng.normal(size=(ci, 6, 5))
    k = rng.normal(size=(co, ci // groups, ksize, ksize))
    out = conv2d(x, k, padding=pad, groups=groups).data
    assert np.max(np.abs(out - naive_conv(x, k, pad, groups))) < 1e-10


def test_conv_channels_last_and_stride():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(2, 3, 6, 6))
    k = rng.normal(size=(4, 3, 3, 3))
    first = conv2d(x, k, padding=1).data
    nhwc = conv2d(np.transpose(x, (0, 2, 3, 1)), k, padding=1, channels_last=True).data
    np.testing.assert_allclose(np.transpose(nhwc, (0, 3, 1, 2)), first, atol=1e-12)
    strided = conv2d(x, k, stride=2, padding=1).data
    np.testing.assert_allclose(strided, first[:, :, ::2, ::2], atol=1e-12)


def test_conv_errors():
    with pytest.raises(ShapeError):
        conv2d(np.zeros((3, 4, 4)), np.zeros((2, 1, 3, 3)), groups=2)
    with pytest.raises(ShapeError):
        conv2d(np.zeros((1, 2, 2)), np.zeros((1, 1, 5, 5)))


@pytest.mark.parametrize("groups", [1, 2])
def test_conv_gradients(groups):
    rng = np.random.default_rng(8)
    x = rng.normal(size=(2, 4, 5, 4))
    k = rng.normal(size=(2, 4 // groups, 3, 3))
    b = rng.normal(size=(2,))
    assert gradient_check(lambda t: ops.sum(ops.square(conv2d(t, k, b, padding=1, groups=groups))), x) < 1e-5
    assert gradient_check(lambda t: ops.sum(ops.square(conv2d(x, t, b, padding=1, groups=groups))), k) < 1e-5
    assert gradient_check(lambda t: ops.sum(ops.square(conv2d(x, k, t, padding=1, groups=groups))), b) < 1e-5


def test_depthwise_conv_gradient():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(1, 5, 4, 3))
    k = rng.normal(size=(3, 1, 3, 3))
    f = lambda t: ops.sum(ops.square(conv2d(t, k, padding=1, groups=3, channels_last=True)))  # noqa: E731
    assert gradient_check(f, x) < 1e-5
    g = lambda t: ops.sum(ops.square(conv2d(x, t, padding=1, groups=3, channels_last=True)))  # noqa: E731
    assert gradient_check(g, k) < 1e-5


# layer norm / softmax -----------------------------------------------------------


def test_layer_norm_examples():
    out = ops.layer_norm(Tensor(np.full(4, 3.0)), np.ones(4), np.zeros(4)).data
    np.testing.assert_array_equal(out, np.zeros(4))
    out = ops.layer_norm(Tensor([1.0, -1.0]), np.ones(2), np.zeros(2), eps=1e-300).data
    np.testing.assert_allclose(out, [1.0, -1.0], atol=1e-15)


def test_layer_norm_statistics():
    x = np.random.default_rng(10).normal(2.0, 3.0, size=(5, 8))
    out = ops.layer_norm(x, np.ones(8), np.zeros(8), eps=1e-6).data
    assert np.max(np.abs(out.mean(axis=-1))) < 1e-12
    assert np.max(np.abs(out.var(axis=-1) - 1.0)) < 1e-6


def test_layer_norm_and_softmax_gradients():
    rng = np.random.default_rng(11)
    g, b = rng.normal(size=6), rng.normal(size=6)
    w = rng.normal(size=(3, 6))
    for _ in range(10):
        x = rng.normal(size=(3, 6))
        assert gradient_check(lambda t: ops.sum(ops.mul(ops.layer_norm(t, g, b), w)), x) < 1e-5
        assert gradient_check(lambda t: ops.sum(ops.mul(ops.softmax(t, axis=-1), w)), x) < 1e-5
    x = rng.normal(size=(3, 6))
    assert gradient_check(lambda t: ops.sum(ops.mul(ops.layer_norm(x, t, b), w)), g) < 1e-5


# reductions / reshape -------------------------------------------------------------


def test_pixel_unshuffle_phase_order():
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    out = ops.pixel_unshuffle(x, 2).data
    np.testing.assert_array_equal(out.reshape(-1), [1.0, 2.0, 3.0, 4.0])
    # channel index c*r*r + dy*r + dx
    y = np.random.default_rng(12).normal(size=(2, 4, 6))
    u = ops.pixel_unshuffle(y, 2).data
    for c in range(2):
        for dy in range(2):
            for dx in range(2):
                np.testing.assert_array_equal(u[c * 4 + dy * 2 + dx], y[c, dy::2, dx::2])


@pytest.mark.parametrize("r", [2, 4])
@pytest.mark.parametrize("channels_last", [False, True])
def test_pixel_shuffle_inverts_unshuffle(r, channels_last):
    x = np.random.default_rng(13).normal(size=(2, 8, 8, 3) if channels_last else (2, 3, 8, 8))
    back = ops.pixel_shuffle(ops.pixel_unshuffle(x, r, channels_last), r, channels_last).data
    np.testing.assert_array_equal(back, x)


def test_pixel_unshuffle_indivisible():
    with pytest.raises(ShapeError):
        ops.pixel_unshuffle(np.zeros((1, 3, 4)), 2)


def test_channels_last_unshuffle_matches_channels_first():
    x = np.random.default_rng(14).normal(size=(3, 4, 4))
    first = ops.pixel_unshuffle(x, 2).data
    last = ops.pixel_unshuffle(np.transpose(x, (1, 2, 0)), 2, channels_last=True).data
    np.testing.assert_array_equal(np.transpose(last, (2, 0, 1)), first)


def test_gap_of_constant():
    np.testing.assert_allclose(ops.global_avg_pool(np.full((5, 6, 3), 0.7)).data, 0.7, rtol=1e-15)


def test_reshape_family_gradients():
    rng = np.random.default_rng(15)
    x = rng.normal(size=(2, 4, 4))
    w = rng.normal(size=(8, 2, 2))
    assert gradient_check(lambda t: ops.sum(ops.mul(ops.pixel_unshuffle(t, 2), w)), x) < 1e-5
    w2 = rng.normal(size=(4, 2, 4))
    assert gradient_check(lambda t: ops.sum(ops.mul(ops.permute(t, (1, 0, 2)), w2)), x) < 1e-5
    assert gradient_check(lambda t: ops.sum(ops.square(ops.concat(ops.split(t, [1, 3], axis=1)[::-1], axis=1))), x) < 1e-5
    assert gradient_check(lambda t: ops.sum(ops.square(ops.global_avg_pool(t))), x) < 1e-5
    assert gradient_check(lambda t: ops.sum(ops.square(ops.pad_reflect(t, 2, 3))), x) < 1e-5


# backward / tape ------------------------------------------------------------------


def test_backward_examples():
    x = Tensor(np.random.default_rng(16).normal(size=(2, 3)), requires_grad=True)
    ops.sum(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))
    y = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    ops.sum(ops.mul(y, y)).backward()
    np.testing.assert_array_equal(y.grad, [2.0, 4.0, 6.0])


def test_composite_gradient():
    rng = np.random.default_rng(17)
    w = rng.normal(size=(4, 4))
    assert gradient_check(lambda t: ops.sum(ops.silu(ops.linear(t, w))), rng.normal(size=(4, 4))) < 1e-5


def test_tape_order_and_release():
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = ops.sum(ops.exp(ops.mul(x, 2.0)))
    tape = GradTape(loss)
    pos = {id(n): k for k, n in enumerate(tape.nodes)}
    for node in tape.nodes:
        for parent in node._parents:
            if parent.requires_grad:
                assert pos[id(parent)] < pos[id(node)]
    tape.backward()
    with pytest.raises(TapeError):
        loss.backward()


def test_non_scalar_loss_rejected():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError):
        ops.mul(x, 2.0).backward()


def test_disconnected_leaf_gets_no_update():
    x = Tensor([1.0], requires_grad=True)
    y = Tensor([2.0], requires_grad=True)
    ops.sum(ops.square(x)).backward()
    assert y.grad is None


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = ops.exp(x)
    assert not y.requires_grad and y.is_leaf


def test_gradient_check_examples():
    x = np.random.default_rng(18).normal(size=(3, 3))
    assert gradient_check(ops.sum, x) < 1e-10
    h = 1e-5
    assert gradient_check(lambda t: ops.sum(ops.exp(t)), np.zeros(1), h) < 2 * h * h
