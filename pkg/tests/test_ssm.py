import math

import numpy as np
import pytest

from osmamba.ssm import S6, SSMParams, discretize, s6_block, selective_scan
from osmamba.tensor import DomainError, Tensor, gradient_check, ops


def naive_scan(x, delta, a, b, c):
    """Per-step loop over scalars, h_0 = 0."""
    length, ch = x.shape
    ns = a.shape[1]
    h = [[0.0] * ns for _ in range(ch)]
    y = np.zeros((length, ch))
    for k in range(length):
        for i in range(ch):
            acc = 0.0
            for n in range(ns):
                h[i][n] = math.exp(delta[k, i] * a[i, n]) * h[i][n] + delta[k, i] * b[k, n] * x[k, i]
                acc += c[k, n] * h[i][n]
            y[k, i] = acc
    return y


def random_case(rng, length, ch, ns):
    return (
        rng.normal(size=(length, ch)),
        rng.uniform(0.01, 0.6, size=(length, ch)),
        -rng.uniform(0.2, 3.0, size=(ch, ns)),
        rng.normal(size=(length, ns)),
        rng.normal(size=(length, ns)),
    )


def test_discretize_examples():
    a_bar, b_bar = discretize(np.array([[-1.0]]), np.array([[math.log(2.0)]]), np.array([[1.0]]))
    assert abs(a_bar.data.item() - 0.5) < 1e-15
    a_bar, b_bar = discretize(np.array([[-2.0]]), np.array([[0.1]]), np.array([[3.0]]))
    assert abs(a_bar.data.item() - math.exp(-0.2)) < 1e-15
    assert abs(a_bar.data.item() - 0.818731) < 1e-6
    assert abs(b_bar.data.item() - 0.3) < 1e-15
    a_bar, b_bar = discretize(np.array([[-1.0]]), np.array([[1e-12]]), np.array([[1.0]]))
    assert abs(a_bar.data.item() - 1.0) < 1e-11 and abs(b_bar.data.item()) < 1e-11
    with pytest.raises(DomainError):
        discretize(np.array([[-1.0]]), np.array([[0.0]]), np.array([[1.0]]))


def test_discretize_shapes():
    rng = np.random.default_rng(0)
    a_bar, b_bar = discretize(-np.ones((3, 4)), rng.uniform(0.1, 1, size=(5, 3)), rng.normal(size=(5, 4)))
    assert a_bar.shape == b_bar.shape == (5, 3, 4)


def test_hand_recurrence():
    # A_bar = 0.5 from delta = ln 2, A = -1; B_bar = 1 needs delta * B = 1
    d = math.log(2.0)
    x = np.array([[1.0], [0.0], [2.0]])
    y = selective_scan(x, np.full((3, 1), d), np.array([[-1.0]]), np.full((3, 1), 1.0 / d), np.ones((3, 1))).data
    np.testing.assert_allclose(y[:, 0], [1.0, 0.5, 2.25], atol=1e-15)


def test_zero_input_gives_zero_output():
    rng = np.random.default_rng(1)
    x, d, a, b, c = random_case(rng, 7, 2, 3)
    assert np.all(selective_scan(np.zeros_like(x), d, a, b, c).data == 0.0)
    p = SSMParams(3, 4, rng)
    assert np.all(s6_block(np.zeros((5, 3)), p).data == 0.0)


def test_matches_naive_oracle_on_50_cases():
    rng = np.random.default_rng(2)
    for _ in range(50):
        length, ch, ns = int(rng.integers(1, 65)), int(rng.integers(1, 5)), int(rng.integers(1, 9))
        case = random_case(rng, length, ch, ns)
        assert np.max(np.abs(selective_scan(*case).data - naive_scan(*case))) < 1e-12


def test_batched_leading_axes():
    rng = np.random.default_rng(3)
    cases = [random_case(rng, 6, 2, 3) for _ in range(3)]
    a = cases[0][2]
    stacked = [np.stack([c[i] for c in cases]) for i in (0, 1, 3, 4)]
    y = selective_scan(stacked[0], stacked[1], a, stacked[2], stacked[3]).data
    for k, (x, d, _, b, c) in enumerate(cases):
        np.testing.assert_allclose(y[k], naive_scan(x, d, a, b, c), atol=1e-12)


def test_causality():
    rng = np.random.default_rng(4)
    x, d, a, b, c = random_case(rng, 20, 3, 4)
    base = selective_scan(x, d, a, b, c).data
    for k in (0, 7, 19):
        x2 = x.copy()
        x2[k] += 1.0
        pert = selective_scan(x2, d, a, b, c).data
        np.testing.assert_array_equal(pert[:k], base[:k])
        assert np.any(pert[k:] != base[k:])


def test_s6_block_is_causal_too():
    rng = np.random.default_rng(5)
    p = SSMParams(2, 3, rng)
    x = rng.normal(size=(12, 2))
    base = s6_block(x, p).data
    x[6] += 0.5
    np.testing.assert_array_equal(s6_block(x, p).data[:6], base[:6])


def test_stability_bound_constant_parameters():
    rng = np.random.default_rng(6)
    length = 200
    a = np.array([[-0.7]])
    d = 0.3
    abar = math.exp(d * a[0, 0])
    x = rng.uniform(-1, 1, size=(length, 1))
    b = np.full((length, 1), 2.0)
    # with C = 1 the output is the state itself
    h = selective_scan(x, np.full((length, 1), d), a, b, np.ones((length, 1))).data
    bound = np.max(np.abs(d * 2.0 * x)) / (1 - abar)
    assert np.max(np.abs(h)) <= bound


def test_parameter_invariants():
    p = SSMParams(4, 8, np.random.default_rng(7))
    assert np.all(p.A().data < 0)
    np.testing.assert_allclose(-p.A().data[0], np.arange(1, 9))
    dt = np.log1p(np.exp(p.delta_b.data))
    assert np.all(dt >= 1e-3 - 1e-12) and np.all(dt <= 0.1 + 1e-12)


def test_selectivity_breaks_linearity():
    rng = np.random.default_rng(8)
    p = SSMParams(2, 4, rng)
    x = rng.normal(size=(8, 2))
    assert np.max(np.abs(s6_block(2 * x, p).data - 2 * s6_block(x, p).data)) > 1e-6


def test_scan_gradients_all_inputs():
    rng = np.random.default_rng(9)
    x, d, a, b, c = random_case(rng, 6, 2, 3)
    w = rng.normal(size=(6, 2))

    def loss(y):
        return ops.sum(ops.mul(y, w))

    assert gradient_check(lambda t: loss(selective_scan(t, d, a, b, c)), x) < 1e-5
    assert gradient_check(lambda t: loss(selective_scan(x, t, a, b, c)), d) < 1e-5
    assert gradient_check(lambda t: loss(selective_scan(x, d, t, b, c)), a) < 1e-5
    assert gradient_check(lambda t: loss(selective_scan(x, d, a, t, c)), b) < 1e-5
    assert gradient_check(lambda t: loss(selective_scan(x, d, a, b, t)), c) < 1e-5


def test_gradient_through_long_recurrence():
    rng = np.random.default_rng(10)
    x, d, a, b, c = random_case(rng, 40, 2, 3)
    assert gradient_check(lambda t: ops.sum(ops.square(selective_scan(t, d, a, b, c))), x) < 1e-4
    assert gradient_check(lambda t: ops.sum(ops.square(selective_scan(x, d, t, b, c))), a) < 1e-4


def test_s6_block_gradients():
    rng = np.random.default_rng(11)
    p = SSMParams(2, 2, rng)
    assert gradient_check(lambda t: ops.sum(ops.square(s6_block(t, p))), rng.normal(size=(6, 2))) < 1e-4
    x = rng.normal(size=(6, 2))
    for name in ("A_log", "delta_w", "delta_b", "b_w", "c_w"):
        param = getattr(p, name)
        orig = param.data.copy()

        def f(t, name=name):
            q = SSMParams(2, 2, np.random.default_rng(11))
            for other in ("A_log", "delta_w", "delta_b", "b_w", "c_w"):
                setattr(q, other, getattr(p, other))
            setattr(q, name, t)
            return ops.sum(ops.square(s6_block(x, q)))

        assert gradient_check(f, orig) < 1e-4, name


def test_directional_stack():
    rng = np.random.default_rng(12)
    s6 = S6(3, 4, rng, directions=2)
    x = rng.normal(size=(2, 2, 5, 3))
    y = s6(x).data
    assert y.shape == x.shape
    # each direction uses its own parameter slice
    for k in range(2):
        single = SSMParams(3, 4, rng)
        single.A_log = Tensor(s6.params.A_log.data[k])
        single.delta_w = Tensor(s6.params.delta_w.data[k])
        single.delta_b = Tensor(s6.params.delta_b.data[k, 0])
        single.b_w = Tensor(s6.params.b_w.data[k])
        single.c_w = Tensor(s6.params.c_w.data[k])
        np.testing.assert_allclose(y[:, k], s6_block(x[:, k], single).data, atol=1e-13)
