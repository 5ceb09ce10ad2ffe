import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msce_scr.numerics import (
    NEG_INF,
    ContractError,
    Rng,
    finite_diff_check,
    log_sum_exp,
    softmax_log,
)

finite = st.floats(-50, 50, allow_nan=False)


def test_log_sum_exp_examples():
    assert log_sum_exp([0.0]) == 0.0
    assert log_sum_exp([0.0, 0.0]) == pytest.approx(math.log(2), abs=1e-15)
    # exact two-term form a + log(1 + e^(b - a))
    expected = -1000.0 + math.log1p(math.exp(-1.0))
    got = log_sum_exp([-1000.0, -1001.0])
    assert math.isfinite(got)
    assert got == pytest.approx(expected, abs=1e-12)
    assert got == pytest.approx(-999.6867, abs=1e-4)


def test_log_sum_exp_neg_inf():
    assert log_sum_exp([NEG_INF, NEG_INF]) == NEG_INF
    assert log_sum_exp([NEG_INF, -3.0]) == -3.0
    with pytest.raises(ContractError):
        log_sum_exp([])


@given(st.lists(finite, min_size=1, max_size=8), st.randoms())
def test_log_sum_exp_permutation_invariant(xs, rnd):
    ys = list(xs)
    rnd.shuffle(ys)
    assert log_sum_exp(xs) == pytest.approx(log_sum_exp(ys), abs=1e-12)


@given(st.lists(finite, min_size=1, max_size=8), st.integers(0, 7), st.floats(0.01, 5))
def test_log_sum_exp_monotone(xs, i, bump):
    i %= len(xs)
    ys = list(xs)
    ys[i] += bump
    assert log_sum_exp(ys) >= log_sum_exp(xs)


def test_softmax_log_examples():
    np.testing.assert_allclose(softmax_log([0.0, 0.0]), np.log([0.5, 0.5]), atol=1e-15)
    np.testing.assert_allclose(softmax_log([3.3] * 4), np.log([0.25] * 4), atol=1e-15)
    out = softmax_log([1.0, 2.0, 3.0])
    assert abs(np.exp(out).sum() - 1.0) <= 1e-12
    assert out[0] < out[1] < out[2]
    z = np.exp([1.0, 2.0, 3.0])
    np.testing.assert_allclose(out, np.log(z / z.sum()), atol=1e-14)


@settings(max_examples=50)
@given(st.lists(finite, min_size=1, max_size=10), st.floats(-100, 100))
def test_softmax_log_shift_invariant(row, c):
    a = softmax_log(row)
    b = softmax_log(np.array(row) + c)
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert abs(np.exp(a).sum() - 1.0) <= 1e-12


def test_softmax_log_rejects_non_finite():
    with pytest.raises(ContractError):
        softmax_log([0.0, np.inf])


def test_finite_diff_examples():
    err = finite_diff_check(lambda x: x[0] ** 2, [6.0], [3.0], step=1e-5)
    assert err <= 1e-8
    assert finite_diff_check(lambda x: 7.0, [0.0, 0.0], [1.0, 2.0]) == 0.0


def test_finite_diff_detects_wrong_gradient():
    assert finite_diff_check(lambda x: x[0] ** 2, [5.0], [3.0]) > 0.05


def test_finite_diff_non_finite():
    with pytest.raises(ContractError):
        finite_diff_check(lambda x: math.inf, [0.0], [0.0])


def test_rng_reproducible():
    a = Rng(42, "dropout").gen.random(10)
    b = Rng(42, "dropout").gen.random(10)
    assert np.array_equal(a, b)


def test_rng_streams_differ():
    draws = [tuple(Rng(7, s).gen.integers(0, 2**32, size=100)) for s in range(20)]
    assert len(set(draws)) == len(draws)
    assert tuple(Rng(7, "a").gen.random(100)) != tuple(Rng(7, "b").gen.random(100))


def test_rng_children_independent():
    base = Rng(3, "synth")
    assert not np.array_equal(base.child(0).gen.random(100), base.child(1).gen.random(100))
    assert np.array_equal(base.child(5).gen.random(5), Rng(3, "synth").child(5).gen.random(5))
