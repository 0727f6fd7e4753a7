import numpy as np
import pytest

from bridgediff.bridge import forward_marginal_sample
from bridgediff.evaluation import layout_iou, marginal_stats_check, median_bandwidth, mmd, mode_accuracy, posterior_oracle
from bridgediff.exceptions import GridError, InvalidInputError, InvalidStepError
from bridgediff.numerics import make_rng
from bridgediff.schedule import build_schedule, posterior_coefficients


def test_marginal_check_midpoint():
    s = build_schedule(100)
    r = marginal_stats_check(s, 0.0, 2.0, 50, 100_000, make_rng(0))
    assert r.expected_mean == 1.0 and r.expected_var == 0.5 and r.passed


def test_marginal_check_near_end():
    s = build_schedule(100)
    r = marginal_stats_check(s, 0.0, 2.0, 99, 100_000, make_rng(1))
    assert r.expected_var == pytest.approx(2 * (0.99 - 0.9801), rel=1e-12) and r.passed


def test_direct_marginal_samples_pass_same_bands():
    s = build_schedule(100)
    n = 100_000
    z, _ = forward_marginal_sample(s, np.zeros(n), np.full(n, 2.0), 30, make_rng(2))
    assert marginal_stats_check(s, 0.0, 2.0, 30, n, None, samples=z).passed


def test_marginal_check_detects_wrong_law():
    s = build_schedule(100)
    n = 100_000
    z = 1.0 + np.sqrt(0.6) * make_rng(3).standard_normal(n)
    assert not marginal_stats_check(s, 0.0, 2.0, 50, n, None, samples=z).passed
    with pytest.raises(InvalidStepError):
        marginal_stats_check(s, 0.0, 2.0, 100, 10, make_rng(0))


def test_posterior_oracle_example():
    mean, var = posterior_oracle(build_schedule(4), 0.0, 2.0, 1.0, 2)
    assert mean == pytest.approx(0.5, abs=1e-9) and var == pytest.approx(0.25, abs=1e-9)


def test_posterior_oracle_fixed_point():
    mean, _ = posterior_oracle(build_schedule(30, 0.8), 1.7, 1.7, 1.7, 12)
    assert mean == pytest.approx(1.7, abs=1e-9)


def test_posterior_oracle_matches_closed_form_randomized():
    rng = make_rng(4)
    for _ in range(30):
        T = int(rng.integers(4, 200))
        s = build_schedule(T, float(rng.uniform(0.3, 3)))
        t = int(rng.integers(2, T))
        zb, za, zt = rng.normal(0, 2, 3)
        mean, var = posterior_oracle(s, zb, za, zt, t)
        c = posterior_coefficients(s, t, t - 1)
        assert abs(mean - (c.c_b * zt + c.c_a * za - c.c_eps * (zt - zb))) < 1e-6
        assert abs(var - c.tilde_delta) < 1e-6


def test_posterior_oracle_grid_errors():
    s = build_schedule(4)
    with pytest.raises(GridError):
        posterior_oracle(s, 0.0, 2.0, 1.0, 2, grid=(0.4, 0.6, 5001))
    with pytest.raises(GridError):
        posterior_oracle(s, 0.0, 2.0, 1.0, 2, grid=(-5, 5, 100))
    with pytest.raises(InvalidStepError):
        posterior_oracle(s, 0.0, 2.0, 1.0, 4)


def test_mmd_identical_sets():
    x = make_rng(5).standard_normal((200, 2))
    assert abs(mmd(x, x)) <= 1e-12
    assert mmd(x, x, biased=True) == 0.0


def test_mmd_far_clusters():
    rng = make_rng(6)
    a = 0.01 * rng.standard_normal((100, 2))
    b = a + np.array([10.0, 0.0])
    value = mmd(a, b, bandwidth=1.0)
    assert value > 0.5
    assert value == pytest.approx(2.0, abs=1e-3)


def test_mmd_permutation_invariant():
    rng = make_rng(7)
    a, b = rng.standard_normal((50, 2)), rng.standard_normal((60, 2)) + 0.5
    assert mmd(a[rng.permutation(50)], b[rng.permutation(60)]) == pytest.approx(mmd(a, b), abs=1e-12)


def test_mmd_hand_kernel():
    a, b = np.array([[0.0], [1.0]]), np.array([[0.0], [2.0]])
    k = lambda d: np.exp(-d**2 / 2)
    paired = k(1) + k(2) - 2 * (k(2) + k(1)) / 2
    assert mmd(a, b, bandwidth=1.0) == pytest.approx(paired, abs=1e-15)
    c = np.array([[0.0], [2.0], [5.0]])
    two_sample = k(1) + (k(2) + k(5) + k(3)) / 3 - 2 * (k(0) + k(2) + k(5) + k(1) + k(1) + k(4)) / 6
    assert mmd(a, c, bandwidth=1.0) == pytest.approx(two_sample, abs=1e-15)


def test_mmd_errors():
    with pytest.raises(InvalidInputError):
        mmd(np.ones((3, 2)), np.ones((3, 2)), bandwidth=0.0)
    with pytest.raises(InvalidInputError):
        mmd(np.ones((0, 2)), np.ones((3, 2)))


def test_median_bandwidth():
    assert median_bandwidth(np.array([[0.0], [1.0]]), np.array([[3.0]])) == 2.0


def test_mode_accuracy():
    x = np.array([[1.0, 0], [-1.0, 0], [2.0, 0], [-3.0, 0]])
    assert mode_accuracy(x, [0, 1, 0, 1]) == 1.0
    assert mode_accuracy(x, [0, 0, 1, 1]) == 0.5
    assert mode_accuracy(x, [0, 1, 0, 1], pre=x + np.array([5.0, 0])) == 0.5
    with pytest.raises(InvalidInputError):
        mode_accuracy(np.zeros((0, 2)), [])


def test_layout_iou_examples():
    pre = np.zeros((16, 16))
    mask = np.zeros((16, 16))
    mask[4:8, 2:10] = 1
    post = np.where(mask > 0, 0.9, pre)
    assert layout_iou(post, pre, mask) == 1.0
    assert layout_iou(pre, pre, mask) == 0.0
    shifted = np.roll(post, 4, axis=1)  # half the rectangle's width
    assert layout_iou(shifted, pre, mask) == pytest.approx(1 / 3, abs=1e-15)
    assert layout_iou(pre, pre, np.zeros((16, 16))) == 1.0


def test_layout_iou_errors():
    with pytest.raises(InvalidInputError):
        layout_iou(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(InvalidInputError):
        layout_iou(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 4)), threshold=1.5)
