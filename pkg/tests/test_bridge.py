import numpy as np
import pytest

from sbrecon import bridge
from sbrecon.schedule import make_schedule

from conftest import crandn


def test_sample_endpoints_exact(schedule, rng):
    x0, x1 = crandn(rng, (8, 8)), crandn(rng, (8, 8))
    np.testing.assert_array_equal(bridge.sample_intermediate(schedule, x0, x1, 0, rng), x0)
    np.testing.assert_array_equal(bridge.sample_intermediate(schedule, x0, x1, schedule.N, rng), x1)


def test_sample_shape_mismatch(schedule, rng):
    with pytest.raises(ValueError):
        bridge.sample_intermediate(schedule, np.zeros((4, 4)), np.zeros((4, 8)), 3, rng)


def test_sample_seeded_determinism(schedule):
    x0, x1 = np.zeros((4, 4)), np.ones((4, 4))
    a = bridge.sample_intermediate(schedule, x0, x1, 30, np.random.default_rng(5))
    b = bridge.sample_intermediate(schedule, x0, x1, 30, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)


def test_midpoint_monte_carlo(schedule):
    # x0 = 0, x1 = 2 constant images; midpoint of a symmetric schedule has mean 1
    n = schedule.N // 2
    draws = 10_000
    rng = np.random.default_rng(7)
    x0 = np.zeros((draws, 1))
    x1 = 2.0 * np.ones((draws, 1))
    samples = bridge.sample_intermediate(schedule, x0, x1, n, rng)[:, 0]
    _, var = bridge.marginal(schedule, x0, x1, n)
    se = np.sqrt(var / draws)
    assert abs(samples.mean() - 1.0) < 3 * se * np.sqrt(2)  # complex mean: both parts within 3 se
    assert abs(samples.real.mean() - 1.0) < 3 * np.sqrt(var / 2 / draws)
    assert abs(samples.imag.mean()) < 3 * np.sqrt(var / 2 / draws)
    emp_var = np.mean(np.abs(samples - samples.mean()) ** 2)
    assert emp_var == pytest.approx(var, rel=0.05)


def test_predict_x0(schedule, rng):
    x = crandn(rng, (8, 8))
    np.testing.assert_array_equal(bridge.predict_x0(schedule, x, np.zeros_like(x), 5), x)
    with pytest.raises(ValueError):
        bridge.predict_x0(schedule, x, x, 0)


def test_predict_x0_inverts_training_target(schedule, rng):
    x0, x1 = crandn(rng, (8, 8)), crandn(rng, (8, 8))
    for n in (1, 17, 50, 99, 100):
        x_n, _ = bridge.marginal(schedule, x0, x1, n)
        eps = (x_n - x0) / schedule.sigma(n)
        np.testing.assert_allclose(bridge.predict_x0(schedule, x_n, eps, n), x0, rtol=0, atol=1e-12)


def test_predict_x0_round_trip(schedule, rng):
    for _ in range(20):
        n = int(rng.integers(1, schedule.N + 1))
        x, eps = crandn(rng, (8, 8)), crandn(rng, (8, 8))
        back = bridge.predict_x0(schedule, x, eps, n) + schedule.sigma(n) * eps
        np.testing.assert_allclose(back, x, rtol=0, atol=1e-12)


def test_posterior_step_edge_cases(schedule, rng):
    x0, xn = crandn(rng, (8, 8)), crandn(rng, (8, 8))
    np.testing.assert_array_equal(bridge.posterior_step(schedule, x0, xn, 0, rng), x0)
    np.testing.assert_array_equal(bridge.posterior_step(schedule, x0, xn, 0, deterministic=True), x0)
    c = np.full((8, 8), 0.3 - 0.2j)
    for n in (1, 40, 99):
        np.testing.assert_allclose(bridge.posterior_step(schedule, c, c, n, deterministic=True), c, atol=1e-15)
    with pytest.raises(IndexError):
        bridge.posterior_step(schedule, x0, xn, schedule.N, deterministic=True)
    with pytest.raises(ValueError):
        bridge.posterior_step(schedule, x0, xn, 3)  # stochastic without generator


def test_posterior_step_matches_integrals(schedule, rng):
    # weights recomputed from the polyline integrals directly, not via alpha_sq
    from sbrecon.schedule import _beta_integral

    for n in (1, 10, 63, 99):
        x0, xn = crandn(rng, (8, 8)), crandn(rng, (8, 8))
        lo, hi = schedule.t_grid[n], schedule.t_grid[n + 1]
        a2 = _beta_integral(hi, 1e-5, 0.3) - _beta_integral(lo, 1e-5, 0.3)
        s2 = _beta_integral(lo, 1e-5, 0.3)
        expect = (a2 * x0 + s2 * xn) / (a2 + s2)
        np.testing.assert_allclose(bridge.posterior_step(schedule, x0, xn, n, deterministic=True), expect, rtol=1e-12)


def test_posterior_weights_sum_to_one(schedule):
    for n in range(schedule.N):
        w0, w1, _ = bridge.posterior_weights(schedule, n)
        assert abs(w0 + w1 - 1.0) <= 1e-15


def test_posterior_noise_variance(schedule):
    n = 30
    rng = np.random.default_rng(3)
    x = np.zeros((20_000,))
    out = bridge.posterior_step(schedule, x, x, n, rng)
    _, _, var = bridge.posterior_weights(schedule, n)
    assert np.mean(np.abs(out) ** 2) == pytest.approx(var, rel=0.05)


def test_rescale_noise(schedule, rng):
    assert np.all(bridge.rescale_noise(schedule, np.zeros((4, 4)), 3) == 0)
    const = make_schedule(1.0, 1.0, 20)
    eps = crandn(rng, (4, 4))
    for n in range(1, 20):
        np.testing.assert_allclose(
            bridge.rescale_noise(const, eps, n), np.sqrt(const.t_grid[n + 1] / const.t_grid[n]) * eps, rtol=1e-14
        )
    for _ in range(10):
        n = int(rng.integers(1, schedule.N))
        e = crandn(rng, (8, 8))
        ratio = np.linalg.norm(bridge.rescale_noise(schedule, e, n)) / np.linalg.norm(e)
        assert ratio == pytest.approx(schedule.sigma(n + 1) / schedule.sigma(n), rel=1e-14)
    with pytest.raises(IndexError):
        bridge.rescale_noise(schedule, eps, 0)


def test_inversion_step_zero_noise(schedule, rng):
    x = crandn(rng, (8, 8))
    np.testing.assert_array_equal(bridge.inversion_step(schedule, x, np.zeros_like(x), 10), x)
    with pytest.raises(IndexError):
        bridge.inversion_step(schedule, x, x, 0)
    with pytest.raises(IndexError):
        bridge.inversion_step(schedule, x, x, schedule.N)


def one_step_round_trip(schedule, x, eps, n):
    up = bridge.inversion_step(schedule, x, eps, n)
    x0 = up - schedule.sigma(n + 1) * bridge.rescale_noise(schedule, eps, n)
    return bridge.posterior_step(schedule, x0, up, n, deterministic=True)


def test_inversion_round_trip_every_step(schedule, rng):
    for n in range(1, schedule.N):
        x, eps = crandn(rng, (8, 8)), crandn(rng, (8, 8))
        back = one_step_round_trip(schedule, x, eps, n)
        assert np.linalg.norm(back - x) <= 1e-10 * np.linalg.norm(x)


def test_inversion_coefficient_last_step(schedule):
    n = schedule.N - 1
    a2 = schedule.sigma_sq[n + 1] - schedule.sigma_sq[n]
    expect = a2 * schedule.sigma_sq[n + 1] / (np.sqrt(schedule.sigma_sq[n]) * (a2 + schedule.sigma_sq[n]))
    assert bridge.inversion_coefficient(schedule, n) == pytest.approx(expect, rel=1e-14)


def test_deterministic_chain_telescopes(schedule, rng):
    x0, x1 = crandn(rng, (8, 8)), crandn(rng, (8, 8))
    x = x1
    for n in range(schedule.N - 1, -1, -1):
        x = bridge.posterior_step(schedule, x0, x, n, deterministic=True)
    np.testing.assert_array_equal(x, x0)


def test_training_target_identity(schedule):
    # (x_t - x0)/sigma = -sigma/(sb2+s2) x0 + sigma/(sb2+s2) x1 + sqrt(Sigma)/sigma z
    rng = np.random.default_rng(11)
    x0, x1 = crandn(rng, (8, 8)), crandn(rng, (8, 8))
    for n in (1, 25, 50, 99):
        seed = 100 + n
        xt = bridge.sample_intermediate(schedule, x0, x1, n, np.random.default_rng(seed))
        z = bridge.complex_normal(np.random.default_rng(seed), x0.shape)
        s, sb2 = schedule.sigma(n), schedule.sigma_bar(n) ** 2
        total = sb2 + s * s
        var = s * s * sb2 / total
        expect = -(s / total) * x0 + (s / total) * x1 + np.sqrt(var) / s * z
        np.testing.assert_allclose(bridge.training_target(schedule, xt, x0, n), expect, rtol=0, atol=1e-12)


def test_per_item_generators_batch_invariant(schedule):
    x0, x1 = np.zeros((3, 4, 4)), np.ones((3, 4, 4))
    batched = bridge.sample_intermediate(schedule, x0, x1, 40, [np.random.default_rng(s) for s in (1, 2, 3)])
    single = bridge.sample_intermediate(schedule, x0[1], x1[1], 40, np.random.default_rng(2))
    np.testing.assert_array_equal(batched[1], single)
