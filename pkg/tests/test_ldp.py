import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lppref.exceptions import InvalidArgumentError
from lppref.ldp import (
    ClientReports,
    NoiseConfig,
    NoisedReport,
    calibrate_flip,
    client_report,
    clip_gradient,
    debias_aggregate,
    debias_aggregate_batch,
    debias_weights,
    laplace_perturb,
    local_item_gradients,
    randomized_response,
)

# --- calibration ------------------------------------------------------------


def test_calibrate_flip_limits_and_ln3():
    assert calibrate_flip(math.inf) == 0.0
    assert calibrate_flip(0.0) == 1.0
    p = calibrate_flip(math.log(3))
    assert p == pytest.approx(0.5)
    assert (1 - p / 2) / (p / 2) == pytest.approx(3.0)
    assert calibrate_flip(50.0) < 1e-20
    with pytest.raises(InvalidArgumentError):
        calibrate_flip(-1.0)


@given(st.floats(1e-6, 50))
def test_calibrated_ratio_equals_exp_epsilon(eps):
    p = calibrate_flip(eps)
    assert 0 < p < 1
    assert math.log((1 - p / 2) / (p / 2)) == pytest.approx(eps, rel=1e-9)


def test_noise_config_derived_values():
    c = NoiseConfig(epsilon=0.02, dim=3)
    assert c.epsilon_y + c.epsilon_g == pytest.approx(0.02)
    assert c.epsilon_y == pytest.approx(0.01)
    assert c.flip_prob == pytest.approx(2 / (math.exp(0.01) + 1))
    assert c.laplace_scale == pytest.approx(2 * 1.0 * 3 / 0.01)
    assert c.total_budget(200) == pytest.approx(4.0)
    skew = NoiseConfig(epsilon=1.0, dim=2, epsilon_split=0.25, clip_bound=0.5)
    assert skew.epsilon_y == pytest.approx(0.25)
    assert skew.laplace_scale == pytest.approx(2 * 0.5 * 2 / 0.75)


def test_noise_config_rejects_bad_values():
    for kwargs in ({"epsilon": 0.0}, {"epsilon": -1.0}, {"epsilon_split": 1.0}, {"clip_bound": 0.0}):
        with pytest.raises(InvalidArgumentError):
            NoiseConfig(**{"epsilon": 1.0, "dim": 2, **kwargs})
    with pytest.raises(InvalidArgumentError):
        NoiseConfig(epsilon=1.0, dim=2, clip_bound=math.inf).laplace_scale


def test_noiseless_config():
    c = NoiseConfig.noiseless(4)
    assert c.is_noiseless and c.flip_prob == 0.0 and c.laplace_scale == 0.0


# --- randomized response ----------------------------------------------------


def test_randomized_response_p0_is_identity():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, size=1000)
    np.testing.assert_array_equal(randomized_response(y, 0.0, rng), y)
    assert randomized_response(1, 0.0, rng) == 1


def test_randomized_response_p1_is_uniform():
    rng = np.random.default_rng(1)
    for bit in (0, 1):
        out = randomized_response(np.full(100_000, bit), 1.0, rng)
        assert abs(out.mean() - 0.5) < 0.01


def test_randomized_response_output_distribution():
    rng = np.random.default_rng(2)
    p = 0.3
    out = randomized_response(np.ones(200_000, dtype=int), p, rng)
    # Pr[0 | y=1] = p/2
    assert abs((out == 0).mean() - p / 2) < 4 * math.sqrt(p / 2 * (1 - p / 2) / 200_000)


def test_randomized_response_validates():
    rng = np.random.default_rng(0)
    with pytest.raises(InvalidArgumentError):
        randomized_response(1, 1.5, rng)
    with pytest.raises(InvalidArgumentError):
        randomized_response(2, 0.5, rng)


def test_randomized_response_ratio_eps1():
    rng = np.random.default_rng(3)
    p = calibrate_flip(1.0)
    n = 1_000_000
    a = randomized_response(np.ones(n, dtype=int), p, rng).mean()
    b = randomized_response(np.zeros(n, dtype=int), p, rng).mean()
    ratio = a / b
    # delta-method standard error of the ratio
    se = ratio * math.sqrt((1 - a) / (n * a) + (1 - b) / (n * b))
    assert ratio <= math.e * (1 + 3 * se / ratio)
    assert ratio == pytest.approx(math.e, rel=0.02)


def test_randomized_response_deterministic():
    y = np.random.default_rng(0).integers(0, 2, size=50)
    a = randomized_response(y, 0.4, np.random.default_rng(9))
    b = randomized_response(y, 0.4, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)


# --- clipping and Laplace ---------------------------------------------------


def test_clip_gradient_examples():
    g = np.array([0.3, -0.9])
    np.testing.assert_array_equal(clip_gradient(g, 1.0), g)
    np.testing.assert_array_equal(clip_gradient(np.array([10.0, -10.0]), 1.0), [1.0, -1.0])


@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-1e6, 1e6)), st.floats(1e-3, 1e3))
def test_clip_gradient_idempotent_and_bounded(g, delta):
    c = clip_gradient(g, delta)
    np.testing.assert_array_equal(clip_gradient(c, delta), c)
    assert np.all(np.abs(c) <= delta)


def test_laplace_small_scale_approaches_input():
    g = np.array([0.5, -0.25, 1.0])
    out = laplace_perturb(g, 1e-12, np.random.default_rng(0))
    np.testing.assert_allclose(out, g, atol=1e-9)


def test_laplace_rejects_nonpositive_scale():
    rng = np.random.default_rng(0)
    for b in (0.0, -1.0, math.inf):
        with pytest.raises(InvalidArgumentError):
            laplace_perturb(np.zeros(2), b, rng)


def test_laplace_moments():
    b, n = 0.7, 100_000
    noise = laplace_perturb(np.zeros((n, 3)), b, np.random.default_rng(4))
    var = noise.var(axis=0)
    assert np.all(np.abs(var / (2 * b * b) - 1) < 0.05)
    assert np.all(np.abs(noise.mean(axis=0)) < 3 * b / math.sqrt(n))


def test_laplace_symmetric():
    # the noise of one stream against its mirror image: quantiles of x and -x agree
    b, n = 1.3, 200_000
    x = laplace_perturb(np.zeros(n), b, np.random.default_rng(5))
    qs = np.linspace(0.05, 0.95, 19)
    np.testing.assert_allclose(np.quantile(x, qs), np.quantile(-x, qs), atol=0.03)
    # two-sample Kolmogorov-Smirnov distance between x and -x
    grid = np.sort(x)
    ecdf_x = np.searchsorted(np.sort(x), grid, side="right") / n
    ecdf_neg = np.searchsorted(np.sort(-x), grid, side="right") / n
    assert np.max(np.abs(ecdf_x - ecdf_neg)) < 1.36 * math.sqrt(2 / n)


# --- client reports ---------------------------------------------------------


def test_local_item_gradients_formula():
    u = np.array([0.5, -1.0])
    V = np.array([[1.0, 0.0, 2.0], [0.0, 1.0, 1.0]])
    y, G = local_item_gradients(np.array([0, 2]), np.array([1.0, 0.0]), u, V)
    np.testing.assert_array_equal(y, [1, 0, 1])
    np.testing.assert_allclose(G[0], -2 * u * (1.0 - 0.5))
    np.testing.assert_allclose(G[1], [0.0, 0.0])
    np.testing.assert_allclose(G[2], -2 * u * (0.0 - 0.0))


def test_client_report_noiseless_is_exact():
    rng = np.random.default_rng(0)
    u, V = rng.normal(size=3), rng.normal(size=(3, 7))
    items, ratings = np.array([1, 4, 6]), np.array([1.0, 0.0, 1.0])
    reports = client_report((items, ratings), u, V, NoiseConfig.noiseless(3), rng)
    y, G = local_item_gradients(items, ratings, u, V)
    np.testing.assert_array_equal(reports.y_star, y)
    np.testing.assert_array_equal(reports.g_star, G)


def test_client_report_covers_every_item_in_order():
    rng = np.random.default_rng(1)
    V = rng.normal(size=(2, 9))
    config = NoiseConfig(epsilon=0.5, dim=2)
    for items in (np.array([], dtype=int), np.array([3]), np.arange(9)):
        reports = client_report((items, np.ones(len(items))), np.ones(2), V, config, rng)
        assert len(reports) == 9
        assert [r.item_index for r in reports] == list(range(9))
        assert all(isinstance(r, NoisedReport) for r in reports)
        assert set(reports.y_star.tolist()) <= {0, 1}
        assert np.isfinite(reports.g_star).all()


def test_client_report_deterministic_given_seed():
    V = np.random.default_rng(0).normal(size=(3, 5))
    config = NoiseConfig(epsilon=1.0, dim=3)
    data = (np.array([0, 2]), np.array([1.0, 0.0]))
    a = client_report(data, np.ones(3), V, config, np.random.default_rng(42))
    b = client_report(data, np.ones(3), V, config, np.random.default_rng(42))
    np.testing.assert_array_equal(a.y_star, b.y_star)
    np.testing.assert_array_equal(a.g_star, b.g_star)


def test_client_report_clips_before_noise():
    V = np.full((2, 1), 10.0)
    config = NoiseConfig(epsilon=math.inf, dim=2, clip_bound=0.5)
    reports = client_report((np.array([0]), np.array([0.0])), np.ones(2), V, config, np.random.default_rng(0))
    np.testing.assert_array_equal(reports.g_star, [[0.5, 0.5]])


def test_client_report_dimension_mismatch():
    rng = np.random.default_rng(0)
    with pytest.raises(InvalidArgumentError):
        client_report((np.array([0]), np.array([1.0])), np.ones(2), np.ones((3, 4)), NoiseConfig(1.0, 2), rng)
    with pytest.raises(InvalidArgumentError):
        client_report((np.array([0]), np.array([1.0])), np.ones(3), np.ones((3, 4)), NoiseConfig(1.0, 2), rng)


def test_client_reports_are_read_only():
    r = ClientReports(np.zeros(2), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        r.g_star[0, 0] = 1.0


# --- debiasing --------------------------------------------------------------


def test_debias_weights_expectation_is_bit():
    p = 0.4
    for y in (0, 1):
        # E[y*] = y (1 - p) + p / 2
        expected_y_star = y * (1 - p) + p / 2
        assert (expected_y_star - p / 2) / (1 - p) == pytest.approx(y)
    np.testing.assert_allclose(debias_weights([0, 1], 0.0), [0.0, 1.0])
    with pytest.raises(InvalidArgumentError):
        debias_weights([1], 1.0)


def test_debias_aggregate_noiseless_is_plain_average():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, size=6)
    g = rng.normal(size=(6, 3))
    reports = [NoisedReport(2, int(y[c]), g[c]) for c in range(6)]
    np.testing.assert_allclose(debias_aggregate(reports, 0.0), (y[:, None] * g).mean(axis=0))
    single = [NoisedReport(0, 1, g[0])]
    np.testing.assert_allclose(debias_aggregate(single, 0.0), g[0])


def test_debias_aggregate_validates():
    g = np.zeros(2)
    with pytest.raises(InvalidArgumentError):
        debias_aggregate([NoisedReport(0, 1, g), NoisedReport(1, 1, g)], 0.1)
    with pytest.raises(InvalidArgumentError):
        debias_aggregate([NoisedReport(0, 1, g)], 1.0)
    with pytest.raises(InvalidArgumentError):
        debias_aggregate([], 0.1)


def test_debias_batch_agrees_with_per_item():
    rng = np.random.default_rng(3)
    y = rng.integers(0, 2, size=(5, 4))
    g = rng.normal(size=(5, 4, 2))
    batch = debias_aggregate_batch(y, g, 0.3)
    for j in range(4):
        reports = [NoisedReport(j, int(y[c, j]), g[c, j]) for c in range(5)]
        np.testing.assert_allclose(batch[j], debias_aggregate(reports, 0.3))


def test_debias_unbiased_monte_carlo_small():
    # a smaller cousin of the acceptance run, at a different privacy level
    rng = np.random.default_rng(7)
    n, d, trials = 30, 2, 4000
    y = rng.integers(0, 2, size=n)
    g = np.clip(rng.normal(size=(n, d)), -1, 1)
    truth = (y[:, None] * g).mean(axis=0)
    config = NoiseConfig(epsilon=4.0, dim=d)
    p, b = config.flip_prob, config.laplace_scale
    est = np.empty((trials, d))
    for t in range(trials):
        ys = randomized_response(y, p, rng)
        gs = g + rng.laplace(0.0, b, size=g.shape)
        est[t] = debias_aggregate_batch(ys[:, None], gs[:, None, :], p)[0]
    se = est.std(axis=0, ddof=1) / math.sqrt(trials)
    assert np.all(np.abs(est.mean(axis=0) - truth) < 3 * se)
