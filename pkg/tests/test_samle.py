"""Missing-data maximum likelihood driver and the Gaussian location toy."""

import numpy as np
import pytest

from samcmc import (
    Box,
    GainSchedule,
    MissingDataModel,
    NonFiniteGradientError,
    RandomWalk,
    TruncationLadder,
    gaussian_location_model,
    load_gaussian_toy,
    run_samle,
    run_samle_batch,
    samle_step,
)

YBAR = 0.7409467391596104


@pytest.fixture(scope="module")
def toy_y():
    return load_gaussian_toy()


def flat_model(n, grad):
    """Scalar-path model with a flat latent law and a fixed gradient rule."""
    bound = np.full(n, 1e100)
    return MissingDataModel(
        grad_complete_loglik=grad,
        predictive_log_density=lambda x, theta: 0.0,
        x_space=Box(-bound, bound),
        batched=False,
    )


def test_fixture_values(toy_y):
    assert toy_y.shape == (20,)
    assert abs(toy_y.mean() - YBAR) < 1e-15


def test_model_callables(toy_y):
    model = gaussian_location_model(np.array([1.0, 2.0, 3.0]))
    g = model.grad_complete_loglik(np.array([1.0, 2.0, 3.0]), np.array([0.5]))
    np.testing.assert_allclose(g, [4.5], rtol=1e-15)
    # batched shapes broadcast over the leading axis
    gb = model.grad_complete_loglik(np.zeros((4, 3)), np.zeros((4, 1)))
    assert gb.shape == (4, 1)
    lp = model.predictive_log_density(np.zeros((4, 3)), np.zeros((4, 1)))
    assert lp.shape == (4,)
    # density peaks at the posterior mean (theta + y)/2
    theta = np.array([2.0])
    peak = 0.5 * (2.0 + np.array([1.0, 2.0, 3.0]))
    lp0 = model.predictive_log_density(peak, theta)
    assert lp0 == 0.0
    assert model.predictive_log_density(peak + 0.3, theta) < lp0


def test_mean_field_matches_monte_carlo(toy_y):
    # E[grad | y, theta] = sum(y_i - theta)/2 under x_i ~ N((theta+y_i)/2, 1/2)
    model = gaussian_location_model(toy_y)
    rng = np.random.default_rng(7)
    n_mc = 4000
    se = np.sqrt(toy_y.size * 0.5 / n_mc)
    for theta in (-1.0, 0.0, YBAR, 2.0, 5.0):
        x = 0.5 * (theta + toy_y) + np.sqrt(0.5) * rng.standard_normal(
            (n_mc, toy_y.size))
        mc = model.grad_complete_loglik(x, np.array([theta])).mean()
        exact = 0.5 * (toy_y - theta).sum()
        assert abs(mc - exact) <= 3.5 * se


def test_mean_field_descends_squared_error(toy_y):
    # v(theta) = sum(y_i - theta)^2/4 has gradient -h, so h is a descent
    # direction everywhere away from the sample mean
    def v(theta):
        return ((toy_y - theta) ** 2).sum() / 4.0

    for theta in (-2.0, 0.0, 0.5, 1.0, 3.0):
        h = 0.5 * (toy_y - theta).sum()
        if abs(theta - YBAR) < 1e-12:
            continue
        assert -h * h < 0.0
        assert v(theta + 0.01 * h) < v(theta)


def test_step_with_zero_gain_only_refreshes_latents():
    model = flat_model(2, lambda x, theta: np.full(1, 50.0))
    ladder = TruncationLadder(center=np.zeros(1), reinit_state=np.zeros(2))
    rng = np.random.default_rng(0)
    theta = np.array([0.3])
    x = np.zeros(2)
    theta2, x2, truncated = samle_step(
        theta, x, model, RandomWalk(step=1.0), 0.0, 1, GainSchedule(),
        ladder, rng)
    assert not truncated
    np.testing.assert_array_equal(theta2, theta)
    assert not np.array_equal(x2, x)  # flat law accepts every proposal


def test_zero_gradient_leaves_theta_fixed():
    model = flat_model(2, lambda x, theta: np.zeros(1))
    ladder = TruncationLadder(center=np.zeros(1),
                              reinit_theta=np.array([0.3]),
                              reinit_state=np.zeros(2))
    trace = run_samle(model, GainSchedule(), ladder, 50, seed=1)
    assert np.all(trace.thetas == 0.3)
    assert trace.sigma_events == []
    assert not np.array_equal(trace.final_state, np.zeros(2))


def test_noise_free_recursion_finds_sample_mean(toy_y):
    # gradient equal to the mean field makes the recursion deterministic;
    # with a_1 * n/2 = 1 the first step lands exactly on the root
    model = flat_model(
        toy_y.size, lambda x, theta: 0.5 * (toy_y - theta).sum(keepdims=True))
    ladder = TruncationLadder(center=np.zeros(1), reinit_state=toy_y.copy())
    schedule = GainSchedule(c1=0.1)
    trace = run_samle(model, schedule, ladder, 200, seed=2)
    assert abs(trace.thetas[0, 0] - YBAR) < 1e-12
    assert abs(trace.final_theta[0] - YBAR) < 1e-12


def test_truncation_resets_both_coordinates():
    model = flat_model(1, lambda x, theta: np.full(1, 100.0))
    ladder = TruncationLadder(center=np.zeros(1), r0=0.5,
                              reinit_state=np.zeros(1))
    trace = run_samle(model, GainSchedule(), ladder, 5, seed=3)
    # every half-step jumps by ~100 a_k, far past both safeguards
    assert trace.sigma_events == [1, 2, 3, 4, 5]
    assert np.all(trace.thetas == 0.0)
    assert trace.final_sigma == 5
    np.testing.assert_array_equal(trace.final_state, np.zeros(1))


def test_engine_survives_unbounded_sigma(toy_y):
    # a gradient too large for the schedule truncates every iteration, so
    # sigma outruns the float range of the ball radius; the run must keep
    # going silently with the ball saturated at infinity
    import warnings

    base = gaussian_location_model(toy_y)
    model = MissingDataModel(
        grad_complete_loglik=lambda x, th: np.full((x.shape[0], 1), 100.0),
        predictive_log_density=base.predictive_log_density,
        x_space=base.x_space,
        batched=True,
    )
    ladder = TruncationLadder(center=np.zeros(1), r0=0.5,
                              reinit_state=toy_y.copy())
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        trace = run_samle(model, GainSchedule(), ladder, 800, seed=0)
    assert trace.final_sigma == 800
    assert np.all(trace.thetas == 0.0)


def test_nonfinite_gradient_aborts_scalar_path():
    model = flat_model(1, lambda x, theta: np.array([np.inf]))
    ladder = TruncationLadder(center=np.zeros(1), reinit_state=np.zeros(1))
    with pytest.raises(NonFiniteGradientError,
                       match="nonfinite gradient at iteration 1") as info:
        run_samle(model, GainSchedule(), ladder, 10, seed=4)
    assert info.value.iteration == 1


def test_nonfinite_gradient_aborts_batch_path(toy_y):
    base = gaussian_location_model(toy_y)
    model = MissingDataModel(
        grad_complete_loglik=lambda x, th: np.full((x.shape[0], 1), np.nan),
        predictive_log_density=base.predictive_log_density,
        x_space=base.x_space,
        batched=True,
    )
    ladder = TruncationLadder(center=np.zeros(1), reinit_state=toy_y.copy())
    with pytest.raises(NonFiniteGradientError, match="iteration 1"):
        run_samle_batch(model, GainSchedule(), ladder, 10, seeds=[0, 1])


def test_argument_validation(toy_y):
    model = gaussian_location_model(toy_y)
    ladder = TruncationLadder(center=np.zeros(1), reinit_state=toy_y.copy())
    with pytest.raises(ValueError, match="k_max"):
        run_samle(model, GainSchedule(), ladder, 0, seed=0)
    with pytest.raises(ValueError, match="sweeps"):
        run_samle(model, GainSchedule(), ladder, 10, seed=0, sweeps=0)
    with pytest.raises(ValueError, match="batched=True"):
        run_samle_batch(flat_model(1, lambda x, th: np.zeros(1)),
                        GainSchedule(), ladder, 10, seeds=[0, 1])


def test_batch_member_matches_solo_run(toy_y):
    model = gaussian_location_model(toy_y)
    schedule = GainSchedule(c1=0.1)

    def ladder():
        return TruncationLadder(center=np.zeros(1), reinit_state=toy_y.copy())

    batch = run_samle_batch(model, schedule, ladder(), 5000, seeds=[3, 4],
                            sweeps=2, proposal=RandomWalk(step=0.4),
                            store_thetas=True)
    for seed, member in zip([3, 4], batch):
        solo = run_samle(model, schedule, ladder(), 5000, seed=seed,
                         sweeps=2, proposal=RandomWalk(step=0.4))
        np.testing.assert_array_equal(solo.thetas, member.thetas)
        np.testing.assert_array_equal(solo.running_sum, member.running_sum)
        np.testing.assert_array_equal(solo.final_state, member.final_state)
        assert solo.sigma_events == member.sigma_events
    assert not np.array_equal(batch[0].thetas, batch[1].thetas)


def test_single_observation_root_is_that_observation():
    y = np.array([2.5])
    # pinning x at its predictive mean makes the recursion deterministic
    # with field (y_1 - theta)/2, whose only root is y_1 itself
    pinned = flat_model(1, lambda x, theta: 0.5 * (y - theta))
    ladder = TruncationLadder(center=np.zeros(1), reinit_state=y.copy())
    trace = run_samle(pinned, GainSchedule(), ladder, 2000, seed=5)
    assert abs(trace.final_theta[0] - 2.5) < 1e-5

    model = gaussian_location_model(y)
    ladder = TruncationLadder(center=np.zeros(1), reinit_state=y.copy())
    trace = run_samle(model, GainSchedule(), ladder, 20000, seed=0)
    theta_bar = trace.running_sum[0] / trace.k
    assert abs(theta_bar - 2.5) <= 0.05


def test_started_at_root_average_stays_near_root(toy_y):
    model = gaussian_location_model(toy_y)
    ladder = TruncationLadder(center=np.array([YBAR]),
                              reinit_state=toy_y.copy())
    trace = run_samle(model, GainSchedule(c1=0.1), ladder, 30000, seed=0,
                      sweeps=3, proposal=RandomWalk(step=0.4),
                      snapshot_stride=1000)
    for snap in trace.snapshots:
        if snap.k >= 5000:
            assert abs(snap.theta_sum[0] / snap.k - YBAR) <= 0.02
