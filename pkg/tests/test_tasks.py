import math

import numpy as np
import pytest

from scipy import stats

from canvi.errors import DomainError, SimulationError
from canvi.stats import RngStream
from canvi.tasks import (
    ARCH,
    SIR,
    TASKS,
    BivariateGaussian,
    DiscreteUniformMixture,
    JointDataset,
    LotkaVolterra,
    SLCPDistractors,
    arch_log_likelihood,
    arch_series,
    make_task,
    rk4,
    sample_joint,
    two_moons_map,
)

DIMS = {
    "gaussian_linear": (10, 10),
    "gaussian_linear_uniform": (10, 10),
    "slcp_distractors": (5, 100),
    "bernoulli_glm_raw": (10, 100),
    "gaussian_mixture": (2, 2),
    "two_moons": (2, 2),
    "sir": (2, 10),
    "lotka_volterra": (4, 20),
    "arch": (2, 100),
    "bivariate_gaussian": (1, 1),
    "counterexample": (1, 1),
}


class TestRegistry:
    @pytest.mark.parametrize("name", sorted(TASKS))
    def test_shapes_and_support(self, name):
        task = make_task(name)
        n = 50
        data = sample_joint(task, n, RngStream(0, (9,)))
        assert data.theta.shape == (n, task.theta_dim)
        assert data.x.shape == (n, task.x_dim)
        assert np.all(np.isfinite(data.x))
        assert np.all(task.in_support(data.theta))
        assert np.all(np.isfinite(task.prior_log_prob(data.theta)))

    def test_dimensions(self):
        got = {name: (make_task(name).theta_dim, make_task(name).x_dim) for name in TASKS}
        missing = set(DIMS) - set(got)
        assert not missing
        for name, dims in DIMS.items():
            assert got[name] == dims, name

    def test_unknown_task(self):
        with pytest.raises(DomainError, match="unknown task"):
            make_task("no_such_task")

    @pytest.mark.parametrize("name", ["two_moons", "sir", "arch"])
    def test_reproducible(self, name):
        task = make_task(name)
        a = sample_joint(task, 20, RngStream(4, (2,)))
        b = sample_joint(task, 20, RngStream(4, (2,)))
        assert a.fingerprint() == b.fingerprint()
        assert a.fingerprint() != sample_joint(task, 20, RngStream(4, (3,))).fingerprint()

    @pytest.mark.parametrize("name", ["two_moons", "gaussian_mixture", "gaussian_linear_uniform"])
    def test_box_prior_density_outside_is_zero(self, name):
        task = make_task(name)
        theta = np.full((1, task.theta_dim), task.theta_high[0] + 0.5)
        assert task.prior_log_prob(theta)[0] == -math.inf

    def test_simulate_checks_dimension(self):
        with pytest.raises(DomainError):
            make_task("two_moons").simulate(np.zeros((3, 5)), RngStream(0))


class TestJointDataset:
    def test_csv_round_trip_is_exact(self, tmp_path):
        data = sample_joint(make_task("gaussian_mixture"), 25, RngStream(3, (1, 2)), role="calibration")
        path = tmp_path / "d.csv"
        data.to_csv(path)
        back = JointDataset.from_csv(path)
        assert back.fingerprint() == data.fingerprint()
        assert (back.role, back.task, back.seed, back.stream_id) == ("calibration", "gaussian_mixture", 3, (1, 2))

    def test_csv_is_byte_identical_across_runs(self, tmp_path):
        task = make_task("sir")
        paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
        for p in paths:
            sample_joint(task, 10, RngStream(5, (1,))).to_csv(p)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_header(self, tmp_path):
        sample_joint(make_task("two_moons"), 3, RngStream(0)).to_csv(tmp_path / "d.csv")
        lines = (tmp_path / "d.csv").read_text().splitlines()
        assert lines[0].startswith("# task=two_moons seed=0 role=train")
        assert lines[1] == "theta_0,theta_1,x_0,x_1"

    def test_row_mismatch(self):
        with pytest.raises(DomainError):
            JointDataset(np.zeros((3, 1)), np.zeros((2, 1)))

    def test_unknown_role(self):
        with pytest.raises(DomainError):
            JointDataset(np.zeros((1, 1)), np.zeros((1, 1)), role="validation")


class TestRK4:
    @pytest.mark.parametrize("dt", [0.1, 0.05])
    def test_fourth_order_on_decay(self, dt):
        n = int(round(2.0 / dt))
        y = rk4(lambda y: -y, np.ones((1, 1)), dt, n)
        err = abs(y[-1, 0, 0] - math.exp(-2.0))
        # local error constant for y' = -y is 1/120 per step, global about t * dt^4 / 120
        assert err < 2.0 * dt**4 / 100

    def test_records(self):
        y = rk4(lambda y: np.zeros_like(y), np.ones((2, 3)), 0.1, 10, record_every=5)
        assert y.shape == (3, 2, 3)


class TestSIR:
    def test_conserves_population(self):
        task = SIR()
        theta = task.sample_prior(RngStream(1), 200)
        traj = task.trajectory(theta)
        total = traj.sum(axis=2)
        assert np.max(np.abs(total - task.population) / task.population) <= 1e-6

    def test_observations_are_counts(self):
        x = sample_joint(SIR(), 30, RngStream(2)).x
        assert np.all(x == np.round(x))
        assert np.all((x >= 0) & (x <= 1000))

    def test_observation_times(self):
        np.testing.assert_allclose(SIR().obs_times, np.arange(1, 11) * 16.0)


class TestLotkaVolterra:
    def test_positive_for_extreme_prior_draws(self):
        task = LotkaVolterra()
        theta = task.sample_prior(RngStream(0), 20000)
        x = task.simulate(theta, RngStream(1))
        assert np.all(x > 0) and np.all(np.isfinite(x))

    def test_log_space_matches_fine_reference(self):
        task = LotkaVolterra()
        theta = np.array([[0.9, 0.05, 0.9, 0.05]])
        coarse = task.observed_states(theta)
        fine = LotkaVolterra()
        fine.dt = 0.001
        np.testing.assert_allclose(coarse, fine.observed_states(theta), rtol=1e-3)


class TestClosedFormTasks:
    @pytest.mark.parametrize("theta, expected", [((0.0, 0.0), (0.35, 0.0)), ((1.0, 1.0), (-1.0642135623730951, 0.0)),
                                                 ((0.2, 0.2), (0.35 - 0.4 / math.sqrt(2), 0.0))])
    def test_two_moons_map_at_zero_angle(self, theta, expected):
        x = two_moons_map(np.array([theta]), 0.0, 0.1)
        np.testing.assert_allclose(x, [expected], atol=1e-12)

    def test_two_moons_prior_in_box(self):
        theta = make_task("two_moons").sample_prior(RngStream(0), 10_000)
        assert np.all(np.abs(theta) <= 1)

    def test_glu_prior_mean(self):
        theta = make_task("gaussian_linear_uniform").sample_prior(RngStream(0), 100_000)
        se = math.sqrt(1 / 3) / math.sqrt(theta.shape[0])
        assert np.all(np.abs(theta.mean(axis=0)) <= 3 * se)

    def test_sir_prior_positive(self):
        assert np.all(SIR().sample_prior(RngStream(0), 10_000) > 0)

    def test_bounded_exactly_for_uniform_priors(self):
        bounded = {name for name in TASKS if make_task(name).bounded}
        assert bounded == {"gaussian_linear_uniform", "slcp_distractors", "gaussian_mixture", "two_moons",
                           "arch", "counterexample"}

    def test_bivariate_moments(self):
        task = BivariateGaussian(0.3, mean_theta=-3.0, mean_x=10.0)
        d = sample_joint(task, 200_000, RngStream(0))
        assert d.theta.mean() == pytest.approx(-3.0, abs=0.01)
        assert d.x.mean() == pytest.approx(10.0, abs=0.01)
        assert np.corrcoef(d.theta[:, 0], d.x[:, 0])[0, 1] == pytest.approx(0.3, abs=0.01)

    def test_bivariate_rejects_unit_rho(self):
        with pytest.raises(DomainError):
            BivariateGaussian(1.0)

    def test_counterexample_joint(self):
        d = sample_joint(DiscreteUniformMixture(), 100_000, RngStream(0))
        x, t = d.x[:, 0], d.theta[:, 0]
        assert x.mean() == pytest.approx(0.5, abs=0.01)
        assert np.all((t[x == 0] >= 0) & (t[x == 0] < 200))
        assert np.all((t[x == 1] >= 200) & (t[x == 1] <= 300))


class TestStructuredTasks:
    def test_slcp_informative_block(self):
        task = SLCPDistractors()
        theta = np.array([0.5, -1.0, 1.0, 1.2, 0.3])
        x = task.simulate(np.tile(theta, (10_000, 1)), RngStream(0))
        y = task.unpermute(x)[:, :8]
        se = y.std(axis=0, ddof=1) / math.sqrt(y.shape[0])
        target = np.tile(theta[:2], 4)
        assert np.all(np.abs(y.mean(axis=0) - target) <= 5 * se)

    def test_bernoulli_glm_binary(self):
        x = sample_joint(make_task("bernoulli_glm_raw"), 200, RngStream(0)).x
        assert set(np.unique(x)) <= {0.0, 1.0}

    def test_arch_unit_innovations(self):
        y = arch_series(np.zeros((1, 2)), np.ones((1, 100)))
        np.testing.assert_allclose(y, math.sqrt(0.2), rtol=0, atol=1e-15)
        assert math.sqrt(0.2) == pytest.approx(0.44721, abs=1e-5)

    def test_arch_ar1_autocorrelation(self):
        theta1 = 0.6
        y = ARCH().simulate(np.tile([theta1, 0.0], (10_000, 1)), RngStream(0))
        # pooled zero-mean lag-one estimator; per-series estimates only set the s.e.
        num = np.sum(y[:, 1:] * y[:, :-1], axis=1)
        den = np.sum(y[:, :-1] ** 2, axis=1)
        pooled = num.sum() / den.sum()
        se = (num / den).std(ddof=1) / math.sqrt(y.shape[0])
        assert abs(pooled - theta1) <= 5 * se

    def test_arch_loglik_at_zero(self):
        expected = 100 * math.log(1 / math.sqrt(2 * math.pi * 0.2))
        assert arch_log_likelihood([0.0, 0.0], np.zeros(100)) == pytest.approx(expected, rel=1e-12)
        assert arch_log_likelihood([0.0, 0.0], np.zeros(100)) == pytest.approx(-11.421957698762, abs=1e-9)

    def test_arch_loglik_depends_on_theta1(self):
        y = ARCH().simulate(np.array([0.3, 0.4]), RngStream(0))
        assert arch_log_likelihood([0.0, 0.4], y) != arch_log_likelihood([0.5, 0.4], y)

    @pytest.mark.parametrize("theta", [(0.3, 0.4), (-0.8, 0.9), (0.0, 0.0)])
    def test_arch_loglik_matches_term_by_term(self, theta):
        y = np.random.default_rng(1).standard_normal(5)
        total, y_prev, e_prev = 0.0, 0.0, 0.0
        for t in range(5):
            e = y[t] - theta[0] * y_prev
            total += stats.norm.logpdf(e, scale=math.sqrt(0.2 + theta[1] * e_prev**2))
            y_prev, e_prev = y[t], e
        assert arch_log_likelihood(theta, y) == pytest.approx(total, rel=1e-12)

    def test_arch_loglik_rejects_nonpositive_variance(self):
        with pytest.raises(DomainError):
            arch_log_likelihood([0.0, -10.0], np.ones(5))


class TestSimulationErrors:
    def test_nonfinite_state_carries_theta(self):
        theta = np.array([[0.4, 0.1], [math.nan, 0.1]])
        with pytest.raises(SimulationError) as info:
            SIR().simulate(theta, RngStream(0))
        assert math.isnan(info.value.theta[0])
