import json
import math

import numpy as np
import pytest
from scipy import stats

from canvi.efficiency import GridSpec
from canvi.errors import CanviError, DomainError, TrainingError
from canvi.models import (
    ConditionalLinearGaussian,
    ConditionalUniform,
    DispersionScaled,
    MixtureDensityNetwork,
    PriorModel,
    SupportTransform,
    load_model,
    save_model,
    smoothed,
    train_favi,
)
from canvi.stats import RngStream
from canvi.tasks import make_task, sample_joint

from . import oracles


def grid_mass(model, x, low, high, n):
    grid = GridSpec(low, high, n)
    return float(np.sum(model.density(grid.points(), np.asarray(x, dtype=float))) * grid.cell_volume)


class TestConditionalLinearGaussian:
    def test_standard_normal_mode(self):
        m = ConditionalLinearGaussian([[0.0]], [0.0], [[1.0]])
        assert m.log_prob([0.0], [3.7]) == pytest.approx(-0.91893853320467, abs=1e-12)

    @pytest.mark.parametrize("cov", [[[1.0, 0.5], [0.4, 1.0]], [[1.0, 2.0], [2.0, 1.0]], [[0.0, 0.0], [0.0, 1.0]]])
    def test_rejects_non_spd(self, cov):
        with pytest.raises(DomainError):
            ConditionalLinearGaussian(np.eye(2), None, cov)

    def test_matches_scipy(self):
        cov = [[1.0, 0.3], [0.3, 0.5]]
        m = ConditionalLinearGaussian([[0.5, 0.0], [0.1, -1.0]], [0.2, 0.0], cov)
        theta = np.random.default_rng(0).standard_normal((20, 2))
        x = np.random.default_rng(1).standard_normal((20, 2))
        ref = [stats.multivariate_normal(m.mean(xi), cov).logpdf(ti) for ti, xi in zip(theta, x)]
        np.testing.assert_allclose(m.log_prob(theta, x), ref, rtol=1e-12)

    def test_sample_mean(self):
        m = ConditionalLinearGaussian([[0.3]], [0.0], [[0.91]])
        draws = m.sample([2.0], RngStream(0), 100_000)[:, 0]
        se = draws.std(ddof=1) / math.sqrt(draws.size)
        assert abs(draws.mean() - 0.6) <= 3 * se

    def test_sample_log_prob_agrees_with_density(self):
        m = ConditionalLinearGaussian([[0.3, 0.1]], [1.0], [[0.5]])
        theta, lq = m.sample_with_log_prob([[1.0, 2.0], [0.0, -1.0]], RngStream(2), 7)
        np.testing.assert_allclose(lq, m.log_prob(theta, np.array([[1.0, 2.0], [0.0, -1.0]])[:, None, :]), rtol=1e-12)

    def test_broadcasting(self):
        m = ConditionalLinearGaussian([[1.0]], [0.0], [[1.0]])
        lp = m.log_prob(np.zeros((5, 1, 1)), np.zeros((3, 1)))
        assert lp.shape == (5, 3)

    def test_dimension_mismatch(self):
        m = ConditionalLinearGaussian([[1.0]], [0.0], [[1.0]])
        with pytest.raises(DomainError):
            m.log_prob([[0.0, 0.0]], [[0.0]])


class TestDispersionScaled:
    def test_c2_at_mean(self):
        base = ConditionalLinearGaussian([[0.0]], [0.0], [[1.0]])
        wide = DispersionScaled(base, 2.0)
        assert wide.log_prob([0.0], [0.0]) == pytest.approx(base.log_prob([0.0], [0.0]) - math.log(2), abs=1e-14)

    @pytest.mark.parametrize("base", [
        ConditionalLinearGaussian([[0.4, -0.2]], [1.0], [[0.7]]),
        MixtureDensityNetwork.for_task(make_task("two_moons"), RngStream(1), n_components=3, hidden=(8,), n_pilot=500),
    ])
    def test_c1_is_identity(self, base):
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, (1000, base.x_dim))
        theta = rng.uniform(-0.9, 0.9, (1000, base.theta_dim))
        np.testing.assert_array_equal(DispersionScaled(base, 1.0).log_prob(theta, x), base.log_prob(theta, x))

    def test_c2_doubles_sample_std(self):
        base = ConditionalLinearGaussian([[0.0]], [0.0], [[1.0]])
        draws = DispersionScaled(base, 2.0).sample([0.0], RngStream(5), 100_000)[:, 0]
        # s.e. of a normal sample std is sigma / sqrt(2 (n - 1))
        se = 2.0 / math.sqrt(2 * (draws.size - 1))
        assert abs(draws.std(ddof=1) - 2.0) <= 3 * se

    @pytest.mark.parametrize("c", [0.0, -1.0, math.inf, math.nan])
    def test_rejects_bad_scale(self, c):
        with pytest.raises(DomainError):
            DispersionScaled(ConditionalLinearGaussian([[1.0]]), c)

    def test_rejects_family_without_spread(self):
        with pytest.raises(DomainError):
            DispersionScaled(ConditionalUniform({0: (0.0, 1.0)}), 2.0)


class TestConditionalUniform:
    def test_density_and_support(self):
        m = ConditionalUniform({0: (0.0, 50.0), 1: (200.0, 300.0)})
        lp = m.log_prob([[10.0], [60.0], [250.0], [50.0]], [[0.0], [0.0], [1.0], [0.0]])
        np.testing.assert_allclose(lp, [-math.log(50), -math.inf, -math.log(100), -math.log(50)])

    def test_unknown_outcome_has_zero_density(self):
        m = ConditionalUniform({0: (0.0, 1.0)})
        assert m.log_prob([0.5], [3.0]) == -math.inf

    def test_samples_inside(self):
        m = ConditionalUniform({0: (0.0, 50.0), 1: (200.0, 300.0)})
        draws = m.sample([[0.0], [1.0]], RngStream(0), 1000)
        assert np.all((draws[0] >= 0) & (draws[0] <= 50))
        assert np.all((draws[1] >= 200) & (draws[1] <= 300))


class TestSupportTransform:
    def test_round_trip_and_jacobian(self):
        tr = SupportTransform(["interval", "positive", "real"], [-1.0, 0.0, 0.0], [2.0, 1.0, 1.0])
        theta = np.array([[0.3, 2.5, -4.0], [-0.99, 1e-3, 7.0]])
        u, logjac, inside = tr.forward(theta)
        assert inside.all()
        back, log_dtheta = tr.inverse(u)
        np.testing.assert_allclose(back, theta, rtol=1e-12)
        np.testing.assert_allclose(logjac, -log_dtheta, rtol=1e-12)
        # finite-difference check of log|du/dtheta| per coordinate
        h = 1e-6
        fd = 0.0
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            fd = fd + np.log((tr.forward(theta + e)[0][:, j] - tr.forward(theta - e)[0][:, j]) / (2 * h))
        np.testing.assert_allclose(logjac, fd, rtol=1e-6)

    def test_outside_is_flagged(self):
        tr = SupportTransform(["interval"], [0.0], [1.0])
        _, logjac, inside = tr.forward(np.array([[1.5], [0.0]]))
        assert not inside.any()
        assert np.all(logjac == -np.inf)

    def test_unknown_kind(self):
        with pytest.raises(DomainError):
            SupportTransform(["circle"])


class TestMixtureDensityNetwork:
    def test_single_component_is_its_gaussian_head(self):
        task = make_task("bivariate_gaussian")
        m = MixtureDensityNetwork.for_task(task, RngStream(0), n_components=1, hidden=(4,), n_pilot=500)
        x = np.array([[0.3], [-1.2]])
        w, mu, sd = m.mixture_params(x)
        np.testing.assert_array_equal(w, 1.0)
        theta = np.array([[0.1], [0.9]])
        mean = m.u_loc + m.u_scale * mu[:, 0, :]
        std = m.u_scale * sd[:, 0, :]
        np.testing.assert_allclose(m.log_prob(theta, x), stats.norm.logpdf(theta, mean, std)[:, 0], rtol=1e-12)

    def test_mixture_logpdf_matches_loops(self, small_mdn):
        m = small_mdn
        x = np.array([0.2, -0.4])
        logits, means, log_std = m._heads(x[None, :])
        z = np.array([0.3, -1.1])
        ref = oracles.diag_mixture_logpdf(z, logits[0], means[0], np.exp(log_std[0]))
        got = m._mixture_logpdf(z[None, :], logits, means, log_std)[0]
        assert got == pytest.approx(ref, rel=1e-12)

    def test_weights_and_stds(self, small_mdn):
        w, _, sd = small_mdn.mixture_params(np.random.default_rng(0).standard_normal((50, 2)))
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, rtol=1e-12)
        assert np.all(w > 0) and np.all(sd > 0)

    def test_outside_support_is_minus_inf(self, small_mdn):
        assert small_mdn.log_prob([1.5, 0.0], [0.0, 0.0]) == -math.inf

    @pytest.mark.parametrize("point", range(10))
    def test_gradient_matches_finite_differences(self, small_mdn, point):
        task = make_task("two_moons")
        data = sample_joint(task, 64, RngStream(7, (point,)))
        m = small_mdn.copy()
        flat = m.get_flat() + 0.2 * np.random.default_rng(100 + point).standard_normal(m.n_params)
        m.set_flat(flat)
        _, grad = m.loss_and_grad(data.theta, data.x)

        def f(p):
            m.set_flat(p)
            return m.loss(data.theta, data.x)

        idx = np.random.default_rng(point).choice(m.n_params, 25, replace=False)
        fd = oracles.central_difference(f, flat, idx)
        scale = np.maximum(np.abs(fd), 1e-3)
        assert np.max(np.abs(grad[idx] - fd) / scale) <= 1e-4

    def test_loss_matches_log_prob(self, small_mdn):
        data = sample_joint(make_task("two_moons"), 32, RngStream(1))
        loss, _ = small_mdn.loss_and_grad(data.theta, data.x)
        assert loss == pytest.approx(small_mdn.loss(data.theta, data.x), rel=1e-12)

    @pytest.mark.parametrize("x", [(0.0, 0.0), (0.3, 0.1), (-0.5, 0.4)])
    def test_normalized_on_box(self, x):
        m = MixtureDensityNetwork.for_task(make_task("two_moons"), RngStream(5), n_components=4, hidden=(16,))
        assert grid_mass(m, x, (-1, -1), (1, 1), 1000) == pytest.approx(1.0, abs=1e-3)

    @pytest.mark.parametrize("x", [(0.0, 0.0), (0.3, 0.1)])
    def test_normalized_in_logit_coordinates(self, small_mdn, x):
        # wide components pile mass against the box edge, so integrate over logit(theta)
        grid = GridSpec((-30.0, -30.0), (30.0, 30.0), (1200, 1200))
        u = grid.points()
        theta, log_dtheta = small_mdn.transform.inverse(u)
        lp = small_mdn.log_prob(theta, np.asarray(x)) + log_dtheta
        assert float(np.exp(lp).sum() * grid.cell_volume) == pytest.approx(1.0, abs=1e-3)

    def test_positive_support_normalized(self):
        task = make_task("sir")
        m = MixtureDensityNetwork.for_task(task, RngStream(0), n_components=2, hidden=(8,), n_pilot=500)
        x = sample_joint(task, 1, RngStream(1)).x[0]
        # integrate in log-coordinates, where the transformed density is smooth
        grid = GridSpec((-6.0, -6.0), (3.0, 2.0), (800, 800))
        u = grid.points()
        lp = m.log_prob(np.exp(u), x) + u.sum(axis=1)
        assert float(np.exp(lp).sum() * grid.cell_volume) == pytest.approx(1.0, abs=1e-3)

    def test_sampling_matches_cdf(self):
        task = make_task("bivariate_gaussian")
        m = MixtureDensityNetwork.for_task(task, RngStream(2), n_components=3, hidden=(8,), n_pilot=500)
        m.set_flat(m.get_flat() + 0.5 * np.random.default_rng(3).standard_normal(m.n_params))
        x = np.array([0.7])
        draws = np.sort(m.sample(x, RngStream(4), 100_000)[:, 0])
        grid = np.linspace(draws[0] - 5, draws[-1] + 5, 200_001)
        dens = m.density(grid[:, None], x)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
        ecdf = np.arange(1, draws.size + 1) / draws.size
        assert np.max(np.abs(np.interp(draws, grid, cdf) - ecdf)) <= 0.01

    def test_sample_log_prob_finite_at_boundary(self):
        task = make_task("two_moons")
        m = MixtureDensityNetwork.for_task(task, RngStream(0), n_components=1, hidden=(4,), n_pilot=500)
        # push the single component far into the logit tail
        m.params[-1][1:3] = 40.0
        theta, lq = m.sample_with_log_prob([0.0, 0.0], RngStream(1), 100)
        assert np.all(np.isfinite(lq))

    def test_set_flat_size_check(self, small_mdn):
        with pytest.raises(DomainError):
            small_mdn.set_flat(np.zeros(3))


class TestTraining:
    def test_zero_steps_is_identity(self, small_mdn):
        res = train_favi(small_mdn, make_task("two_moons"), 0, RngStream(0))
        np.testing.assert_array_equal(res.model.get_flat(), small_mdn.get_flat())
        assert res.losses.size == 0

    def test_input_model_untouched(self, small_mdn):
        before = small_mdn.get_flat()
        train_favi(small_mdn, make_task("two_moons"), 5, RngStream(0), batch=16)
        np.testing.assert_array_equal(small_mdn.get_flat(), before)

    def test_loss_trace_and_checkpoints(self, small_mdn):
        res = train_favi(small_mdn, make_task("two_moons"), 25, RngStream(0), batch=16, checkpoint_every=10)
        assert res.losses.shape == (25,)
        assert [s for s, _ in res.checkpoints] == [0, 10, 20, 25]
        np.testing.assert_array_equal(res.checkpoints[0][1].get_flat(), small_mdn.get_flat())

    def test_reproducible(self, small_mdn):
        a = train_favi(small_mdn, make_task("two_moons"), 20, RngStream(3), batch=16)
        b = train_favi(small_mdn, make_task("two_moons"), 20, RngStream(3), batch=16)
        np.testing.assert_array_equal(a.model.get_flat(), b.model.get_flat())

    def test_nonfinite_loss_reports_step(self, small_mdn):
        m = small_mdn.copy()
        m.set_flat(np.full(m.n_params, np.nan))
        with pytest.raises(TrainingError) as info:
            train_favi(m, make_task("two_moons"), 3, RngStream(0), batch=8)
        assert info.value.step == 1

    def test_recovers_posterior_slope(self):
        task = make_task("bivariate_gaussian", rho=0.3)
        m = MixtureDensityNetwork.for_task(task, RngStream(0, (1,)), n_components=1)
        trained = train_favi(m, task, 5000, RngStream(0, (2,))).model
        xs = np.linspace(-2, 2, 41)[:, None]
        _, mu, _ = trained.mixture_params(xs)
        mean = trained.u_loc + trained.u_scale * mu[:, 0, :]
        slope = np.polyfit(xs[:, 0], mean[:, 0], 1)[0]
        assert slope == pytest.approx(0.3, abs=0.05)

    def test_smoothed_loss_nonincreasing(self):
        task = make_task("gaussian_linear")
        m = MixtureDensityNetwork.for_task(task, RngStream(0, (1,)))
        res = train_favi(m, task, 2000, RngStream(0, (2,)))
        means = smoothed(res.losses, 100)
        se = res.losses[: means.size * 100].reshape(means.size, 100).std(axis=1, ddof=1) / 10
        rises = np.diff(means) - 3 * np.sqrt(se[1:] ** 2 + se[:-1] ** 2)
        assert np.all(rises <= 0)
        assert means[-1] < means[0]

    def test_smoothed_drops_partial_window(self):
        np.testing.assert_allclose(smoothed(np.arange(250.0), 100), [49.5, 149.5])


class TestCheckpoint:
    @pytest.mark.parametrize("make", [
        lambda: ConditionalLinearGaussian([[0.3, 0.2]], [0.1], [[0.91]]),
        lambda: PriorModel(make_task("two_moons")),
        lambda: ConditionalUniform({0: (0.0, 50.0), 1: (200.0, 300.0)}),
        lambda: MixtureDensityNetwork.for_task(make_task("sir"), RngStream(0), n_components=2, hidden=(8,), n_pilot=300),
        lambda: DispersionScaled(MixtureDensityNetwork.for_task(make_task("two_moons"), RngStream(0), 2, (8,), 300), 0.5),
    ])
    def test_round_trip_bit_exact(self, tmp_path, make):
        model = make()
        save_model(model, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        assert type(back) is type(model)
        rng = np.random.default_rng(0)
        x = rng.uniform(0.0, 1.0, (50, model.x_dim))
        if model.x_dim == 10:
            x = np.round(x * 1000)
        theta = np.abs(rng.uniform(0.05, 0.95, (50, model.theta_dim)))
        np.testing.assert_array_equal(back.log_prob(theta, x), model.log_prob(theta, x))

    def test_header(self, tmp_path):
        save_model(ConditionalLinearGaussian([[1.0]]), tmp_path / "m.json")
        doc = json.loads((tmp_path / "m.json").read_text())
        assert doc["format"] == "canvi-model"
        assert doc["family"] == "linear_gaussian"
        assert (doc["theta_dim"], doc["x_dim"]) == (1, 1)

    def test_malformed(self, tmp_path):
        (tmp_path / "bad.json").write_text("{not json")
        with pytest.raises(CanviError):
            load_model(tmp_path / "bad.json")
