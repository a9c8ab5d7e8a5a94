"""Density estimation and likelihood-based estimators against oracles."""

import io

import numpy as np
import pytest

from liebridge.estimators import (
    DensityEstimate,
    DensityGrid,
    DiffusionMean,
    MetricEstimator,
    MLETrace,
    diffusion_mean_spd,
    heat_kernel_is,
    log_likelihood,
    metric_mle,
    pushforward_density_grid,
    q_density,
    s2_exact_kernel,
    s2_kernel_is,
)
from liebridge.lie_core import MetricParam, gl_exp, so3_exp
from liebridge.sde import NoiseStream, TimeGrid, sample_brownian_motion
from liebridge.spaces import make_space

RNG = np.random.default_rng(20240813)


class TestQDensity:
    def test_abelian_example(self):
        # sqrt(det 4I) (2 pi T)^{-3/2} at the identity = 8 (2 pi)^{-3/2}
        spec = make_space("abelian:3")
        A = MetricParam(4.0 * np.eye(3))
        val = q_density(np.zeros(3), A, 1.0, spec)
        assert np.isclose(val, 8.0 * (2.0 * np.pi) ** -1.5)

    def test_gaussian_shape(self):
        spec = make_space("abelian:1")
        A = MetricParam(np.eye(1))
        T = 2.0
        for x in [0.0, 0.5, 1.7]:
            expected = (2.0 * np.pi * T) ** -0.5 * np.exp(-x ** 2 / (2.0 * T))
            assert np.isclose(q_density(np.array([x]), A, T, spec), expected)

    def test_uses_spec_metric_when_none(self):
        A = MetricParam(np.diag([4.0, 1.0, 1.0]))
        spec = make_space("abelian:3", A)
        assert np.isclose(
            q_density(np.zeros(3), None, 1.0, spec), q_density(np.zeros(3), A, 1.0, spec)
        )

    def test_rejects_bad_T(self):
        with pytest.raises(ValueError):
            q_density(np.zeros(1), MetricParam(np.eye(1)), 0.0, make_space("abelian:1"))


class TestHeatKernelIS:
    def test_abelian_is_exact(self):
        # phi = 1 on the additive group: the estimate equals the Gaussian
        spec = make_space("abelian:2")
        A = MetricParam(np.diag([2.0, 0.5]))
        v = np.array([0.7, -0.3])
        est = heat_kernel_is(v, A, 1.5, 100, spec, NoiseStream(51), steps=20)
        assert np.isclose(est.value, q_density(v, A, 1.5, spec.with_metric(A.A)))
        assert est.mc_std_error == 0.0

    def test_so3_matches_fiber_integrated_s2_kernel(self):
        # DERIVED oracle: integrating p_SO3 over a fiber gives the exact
        # S^2 kernel; with the bi-invariant metric the fiber length is 2 pi
        space = make_space("s2")
        spec = space.group
        T, theta = 0.5, 0.7
        v = np.array([np.sin(theta), 0.0, np.cos(theta)])
        angles = 2.0 * np.pi * (np.arange(8) + 0.5) / 8
        noise = NoiseStream(101)
        vals = [
            heat_kernel_is(space.fiber_point(v, s), None, T, 400, spec, noise.child(i), steps=50).value
            for i, s in enumerate(angles)
        ]
        approx = 2.0 * np.pi * np.mean(vals)
        exact = s2_exact_kernel(theta, T, 20)
        assert abs(approx / exact - 1.0) < 0.10

    def test_density_estimate_repr(self):
        est = DensityEstimate(0.5, 0.01, 100)
        assert "0.5" in repr(est)
        with pytest.raises(ValueError):
            DensityEstimate(-1.0, 0.0, 10)


class TestLogLikelihood:
    def test_abelian_matches_gaussian_loglik(self):
        A = MetricParam(np.diag([4.0, 1.0, 1.0]))
        spec = make_space("abelian:3")
        data = RNG.normal(size=(16, 3))
        ll = log_likelihood(data, A, 1.0, 2, spec, NoiseStream(52), steps=2)
        r2 = np.einsum("ni,ij,nj->n", data, A.A, data)
        expected = np.sum(0.5 * np.log(A.det) - 1.5 * np.log(2.0 * np.pi) - r2 / 2.0)
        assert np.isclose(ll, expected)

    def test_rejects_off_branch_observations(self):
        spec = make_space("so3")
        data = np.stack([np.eye(3), so3_exp(np.array([np.pi - 1e-9, 0.0, 0.0]))])
        with pytest.raises(ValueError, match="indices"):
            log_likelihood(data, MetricParam(np.eye(3)), 0.5, 2, spec, NoiseStream(53), steps=5)


class TestMetricMLE:
    def test_abelian_converges_to_closed_form_mle(self):
        # DERIVED oracle: the additive-group likelihood is an exact
        # Gaussian, so ascent must reach A_hat = (mean x x^T)^{-1}
        true_spec = make_space("abelian:3", MetricParam(np.diag([4.0, 1.0, 1.0])))
        data = sample_brownian_motion(
            true_spec, TimeGrid(1.0, 2), NoiseStream(7), 64, keep_path=False
        ).endpoints()
        A_hat = np.linalg.inv(data.T @ data / len(data))
        trace = metric_mle(
            data, np.eye(3), 12.0, 200, 2, make_space("abelian:3"), NoiseStream(8), T=1.0, steps=2
        )
        assert np.linalg.norm(trace.final - A_hat) < 1e-3

    def test_trace_has_k_plus_one_rows(self):
        spec = make_space("abelian:3")
        data = RNG.normal(size=(8, 3))
        trace = metric_mle(data, np.eye(3), 1.0, 5, 2, spec, NoiseStream(9), T=1.0, steps=2)
        assert len(trace) == 6
        assert np.allclose(trace.thetas[0], np.eye(3))
        assert np.isnan(trace.iterations[-1][2])

    def test_loglik_increases_overall(self):
        true_spec = make_space("abelian:3", MetricParam(np.diag([4.0, 1.0, 1.0])))
        data = sample_brownian_motion(
            true_spec, TimeGrid(1.0, 2), NoiseStream(7), 64, keep_path=False
        ).endpoints()
        trace = metric_mle(
            data, np.eye(3), 12.0, 50, 2, make_space("abelian:3"), NoiseStream(8), T=1.0, steps=2
        )
        lls = trace.log_likelihoods
        assert lls[-1] > lls[0]

    def test_csv_schema(self):
        trace = MLETrace([(np.eye(3), -1.0, 0.5), (np.eye(3), -0.5, np.nan)])
        buf = io.StringIO()
        trace.write_csv(buf)
        lines = buf.getvalue().strip().splitlines()
        assert lines[0] == "iteration,t00,t01,t02,t11,t12,t22,loglik,gradnorm"
        assert len(lines) == 3
        assert lines[-1].endswith(",")  # NaN gradnorm renders empty


class TestDiffusionMeanSPD:
    def test_short_run_moves_toward_data_mean(self):
        rng = np.random.default_rng(77)
        W = rng.normal(scale=0.15, size=(12, 3, 3))
        data = gl_exp(0.5 * (W + np.swapaxes(W, -1, -2)))
        trace = diffusion_mean_spd(data, np.eye(3), 0.75, 4, 2, NoiseStream(61), T=0.25, steps=8)
        assert len(trace) == 5
        assert trace.log_likelihoods[-1] >= trace.log_likelihoods[0] - 1.0
        w = np.linalg.eigvalsh(trace.final)
        assert np.all(w > 0)


class TestS2Kernels:
    def test_exact_kernel_frozen_value(self):
        # DERIVED (frozen): truncated series at theta=0, T=0.5, L=20
        assert np.isclose(s2_exact_kernel(0.0, 0.5, 20), 0.34623, atol=1e-5)

    def test_exact_kernel_integrates_to_one(self):
        theta = np.linspace(0.0, np.pi, 2001)
        p = s2_exact_kernel(theta, 0.5, 30)
        integral = 2.0 * np.pi * np.trapezoid(p * np.sin(theta), theta)
        assert abs(integral - 1.0) < 1e-6

    def test_exact_kernel_long_time_uniform(self):
        assert np.isclose(s2_exact_kernel(1.0, 50.0, 20), 1.0 / (4.0 * np.pi), atol=1e-8)

    def test_is_estimate_matches_exact(self):
        for theta in [0.0, 0.8]:
            v = np.array([np.sin(theta), 0.0, np.cos(theta)])
            est = s2_kernel_is(v, 0.5, 384, NoiseStream(62), steps=50)
            exact = s2_exact_kernel(theta, 0.5, 20)
            assert abs(est.value / exact - 1.0) < 0.15


class TestDensityGrid:
    def _edges(self):
        return np.linspace(1.0, -1.0, 9), np.linspace(0.0, 2.0 * np.pi, 17)

    def test_uniform_grid_has_zero_tv(self):
        cos_e, phi_e = self._edges()
        g = DensityGrid(1.0, np.ones((8, 16)), cos_e, phi_e)
        assert g.tv_to_uniform() == 0.0
        assert g.anisotropy_ratio(0.5) == 1.0

    def test_tv_of_point_mass(self):
        cos_e, phi_e = self._edges()
        vals = np.zeros((8, 16))
        vals[0, 0] = 1.0
        g = DensityGrid(1.0, vals, cos_e, phi_e)
        assert np.isclose(g.tv_to_uniform(), 1.0 - 1.0 / 128.0)

    def test_anisotropy_ratio_band_selection(self):
        cos_e, phi_e = self._edges()
        vals = np.ones((8, 16))
        vals[0] = 1.0  # band containing polar angle 0.5 (cos 0.5 ~ 0.878)
        vals[0, 3] = 2.0
        g = DensityGrid(1.0, vals, cos_e, phi_e)
        assert np.isclose(g.anisotropy_ratio(0.5), 2.0)

    def test_csv_schema(self):
        cos_e, phi_e = self._edges()
        g = DensityGrid(1.0, np.ones((8, 16)), cos_e, phi_e)
        buf = io.StringIO()
        g.write_csv(buf)
        lines = buf.getvalue().strip().splitlines()
        assert lines[0] == "cos_theta_lo,cos_theta_hi,phi_lo,phi_hi,density"
        assert len(lines) == 129


class TestPushforwardDensity:
    def test_bi_invariant_short_run_normalizes(self):
        grids = pushforward_density_grid(
            MetricParam(np.eye(3)), [0.5], 2048, 2, NoiseStream(63), steps=25
        )
        g = grids[0]
        assert g.values.shape == (8, 16)
        assert np.all(g.values > 0)
        cell_area = 4.0 * np.pi / 128.0
        total = g.values.sum() * cell_area
        assert abs(total - 1.0) < 0.1

    def test_bi_invariant_is_nearly_uniform_at_large_T(self):
        grids = pushforward_density_grid(
            MetricParam(np.eye(3)), [4.0], 2048, 2, NoiseStream(64), steps=40
        )
        assert grids[0].tv_to_uniform() < 0.1


class TestSklearnWrappers:
    def test_metric_estimator_fit(self):
        spec = make_space("abelian:3")
        true_spec = spec.with_metric(np.diag([4.0, 1.0, 1.0]))
        data = sample_brownian_motion(
            true_spec, TimeGrid(1.0, 2), NoiseStream(7), 64, keep_path=False
        ).endpoints()
        est = MetricEstimator(spec=spec, eta=12.0, K=50, m=2, T=1.0, steps=2, seed=0)
        est.fit(data)
        assert est.metric_.shape == (3, 3)
        assert len(est.trace_) == 51
        assert np.isfinite(est.score(data))

    def test_metric_estimator_get_set_params(self):
        est = MetricEstimator(eta=0.5)
        params = est.get_params()
        assert params["eta"] == 0.5
        est.set_params(eta=1.0)
        assert est.eta == 1.0

    def test_diffusion_mean_fit(self):
        rng = np.random.default_rng(5)
        W = rng.normal(scale=0.1, size=(6, 3, 3))
        data = gl_exp(0.5 * (W + np.swapaxes(W, -1, -2)))
        est = DiffusionMean(K=2, m=2, steps=6, seed=1)
        est.fit(data)
        assert est.mean_.shape == (3, 3)
        assert np.all(np.linalg.eigvalsh(est.mean_) > 0)
