"""Group and homogeneous-space interfaces and fiber geometry."""

import numpy as np
import pytest

from liebridge.lie_core import MetricParam, gl_exp, hat, so3_exp
from liebridge.spaces import (
    AbelianGroup,
    GLGroup,
    S2Space,
    SO3Group,
    SPDSpace,
    make_space,
)

RNG = np.random.default_rng(20240812)


class TestMakeSpace:
    def test_names(self):
        assert isinstance(make_space("so3"), SO3Group)
        assert isinstance(make_space("gl3"), GLGroup)
        assert isinstance(make_space("abelian:4"), AbelianGroup)
        assert isinstance(make_space("s2"), S2Space)
        assert isinstance(make_space("spd3"), SPDSpace)

    def test_unknown_name(self):
        with pytest.raises(ValueError):
            make_space("torus")

    def test_bad_abelian_dim(self):
        with pytest.raises(ValueError):
            make_space("abelian:x")


class TestGroupAxioms:
    @pytest.mark.parametrize("name", ["so3", "gl3", "abelian:3"])
    def test_compose_inverse_identity(self, name):
        spec = make_space(name)
        x = spec.exp(0.4 * RNG.normal(size=spec.dim))
        y = spec.exp(0.4 * RNG.normal(size=spec.dim))
        e = spec.identity()
        assert np.allclose(spec.compose(x, spec.inverse(x)), e, atol=1e-10)
        assert np.allclose(spec.compose(x, e), x)
        z = spec.compose(x, y)
        assert np.allclose(spec.compose(spec.inverse(x), z), y, atol=1e-10)

    @pytest.mark.parametrize("name", ["so3", "gl3", "abelian:3"])
    def test_exp_log_round_trip(self, name):
        spec = make_space(name)
        coords = 0.5 * RNG.normal(size=(6, spec.dim))
        assert np.allclose(spec.log(spec.exp(coords)), coords, atol=1e-8)

    @pytest.mark.parametrize("name", ["so3", "gl3", "abelian:3"])
    def test_log_to_distance(self, name):
        spec = make_space(name)
        x = spec.exp(0.3 * RNG.normal(size=spec.dim))
        y = spec.exp(0.3 * RNG.normal(size=spec.dim))
        w = spec.log_to(x, y)
        assert np.allclose(spec.compose(x, spec.exp(w)), y, atol=1e-8)
        assert np.isclose(spec.distance(x, x), 0.0, atol=1e-8)
        assert spec.distance(x, y) >= 0


class TestMetricPlumbing:
    def test_sigma_is_inverse_sqrt(self):
        A = np.diag([0.2, 0.2, 0.8])
        spec = make_space("so3", MetricParam(A))
        assert np.allclose(spec.sigma @ spec.sigma, np.linalg.inv(A))

    def test_with_metric_preserves_type(self):
        spec = make_space("so3").with_metric(np.diag([2.0, 1.0, 1.0]))
        assert isinstance(spec, SO3Group)
        assert np.allclose(spec.metric.A, np.diag([2.0, 1.0, 1.0]))

    def test_so3_v0_vanishes_any_metric(self):
        # so(3) is unimodular: the drift V0 vanishes for every metric
        A = np.diag([0.2, 0.5, 3.0])
        spec = make_space("so3", MetricParam(A))
        assert np.allclose(spec.v0_coords, 0.0, atol=1e-12)

    def test_gl3_v0_vanishes(self):
        spec = make_space("gl3")
        assert np.allclose(spec.v0_coords, 0.0, atol=1e-12)

    def test_abelian_v0_zero(self):
        assert np.allclose(make_space("abelian:2").v0_coords, 0.0)

    def test_metric_dim_mismatch(self):
        with pytest.raises(ValueError):
            make_space("so3", MetricParam(np.eye(4)))


class TestStep:
    def test_so3_step_second_order(self):
        spec = make_space("so3")
        x = so3_exp(np.array([0.2, -0.1, 0.3]))
        m = np.array([1e-3, 2e-3, -1e-3])
        exact = x @ so3_exp(m)
        assert np.allclose(spec.step(x, m), exact, atol=1e-9)

    def test_so3_project_restores_orthogonality(self):
        spec = make_space("so3")
        x = so3_exp(np.array([0.2, -0.1, 0.3])) + 1e-3 * RNG.normal(size=(3, 3))
        R = spec.project(x)
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)

    def test_abelian_step_is_addition(self):
        spec = make_space("abelian:2")
        assert np.allclose(spec.step(np.array([1.0, 2.0]), np.array([0.5, -1.0])), [1.5, 1.0])


class TestS2:
    def test_project_third_column(self):
        space = make_space("s2")
        R = so3_exp(np.array([0.3, 0.2, -0.4]))
        assert np.allclose(space.project(R), R[:, 2])

    def test_section_maps_e3(self):
        space = make_space("s2")
        v = np.array([0.3, -0.5, 0.8])
        v /= np.linalg.norm(v)
        R = space.section(v)
        assert np.allclose(R @ np.array([0.0, 0.0, 1.0]), v, atol=1e-12)
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)

    def test_section_at_poles(self):
        space = make_space("s2")
        assert np.allclose(space.section(np.array([0.0, 0.0, 1.0])), np.eye(3))
        Rm = space.section(np.array([0.0, 0.0, -1.0]))
        assert np.allclose(Rm @ np.array([0.0, 0.0, 1.0]), [0.0, 0.0, -1.0], atol=1e-12)

    def test_fiber_point_projects_to_base(self):
        space = make_space("s2")
        v = np.array([0.6, 0.0, 0.8])
        for s in [0.0, 1.0, 3.0]:
            g = space.fiber_point(v, s)
            assert np.allclose(space.project(g), v, atol=1e-12)

    def test_nearest_fiber_point_beats_dense_grid(self):
        space = make_space("s2")
        spec = space.group
        v = np.array([0.36, 0.48, 0.8])
        y = so3_exp(np.array([0.9, -0.4, 0.7]))
        best = space.nearest_fiber_point(y, v)
        d_best = spec.distance(y, best)
        for s in np.linspace(0.0, 2.0 * np.pi, 720, endpoint=False):
            g = space.fiber_point(v, s)
            assert d_best <= spec.distance(y, g) + 1e-8

    def test_base_distance(self):
        space = make_space("s2")
        assert np.isclose(
            space.base_distance(np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0])),
            np.pi / 2.0,
        )


class TestSPD:
    def test_project(self):
        space = make_space("spd3")
        g = gl_exp(0.3 * RNG.normal(size=(3, 3)))
        assert np.allclose(space.project(g), g @ g.T)

    def test_sqrt_inverse_pair(self):
        space = make_space("spd3")
        V = space.project(gl_exp(0.3 * RNG.normal(size=(3, 3))))
        assert np.allclose(space.sqrt(V) @ space.sqrt(V), V, atol=1e-10)
        assert np.allclose(space.sqrt(V) @ space.inv_sqrt(V), np.eye(3), atol=1e-10)

    def test_sqrt_rejects_indefinite(self):
        with pytest.raises(ValueError):
            make_space("spd3").sqrt(np.diag([1.0, -1.0, 1.0]))

    def test_fiber_point_projects_to_base(self):
        space = make_space("spd3")
        V = np.diag([2.0, 1.0, 0.5])
        R = so3_exp(np.array([0.3, 0.1, -0.2]))
        g = space.fiber_point(V, R)
        assert np.allclose(space.project(g), V, atol=1e-10)

    def test_nearest_fiber_point_is_critical(self):
        # the polar point V^{1/2} U has symmetric log(y^{-1} vbar): the
        # first-order optimality condition of the fiber distance
        space = make_space("spd3")
        spec = space.group
        V = np.diag([2.0, 1.0, 0.5])
        y = gl_exp(0.4 * RNG.normal(size=(3, 3)))
        vbar = space.nearest_fiber_point(y, V)
        assert np.allclose(space.project(vbar), V, atol=1e-8)
        L = spec.algebra(spec.log_to(y, vbar))
        assert np.allclose(L, L.T, atol=1e-8)

    def test_base_distance_affine_invariant(self):
        space = make_space("spd3")
        p = np.diag([1.0, 1.0, 1.0])
        q = np.diag([np.e, 1.0, 1.0])
        assert np.isclose(space.base_distance(p, q), 1.0, atol=1e-12)
        g = gl_exp(0.3 * RNG.normal(size=(3, 3)))
        gp = g @ p @ g.T
        gq = g @ q @ g.T
        assert np.isclose(space.base_distance(gp, gq), 1.0, atol=1e-10)


class TestHomogeneousConstruction:
    def test_s2_group_is_so3(self):
        assert isinstance(make_space("s2").group, SO3Group)

    def test_spd3_group_is_gl3(self):
        assert isinstance(make_space("spd3").group, GLGroup)

    def test_metric_passes_through(self):
        A = np.diag([0.2, 0.2, 0.8])
        space = make_space("s2", MetricParam(A))
        assert np.allclose(space.group.metric.A, A)
