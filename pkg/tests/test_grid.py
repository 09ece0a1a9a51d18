import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from localvol.grid import (
    A_FLOOR,
    MeshError,
    ObservationError,
    ObservationSet,
    PriceSurface,
    VarianceSurface,
    build_mesh,
    build_observation_operator,
)


def bilinear_oracle(taus, ys, values, tau, y):
    """Independent bilinear interpolation on a uniform grid."""
    it = np.searchsorted(taus, tau, side="right") - 1
    it = min(max(it, 0), len(taus) - 2)
    jy = np.searchsorted(ys, y, side="right") - 1
    jy = min(max(jy, 0), len(ys) - 2)
    wt = (tau - taus[it]) / (taus[it + 1] - taus[it])
    wy = (y - ys[jy]) / (ys[jy + 1] - ys[jy])
    return (
        (1 - wt) * (1 - wy) * values[it, jy]
        + (1 - wt) * wy * values[it, jy + 1]
        + wt * (1 - wy) * values[it + 1, jy]
        + wt * wy * values[it + 1, jy + 1]
    )


class TestBuildMesh:
    def test_fine_synthetic_mesh_counts(self):
        # 0.5 / 0.005 = 100 steps and 10 / 0.025 = 400 intervals.
        mesh = build_mesh(0.005, 0.025, -5, 5, 0.5)
        assert mesh.n_levels == 101
        assert mesh.n_space == 401
        assert mesh.dtau == pytest.approx(0.005)
        assert mesh.dy == pytest.approx(0.025)

    def test_practical_grid_mesh(self):
        mesh = build_mesh(0.1, 0.1, -3.5, 3.5, 1.8)
        assert mesh.n_levels == 19
        assert mesh.n_space == 71
        assert mesh.taus[-1] == pytest.approx(1.8)
        assert mesh.ys[0] == pytest.approx(-3.5)

    def test_degenerate_mesh_keeps_one_interior_node(self):
        mesh = build_mesh(0.5, 10.0, -5, 5, 0.5)
        assert mesh.m_y == 1
        assert mesh.m_tau == 0
        assert mesh.dy == pytest.approx(5.0)

    def test_requested_step_is_never_exceeded(self):
        mesh = build_mesh(0.033, 0.021, -1, 1, 0.4)
        assert mesh.dtau <= 0.033 + 1e-15
        assert mesh.dy <= 0.021 + 1e-15

    @pytest.mark.parametrize(
        "kwargs, field",
        [
            (dict(dtau=-0.1, dy=0.1, l_y=-1, r_y=1, t_max=1.0), "dtau"),
            (dict(dtau=0.1, dy=0.0, l_y=-1, r_y=1, t_max=1.0), "dy"),
            (dict(dtau=0.1, dy=0.1, l_y=-1, r_y=1, t_max=np.nan), "t_max"),
            (dict(dtau=0.1, dy=0.1, l_y=np.inf, r_y=1, t_max=1.0), "l_y"),
            (dict(dtau=0.1, dy=0.1, l_y=0.5, r_y=1, t_max=1.0), "l_y"),
        ],
    )
    def test_bad_arguments_name_the_field(self, kwargs, field):
        with pytest.raises(MeshError, match=field):
            build_mesh(**kwargs)

    def test_nodes_cover_the_domain(self):
        mesh = build_mesh(0.07, 0.11, -2, 3, 0.9)
        assert mesh.taus[0] == 0.0
        assert mesh.taus[-1] == pytest.approx(0.9)
        assert mesh.ys[0] == pytest.approx(-2.0)
        assert mesh.ys[-1] == pytest.approx(3.0)


class TestSurfaces:
    def test_variance_floor_enforced(self):
        mesh = build_mesh(0.1, 0.5, -1, 1, 0.3)
        with pytest.raises(ValueError, match="floor"):
            VarianceSurface(mesh, np.zeros(mesh.shape))

    def test_values_are_immutable(self):
        mesh = build_mesh(0.1, 0.5, -1, 1, 0.3)
        surf = VarianceSurface.constant(mesh, 0.08)
        with pytest.raises(ValueError):
            surf.values[0, 0] = 1.0

    def test_shape_mismatch_rejected(self):
        mesh = build_mesh(0.1, 0.5, -1, 1, 0.3)
        with pytest.raises(ValueError):
            PriceSurface(mesh, np.zeros((2, 2)))

    def test_sigma_round_trip(self):
        mesh = build_mesh(0.1, 0.5, -1, 1, 0.3)
        surf = VarianceSurface.constant(mesh, 0.08)
        np.testing.assert_allclose(surf.sigma(), 0.4)


class TestObservationSet:
    def test_duplicates_forbidden(self):
        with pytest.raises(ObservationError, match="duplicate"):
            ObservationSet(
                tau=[0.1, 0.1], y=[0.0, 0.0], price=[1.0, 2.0], s0_ref=1.0
            )

    def test_zero_maturity_rejected(self):
        with pytest.raises(ObservationError):
            ObservationSet(tau=[0.0], y=[0.0], price=[1.0], s0_ref=1.0)

    def test_strikes_invert_log_moneyness(self):
        obs = ObservationSet(tau=[0.1], y=[np.log(1.2)], price=[0.5], s0_ref=2.0)
        np.testing.assert_allclose(obs.strikes(), [2.4])


class TestObservationOperator:
    def setup_method(self):
        self.mesh = build_mesh(0.005, 0.025, -5, 5, 0.5)

    def test_on_node_quote_single_unit_weight(self):
        obs = ObservationSet(tau=[0.1], y=[0.025 * 4 - 5 + 5], price=[1.0], s0_ref=1.0)
        # y = 0.1 is node 204 exactly; tau = 0.1 is level 20 exactly.
        P = build_observation_operator(self.mesh, obs)
        entries = P.row_entries(0)
        assert len(entries) == 1
        idx, w = entries[0]
        assert w == pytest.approx(1.0)
        assert idx == self.mesh.flat_index(20, 204)

    def test_cell_center_gives_four_quarter_weights(self):
        tau = 0.005 * 10.5
        y = -5 + 0.025 * 100.5
        obs = ObservationSet(tau=[tau], y=[y], price=[1.0], s0_ref=1.0)
        P = build_observation_operator(self.mesh, obs)
        weights = sorted(w for _, w in P.row_entries(0))
        np.testing.assert_allclose(weights, [0.25] * 4)

    def test_bilinear_weights_match_hand_oracle(self):
        tau, y = 0.15, 0.0125
        obs = ObservationSet(tau=[tau], y=[y], price=[1.0], s0_ref=1.0)
        P = build_observation_operator(self.mesh, obs)
        rng = np.random.default_rng(7)
        u = PriceSurface(self.mesh, rng.uniform(0, 1, self.mesh.shape))
        expected = bilinear_oracle(self.mesh.taus, self.mesh.ys, u.values, tau, y)
        assert P.apply(u)[0] == pytest.approx(expected, rel=1e-12)

    def test_rows_are_convex_combinations(self):
        rng = np.random.default_rng(3)
        taus = rng.uniform(1e-3, 0.5, 25)
        ys = rng.uniform(-5, 5, 25)
        obs = ObservationSet(tau=taus, y=ys, price=np.ones(25), s0_ref=1.0)
        P = build_observation_operator(self.mesh, obs)
        for k in range(25):
            weights = np.array([w for _, w in P.row_entries(k)])
            assert np.all(weights >= 0)
            assert weights.sum() == pytest.approx(1.0)

    def test_out_of_mesh_quote_raises(self):
        obs = ObservationSet(tau=[0.7], y=[0.0], price=[1.0], s0_ref=1.0)
        with pytest.raises(ObservationError, match="outside"):
            build_observation_operator(self.mesh, obs)

    @settings(max_examples=25, deadline=None)
    @given(
        alpha=st.floats(-3, 3, allow_nan=False),
        beta=st.floats(-3, 3, allow_nan=False),
        seed=st.integers(0, 2**16),
    )
    def test_projection_is_linear(self, alpha, beta, seed):
        mesh = build_mesh(0.1, 0.5, -2, 2, 0.4)
        rng = np.random.default_rng(seed)
        obs = ObservationSet(
            tau=rng.uniform(0.05, 0.4, 6),
            y=rng.uniform(-2, 2, 6),
            price=np.ones(6),
            s0_ref=1.0,
        )
        P = build_observation_operator(mesh, obs)
        u = rng.standard_normal(mesh.shape)
        v = rng.standard_normal(mesh.shape)
        lhs = P.apply_values(alpha * u + beta * v)
        rhs = alpha * P.apply_values(u) + beta * P.apply_values(v)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_refinement_preserves_on_node_predictions(self):
        coarse = build_mesh(0.1, 0.5, -2, 2, 0.4)
        fine = build_mesh(0.05, 0.25, -2, 2, 0.4)

        def f(tau, y):
            return np.cos(y) * (1.0 + tau)

        taus = [0.1, 0.2, 0.4]
        ys = [-0.5, 0.0, 1.5]
        obs = ObservationSet(
            tau=np.repeat(taus, 3), y=np.tile(ys, 3), price=np.ones(9), s0_ref=1.0
        )
        vals = []
        for mesh in (coarse, fine):
            tt, yy = np.meshgrid(mesh.taus, mesh.ys, indexing="ij")
            P = build_observation_operator(mesh, obs)
            vals.append(P.apply_values(f(tt, yy)))
        np.testing.assert_allclose(vals[0], vals[1], rtol=1e-12)
