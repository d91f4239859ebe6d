import math

import numpy as np
import pytest

from nlslab import geometry as G
from nlslab import solver as S


def sphere_setup(n_cells=256, bc=None):
    m = G.make_manifold("sphere_cap", 2)
    grid = G.make_grid(m, n_cells, bc_rmax=bc)
    return m, grid


class TestInitialProfile:
    def test_zonal_cos(self):
        _, grid = sphere_setup(512)
        v = S.initial_profile("zonal_cos", grid)
        assert v[0] == pytest.approx(1.0, abs=1e-4)   # r -> 0+
        assert abs(v[-1]) < 5e-3                       # vanishing at pi/2

    def test_gaussian_tail(self):
        # tail past pi/2 + 5 sigma needs a domain reaching that far
        m = G.make_manifold("euclidean", 2, r_max=2.5)
        grid = G.make_grid(m, 512, bc_rmax="neumann")
        v = S.initial_profile("gaussian_bump", grid, center=math.pi / 4, width=0.1)
        far = grid.r >= math.pi / 2 + 0.5
        assert np.max(np.abs(v[far])) < 1e-10

    def test_rejects_boundary_mass(self):
        _, grid = sphere_setup(128)
        with pytest.raises(S.ProfileError):
            S.initial_profile("gaussian_bump", grid, center=math.pi / 2, width=0.2)

    def test_neumann_accepts_boundary_mass(self):
        _, grid = sphere_setup(128, bc="neumann")
        v = S.initial_profile("gaussian_bump", grid, center=math.pi / 2, width=0.2)
        assert v[-1] > 0.5

    def test_table_profile(self):
        _, grid = sphere_setup(64)
        r = np.linspace(0.0, math.pi / 2, 200)
        table = np.column_stack([r, np.cos(r)])
        v = S.initial_profile("table", grid, table=table)
        assert np.max(np.abs(v - np.cos(grid.r))) < 1e-4

    def test_unknown_name(self):
        _, grid = sphere_setup(64)
        with pytest.raises(S.ProfileError):
            S.initial_profile("soliton", grid)


class TestScaling:
    def test_threshold_matches_hand_quadrature(self):
        # K = 4 pi/3, P = 2 pi/7 -> A*^4 = 14
        _, grid = sphere_setup(2048)
        v = S.initial_profile("zonal_cos", grid)
        a_star = S.scale_to_negative_energy(v, 5.0, grid, margin=0.0)
        assert a_star == pytest.approx(14.0 ** 0.25, rel=1e-5)

    def test_zero_margin_zero_energy(self):
        from nlslab.diagnostics import energy
        _, grid = sphere_setup(1024)
        v = S.initial_profile("zonal_cos", grid)
        a_star = S.scale_to_negative_energy(v, 5.0, grid, margin=0.0)
        st = S.WaveState((a_star * v).astype(complex), 0.0, 5.0)
        e = energy(st, grid)
        assert abs(e) < 1e-10 * max(1.0, a_star ** 2)

    def test_margin_makes_energy_negative_and_monotone(self):
        from nlslab.diagnostics import energy
        _, grid = sphere_setup(512)
        v = S.initial_profile("zonal_cos", grid)
        a1 = S.scale_to_negative_energy(v, 5.0, grid, margin=0.1)
        e1 = energy(S.WaveState((a1 * v).astype(complex), 0.0, 5.0), grid)
        e2 = energy(S.WaveState((2 * a1 * v).astype(complex), 0.0, 5.0), grid)
        assert e1 < 0.0
        assert e2 < e1  # -A^6 dominates

    def test_rejects_zero_profile(self):
        _, grid = sphere_setup(64)
        with pytest.raises(ValueError):
            S.scale_to_negative_energy(np.zeros(64), 5.0, grid)


class TestStrangStep:
    def test_zero_stays_zero(self):
        m, grid = sphere_setup(64)
        st = S.WaveState(grid.zeros(), 0.0, 5.0)
        for _ in range(5):
            st = S.strang_step(st, 1e-2, m, grid)
        assert np.all(st.u == 0.0)

    def test_eigenmode_phase_rotation(self):
        # linear flow of cos r is e^{2it} cos r
        m, grid = sphere_setup(512)
        st = S.WaveState(np.cos(grid.r).astype(complex), 0.0, 5.0)
        dt = 1e-3
        cn = S.CrankNicolson(grid, dt)
        for _ in range(1000):
            st = S.strang_step(st, dt, m, grid, linear=True, cn=cn)
        exact = np.exp(2j * st.t) * np.cos(grid.r)
        assert np.max(np.abs(st.u - exact)) < 2e-5  # O(dt^2 + dr^2)

    def test_single_step_mass_conservation(self):
        m, grid = sphere_setup(256)
        rng = np.random.default_rng(3)
        u0 = (rng.standard_normal(256) + 1j * rng.standard_normal(256))
        u0[-1] *= 0.0
        st = S.WaveState(u0, 0.0, 5.0)
        m0 = G.norm_sq(grid, st.u)
        tol = 1e-10
        st = S.strang_step(st, 1e-3, m, grid, tol=tol)
        assert abs(G.norm_sq(grid, st.u) - m0) / m0 < 10 * tol


class TestRunLoop:
    def base_config(self, **kw):
        defaults = dict(kind="sphere_cap", dim=2, n_cells=128, dt=1e-3,
                        t_max=0.1, p=5.0, profile="zonal_cos", amplitude=1.0,
                        stride=10, adaptive=False, threshold=100.0)
        defaults.update(kw)
        return S.RunConfig(**defaults)

    def test_zero_horizon_single_record(self):
        res = S.run(self.base_config(t_max=0.0))
        assert len(res.records) == 1
        assert res.outcome.kind == "completed"

    def test_completed_outcome_reports_final_time(self):
        res = S.run(self.base_config(t_max=0.05))
        assert res.outcome.kind == "completed"
        assert res.outcome.t == pytest.approx(0.05, rel=1e-9)
        assert res.records[-1].t == pytest.approx(0.05, rel=1e-9)

    def test_mass_conservation_thousand_steps(self):
        res = S.run(self.base_config(t_max=1.0, n_cells=256))
        assert res.mass_drift < 1e-10

    def test_energy_drift_second_order(self):
        # smooth (pre-blow-up) nonlinear run: drift halves twice per dt halving
        drifts = []
        for dt in (2e-3, 1e-3):
            res = S.run(self.base_config(dt=dt, t_max=0.5, n_cells=256,
                                         amplitude=1.0, stride=10 ** 9))
            assert res.outcome.kind == "completed"
            e = [r.energy for r in res.records]
            drifts.append(abs(e[-1] - e[0]))
        assert drifts[0] / drifts[1] == pytest.approx(4.0, abs=1.0)

    def test_threshold_must_exceed_initial_gradient(self):
        with pytest.raises(ValueError):
            S.run(self.base_config(threshold=1.0, amplitude=2.0))

    def test_odd_preservation_full_sphere(self):
        # resolved nonlinear run: oddness survives without being enforced
        m = G.make_manifold("sphere_full", 2)
        grid = G.make_grid(m, 256)
        st = S.WaveState((1.0 * np.cos(grid.r)).astype(complex), 0.0, 5.0)
        dt = 1e-3
        cn = S.CrankNicolson(grid, dt)
        for _ in range(1000):
            st = S.strang_step(st, dt, m, grid, cn=cn)
        assert np.max(np.abs(st.u)) < 2.0  # still smooth
        assert np.max(np.abs(st.u + st.u[::-1])) < 1e-10

    def test_self_convergence_second_order(self):
        # restriction of the 2N solution onto the N grid is the two-cell mean
        def final_field(n_cells, dt, t_end=0.2):
            m, grid = sphere_setup(n_cells)
            v = S.initial_profile("zonal_cos", grid)
            st = S.WaveState((1.3 * v).astype(complex), 0.0, 5.0)
            cn = S.CrankNicolson(grid, dt)
            for _ in range(round(t_end / dt)):
                st = S.strang_step(st, dt, m, grid, cn=cn)
            return st.u

        u1 = final_field(64, 2e-3)
        u2 = final_field(128, 1e-3)
        u3 = final_field(256, 5e-4)

        def restrict(u):
            return 0.5 * (u[0::2] + u[1::2])

        e12 = np.max(np.abs(restrict(u2) - u1))
        e23 = np.max(np.abs(restrict(u3) - u2))
        assert e12 / e23 == pytest.approx(4.0, abs=1.2)

    def test_blowup_detection_and_bound(self):
        amp = 1.1 * 14.0 ** 0.25
        res = S.run(self.base_config(n_cells=256, t_max=2.0, amplitude=amp,
                                     adaptive=True, threshold=25.0, stride=5))
        assert res.outcome.kind == "blowup_detected"
        assert res.e0 < 0.0
        assert res.outcome.t < res.t_star
        assert res.min_slack > -max(1e-6, 0.01 * abs(4 * res.e0))

    def test_validation_errors(self):
        with pytest.raises(ValueError):
            self.base_config(dt=0.0).validate()
        with pytest.raises(ValueError):
            self.base_config(n_cells=4).validate()
        with pytest.raises(ValueError):
            self.base_config(p=0.5).validate()
        with pytest.raises(ValueError):
            S.RunConfig(amplitude=None, auto_scale=False).validate()


class TestCrankNicolson:
    def test_unitarity_random_field(self):
        _, grid = sphere_setup(512)
        cn = S.CrankNicolson(grid, 5e-3)
        rng = np.random.default_rng(12)
        u = rng.standard_normal(512) + 1j * rng.standard_normal(512)
        m0 = G.norm_sq(grid, u)
        for _ in range(50):
            u = cn.step(u, 1e-10)
        assert abs(G.norm_sq(grid, u) - m0) / m0 < 1e-12
