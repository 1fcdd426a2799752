"""Reference solver verification against exact solutions."""

import numpy as np
import pytest

from smallbody2d.fields import (
    DivergenceError,
    GridField,
    curl,
    divergence,
    deformation_norm_sq,
    h1_seminorm,
    l2_norm,
    linf_norm,
    random_solenoidal,
    taylor_green,
)
from smallbody2d.navier_stokes import (
    CFLError,
    FluidConfig,
    energy,
    initialize,
    run,
    step,
)

L = 2.0 * np.pi


class TestInitialize:
    def test_zero_field(self):
        state = initialize(GridField.zeros(L, 64, components=2))
        assert np.all(state.omega.data == 0.0)
        assert np.all(state.u.data == 0.0)

    def test_taylor_green_vorticity(self):
        v0 = taylor_green(L, 64)
        state = initialize(v0)
        expected = GridField.from_function(
            L, 64, lambda X, Y: 2.0 * np.sin(X) * np.sin(Y))
        assert np.allclose(state.omega.data, expected.data, atol=1e-12)
        assert np.allclose(state.u.data, v0.data, atol=1e-12)

    def test_random_band_limited_divfree(self):
        v0 = random_solenoidal(L, 64, seed=2)
        state = initialize(v0)
        assert linf_norm(divergence(state.u)) < 1e-10
        assert np.allclose(state.u.data, v0.data, atol=1e-10)

    def test_rejects_divergent(self):
        bad = GridField.from_function(
            L, 64, lambda X, Y: np.stack([np.sin(X), 0.0 * Y]))
        with pytest.raises(DivergenceError):
            initialize(bad)

    def test_mean_flow_carried(self):
        v0 = taylor_green(L, 64)
        shifted = v0.with_data(v0.data + np.array([0.7, -0.2])[:, None, None])
        state = initialize(shifted)
        assert np.allclose(state.mean_velocity, [0.7, -0.2], atol=1e-14)


class TestStep:
    def test_zero_stays_zero(self):
        cfg = FluidConfig(nu=0.01, L=L, N=64, dt=1e-3, T=0.01)
        state = initialize(GridField.zeros(L, 64, components=2))
        state = step(state, cfg)
        assert np.all(state.omega.data == 0.0)

    def test_taylor_green_exact_decay(self):
        # nonlinear term vanishes identically for Taylor-Green; diffusion is
        # exact, so the trajectory matches e^{-2 nu t} u0 to rounding
        nu, dt, n_steps = 0.01, 1e-3, 100
        cfg = FluidConfig(nu=nu, L=L, N=128, dt=dt, T=n_steps * dt)
        v0 = taylor_green(L, 128)
        state = initialize(v0)
        for _ in range(n_steps):
            state = step(state, cfg)
        decay = np.exp(-2.0 * nu * state.t)
        err = np.max(np.abs(state.u.data - decay * v0.data))
        assert err < 1e-12

    def test_energy_decay_factor(self):
        nu, dt, n_steps = 0.01, 1e-3, 100
        cfg = FluidConfig(nu=nu, L=L, N=128, dt=dt, T=n_steps * dt)
        state = initialize(taylor_green(L, 128))
        e0 = energy(state, nu).kinetic
        for _ in range(n_steps):
            state = step(state, cfg)
        expected = e0 * np.exp(-4.0 * nu * state.t)
        assert energy(state, nu).kinetic == pytest.approx(expected, rel=1e-10)

    def test_heat_kernel_for_small_amplitude(self):
        # linear regime: each mode decays like exp(-nu k^2 t)
        nu, dt = 0.5, 5e-4
        cfg = FluidConfig(nu=nu, L=L, N=64, dt=dt, T=0.02)
        v0 = random_solenoidal(L, 64, seed=4, kmin=1, kmax=4, amplitude=1e-6)
        state = initialize(v0)
        n_steps = 40
        for _ in range(n_steps):
            state = step(state, cfg)
        t = n_steps * dt
        hat0 = np.fft.fft2(curl(v0).data)
        g = state.omega.grid
        expected = np.real(np.fft.ifft2(hat0 * np.exp(-nu * g.k2 * t)))
        err = np.max(np.abs(state.omega.data - expected))
        # residual nonlinearity is O(amplitude^2), ~1e-7 relative here
        assert err < 1e-6 * max(np.max(np.abs(expected)), 1e-30)

    def test_viscous_energy_decay_generic(self):
        cfg = FluidConfig(nu=0.02, L=L, N=64, dt=1e-3, T=0.2)
        state = initialize(random_solenoidal(L, 64, seed=8))
        e0 = energy(state, cfg.nu).kinetic
        energies = [e0]
        for _ in range(cfg.steps):
            state = step(state, cfg)
            energies.append(energy(state, cfg.nu).kinetic)
        diffs = np.diff(energies)
        assert np.all(diffs <= 1e-12)

    def test_discrete_energy_balance(self):
        # d/dt kinetic = -2 dissipation_rate along the trajectory
        nu, dt = 0.02, 5e-4
        cfg = FluidConfig(nu=nu, L=L, N=64, dt=dt, T=0.1)
        state = initialize(random_solenoidal(L, 64, seed=8))
        mid_rates, fd = [], []
        prev_kin = energy(state, nu).kinetic
        for _ in range(20):
            state = step(state, cfg)
            e = energy(state, nu)
            fd.append((e.kinetic - prev_kin) / dt)
            mid_rates.append(-2.0 * e.dissipation_rate)
            prev_kin = e.kinetic
        fd, mid_rates = np.array(fd), np.array(mid_rates)
        assert np.allclose(fd, mid_rates, rtol=2e-2)

    def test_mean_vorticity_conserved(self):
        cfg = FluidConfig(nu=0.01, L=L, N=64, dt=1e-3, T=0.05)
        state = initialize(random_solenoidal(L, 64, seed=13))
        m0 = state.omega.data.mean()
        for _ in range(cfg.steps):
            state = step(state, cfg)
        assert state.omega.data.mean() == pytest.approx(m0, abs=1e-14)

    def test_mean_velocity_transport(self):
        # uniform flow superposed on Taylor-Green: same decay, advected frame
        nu, dt, n = 0.01, 5e-4, 50
        mean = np.array([0.4, -0.3])
        cfg = FluidConfig(nu=nu, L=L, N=64, dt=dt, T=n * dt)
        v0 = taylor_green(L, 64)
        state = initialize(v0.with_data(v0.data + mean[:, None, None]))
        for _ in range(n):
            state = step(state, cfg)
        t = state.t
        k = 2.0 * np.pi / L
        decay = np.exp(-2.0 * nu * t)

        def exact(X, Y):
            Xs, Ys = X - mean[0] * t, Y - mean[1] * t
            return np.stack([
                mean[0] + decay * np.sin(k * Xs) * np.cos(k * Ys),
                mean[1] - decay * np.cos(k * Xs) * np.sin(k * Ys),
            ])

        expected = GridField.from_function(L, 64, exact)
        assert np.max(np.abs(state.u.data - expected.data)) < 1e-7

    def test_cfl_violation_raises_with_speed(self):
        cfg = FluidConfig(nu=0.01, L=L, N=128, dt=0.05, T=1.0)
        state = initialize(taylor_green(L, 128))
        with pytest.raises(CFLError) as exc:
            step(state, cfg)
        assert "max|u|" in str(exc.value)

    def test_grid_doubling_consistency(self):
        # smooth, well-resolved regime: the cascade must stay below the
        # coarse grid's dealiasing boundary over the run
        nu, dt, n = 0.05, 1e-3, 50
        v0_fine = random_solenoidal(L, 128, seed=21, kmax=4)
        # band-limited (kmax=8), so subsampling is an exact restriction
        v0_coarse = GridField(L, v0_fine.data[:, ::2, ::2].copy())
        sols = {}
        for N, v0 in ((64, v0_coarse), (128, v0_fine)):
            cfg = FluidConfig(nu=nu, L=L, N=N, dt=dt, T=n * dt)
            state = initialize(v0)
            for _ in range(n):
                state = step(state, cfg)
            sols[N] = state.u
        coarse = sols[64].data
        fine = sols[128].data[:, ::2, ::2]
        denom = max(l2_norm(sols[64]), 1e-30)
        diff = np.sqrt(np.sum((coarse - fine) ** 2) * (L / 64) ** 2)
        assert diff / denom < 1e-6


class TestEnergy:
    def test_zero_field(self):
        state = initialize(GridField.zeros(L, 64, components=2))
        e = energy(state, 0.01)
        assert e.kinetic == 0.0 and e.dissipation_rate == 0.0

    def test_deformation_vs_gradient_identity(self):
        u = random_solenoidal(L, 128, seed=31)
        assert deformation_norm_sq(u) == pytest.approx(
            0.5 * h1_seminorm(u) ** 2, rel=1e-12)

    def test_taylor_green_dissipation(self):
        # for TG: integral |D(u)|^2 = (1/2) integral |grad u|^2 = k^2 * kinetic
        nu = 0.03
        state = initialize(taylor_green(L, 64))
        e = energy(state, nu)
        k = 2.0 * np.pi / L
        assert e.dissipation_rate == pytest.approx(
            2.0 * nu * k**2 * e.kinetic, rel=1e-12)


class TestRun:
    def test_record_contents(self):
        cfg = FluidConfig(nu=0.02, L=L, N=64, dt=1e-3, T=0.02)
        rec = run(cfg, taylor_green(L, 64), snapshot_every=5)
        assert rec.times[0] == 0.0
        assert rec.times[-1] == pytest.approx(0.02)
        assert len(rec.times) == len(rec.snapshots) == 5
        u = rec.snapshot_at(rec.times[2])
        assert l2_norm(u) > 0
        with pytest.raises(KeyError):
            rec.snapshot_at(0.0123)
