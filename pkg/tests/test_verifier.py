"""Controlled observables, weak-form residual ladders and identity checks."""

from __future__ import annotations

import math

import numpy as np
import pytest

from vortexlab import roughpath as rpm
from vortexlab import solver as sv
from vortexlab import spectral as sp
from vortexlab import transform as tr
from vortexlab import verifier as vf


@pytest.fixture(scope="module")
def scalar_provider(noise_scalar, brownian, box16):
    return tr.TransformProvider(noise_scalar, brownian, box16)


@pytest.fixture(scope="module")
def pair_provider(noise_pair, brownian, box16):
    return tr.TransformProvider(noise_pair, brownian, box16)


@pytest.fixture(scope="module")
def phi(box16):
    return sp.bump_fields(box16, 1, 5)[0]


def single_mode_data(box16, k=(2, 1, 0), scale=0.02):
    x = box16.coordinates
    phase = 2 * math.pi * (k[0] * x[0] + k[1] * x[1] + k[2] * x[2]) / box16.size
    phys = np.zeros((3, 16, 16, 16))
    phys[2] = np.cos(phase)
    u0 = sp.to_spectral(box16, phys)
    return u0 * (scale / sp.lp_norm(u0, 2))


@pytest.fixture(scope="module")
def linear_traj(fine_grid, box16, scalar_provider):
    """Scalar noise, single mode, killed nonlinearity: closed-form solution."""
    cfg = sv.SolverConfig(num_nodes=48, tolerance=1e-12)
    return sv.picard_solve(
        cfg,
        fine_grid,
        single_mode_data(box16),
        scalar_provider,
        nonlinearity=sv.zero_nonlinearity,
    )


@pytest.fixture(scope="module")
def linear_observable(linear_traj, rp_ito, noise_scalar, phi):
    return vf.build_observable(linear_traj, rp_ito, noise_scalar, phi, (0.25, 0.75))


@pytest.fixture(scope="module")
def nonlinear_traj(fine_grid, small_u0, pair_provider):
    cfg = sv.SolverConfig(num_nodes=32, tolerance=1e-12)
    return sv.picard_solve(cfg, fine_grid, small_u0, pair_provider)


class TestObservable:
    def test_zero_field_gives_zero_observable(self, fine_grid, box16, pair_provider, rp_ito, noise_pair, phi):
        cfg = sv.SolverConfig(num_nodes=16)
        traj = sv.picard_solve(cfg, fine_grid, sp.SpectralField.zero(box16), pair_provider)
        obs = vf.build_observable(traj, rp_ito, noise_pair, phi, (0.25, 0.75))
        assert np.all(obs.values == 0.0) and np.all(obs.derivative == 0.0)

    def test_scalar_noise_structure(self, linear_observable, noise_scalar):
        lam = np.array(noise_scalar.lambdas)
        y = linear_observable.values
        yp = linear_observable.derivative
        base = y[:, 0] / lam[0]
        assert np.abs(y[:, 1] - lam[1] * base).max() < 1e-12 * np.abs(y).max()
        for i in range(2):
            for k in range(2):
                assert np.abs(yp[:, i, k] - lam[i] * lam[k] * base).max() < 1e-12

    def test_linear_closed_form(self, linear_observable, linear_traj, brownian, noise_scalar, box16, phi):
        # closed-form oracle: the transformed heat flow of one mode
        lam = np.array(noise_scalar.lambdas)
        u0 = linear_traj.fields[0]
        for row in (10, 777, 1500):
            j = int(linear_observable.node_indices[row])
            t = float(brownian.grid.times[j])
            scal = math.exp(float(lam @ brownian.values[j]) - 0.5 * t * float(lam @ lam))
            base = sp.inner_product(sp.heat_semigroup(u0, t), phi)
            expect = lam * scal * base
            assert np.abs(linear_observable.values[row] - expect).max() < 1e-6

    def test_window_touching_zero_rejected(self, linear_traj, rp_ito, noise_scalar, phi):
        with pytest.raises(ValueError, match="0 < start"):
            vf.build_observable(linear_traj, rp_ito, noise_scalar, phi, (0.0, 0.5))

    def test_derivative_symmetric(self, linear_observable):
        yp = linear_observable.derivative
        assert np.abs(yp - np.transpose(yp, (0, 2, 1))).max() < 1e-14


class TestRoughResidual:
    def test_zero_everything(self, fine_grid, box16, pair_provider, rp_ito, noise_pair, phi):
        cfg = sv.SolverConfig(num_nodes=16)
        traj = sv.picard_solve(cfg, fine_grid, sp.SpectralField.zero(box16), pair_provider)
        obs = vf.build_observable(traj, rp_ito, noise_pair, phi, (0.25, 0.75))
        ladder = vf.rough_weak_residual(traj, rp_ito, noise_pair, phi, obs, levels=4)
        assert all(r == 0.0 for r in ladder.residuals)

    def test_linear_closed_form_case(self, linear_traj, rp_ito, noise_scalar, phi, linear_observable):
        ladder = vf.rough_weak_residual(
            linear_traj, rp_ito, noise_scalar, phi, linear_observable,
            levels=9, nonlinearity=None,
        )
        assert ladder.final_residual < 1e-3
        assert ladder.rate_to_floor.slope > 0.0
        assert ladder.residuals[-1] < ladder.residuals[0]

    def test_nonlinear_residual_ladder_decreases(
        self, nonlinear_traj, rp_ito, noise_pair, phi
    ):
        obs = vf.build_observable(
            nonlinear_traj, rp_ito, noise_pair, phi, (0.25, 0.5625)
        )
        ladder = vf.rough_weak_residual(
            nonlinear_traj, rp_ito, noise_pair, phi, obs, levels=6
        )
        assert ladder.rate_to_floor.slope > 0.0
        assert min(ladder.residuals) < ladder.residuals[0]


class TestRemainderQuotients:
    def test_zero_observable(self, rp_ito):
        idx = np.arange(1024, 1152)
        obs = vf.Observable(
            idx, rp_ito.times[idx], np.zeros((idx.size, 2)), np.zeros((idx.size, 2, 2))
        )
        table = vf.remainder_quotients(obs, rp_ito, 0.4)
        assert table.remainder == (0.0, 0.0) and table.coefficient == 0.0

    def test_lipschitz_path_analytic_bound(self, rp_ito):
        # Lipschitz calculus: Y = t with zero expansion coefficient has
        # remainder quotient exactly sup (v-u)^(1-2a), at the full window
        idx = np.arange(1024, 3073)
        t = rp_ito.times[idx]
        obs = vf.Observable(
            idx, t, np.tile(t[:, None], (1, 2)), np.zeros((idx.size, 2, 2))
        )
        table = vf.remainder_quotients(obs, rp_ito, 0.4)
        expect = (t[-1] - t[0]) ** (1.0 - 0.8)
        for got in table.remainder:
            assert got == pytest.approx(expect, rel=1e-12)

    def test_solved_trajectory_quotients_stable(self, nonlinear_traj, rp_ito, noise_pair, phi):
        obs = vf.build_observable(nonlinear_traj, rp_ito, noise_pair, phi, (0.25, 0.75))
        full = vf.remainder_quotients(obs, rp_ito, 0.4)
        half = vf.remainder_quotients(obs.subsample(2), rp_ito, 0.4)
        quarter = vf.remainder_quotients(obs.subsample(4), rp_ito, 0.4)
        for a, b in zip(full.remainder, half.remainder):
            assert a <= 2.0 * b
        for a, b in zip(half.remainder, quarter.remainder):
            assert a <= 2.0 * b
        assert np.isfinite(full.coefficient)


class TestTaylorDefect:
    def test_scalar_exponential_oracle(self, box16, phi):
        noise = tr.NoiseModel((0.5,), (None,))
        got = vf.transform_taylor_defect(
            noise, box16, phi, 0.25, np.array([0.3]), 0.3, np.array([0.42])
        )
        lam, dt, db = 0.5, 0.05, 0.12
        e_u = lam * 0.3 - 0.5 * 0.25 * lam * lam
        e_v = lam * 0.42 - 0.5 * 0.3 * lam * lam
        bracket = db * lam + 0.5 * lam * lam * db * db - 0.5 * dt * lam * lam
        scalar = abs(math.exp(e_v) - math.exp(e_u) - math.exp(e_u) * bracket)
        assert abs(got - scalar * sp.lp_norm(phi, 2)) < 1e-10

    def test_brownian_rate_above_one(self, noise_pair, box16, phi, rp_ito):
        fit = vf.taylor_rate(noise_pair, box16, phi, rp_ito, start=1024, span=1024, levels=5)
        assert fit.slope > 1.0

    def test_frozen_path_rate_near_two(self, noise_pair, box16, phi, brownian, fine_grid):
        vals = brownian.values.copy()
        vals[1024:2049] = brownian.values[1024]
        frozen = rpm.DrivingPath(fine_grid, vals)
        rp = rpm.enhance(frozen, rpm.ITO)
        fit = vf.taylor_rate(noise_pair, box16, phi, rp, start=1024, span=1024, levels=5)
        assert fit.slope == pytest.approx(2.0, abs=0.2)


class TestBracketIdentities:
    def test_exact_and_statistical_parts(self, rp_ito, rp_strat):
        rng = np.random.default_rng(50)
        windows = []
        while len(windows) < 20:
            u, v = np.sort(rng.choice(4097, 2, replace=False))
            if v - u >= 64:
                windows.append((int(u), int(v)))
        report = vf.bracket_identities(rp_ito, rp_strat, windows)
        assert report.symmetric_defect == 0.0
        assert report.covariation_defect == 0.0
        assert report.diag_pass
        assert report.offdiag_pass

    def test_flavor_mismatch_rejected(self, rp_ito):
        with pytest.raises(ValueError, match="flavor|left-point"):
            vf.bracket_identities(rp_ito, rp_ito, [(0, 64)])


class TestContinuityChecks:
    def test_zero_integrand_quotient(self, fine_grid, box16, pair_provider):
        cfg = sv.SolverConfig(num_nodes=16)
        traj = sv.picard_solve(cfg, fine_grid, sp.SpectralField.zero(box16), pair_provider)
        q = traj.config.q
        assert vf.integrand_continuity(traj, q, 0.05, (0.25, 0.75)) == 0.0

    def test_synthetic_ramp_quotient(self, nonlinear_traj, box16):
        # closed-form differentiation oracle: integrand g(s) = s * F has
        # quotient |F|_q sup (v-u)^(1-eps), attained at the window ends
        field = sp.random_field(box16, 60)
        traj = nonlinear_traj
        ramp = tuple(
            sp.SpectralField(box16, float(t) * field.coef) for t in traj.times
        )
        synthetic = sv.Trajectory(
            config=traj.config,
            time_grid=traj.time_grid,
            node_indices=traj.node_indices,
            times=traj.times,
            fields=traj.fields,
            integrands=ramp,
            iterations=1,
            distances=(0.0,),
            ratios=(),
            converged=True,
            gate_forced=False,
        )
        q = traj.config.q
        got = vf.integrand_continuity(synthetic, q, 0.05, (0.25, 0.75))
        pos = traj.node_window(0.25, 0.75)
        dts = traj.times[pos][-1] - traj.times[pos][0]
        expect = sp.lp_norm(field, q) * dts ** 0.95
        assert got == pytest.approx(expect, rel=1e-10)

    def test_solved_trajectory_stable(self, nonlinear_traj, fine_grid, small_u0, pair_provider):
        q = nonlinear_traj.config.q
        base = vf.integrand_continuity(nonlinear_traj, q, 0.05, (0.25, 0.75))
        cfg = sv.SolverConfig(num_nodes=64, tolerance=1e-12)
        finer = sv.picard_solve(cfg, fine_grid, small_u0, pair_provider)
        refined = vf.integrand_continuity(finer, q, 0.05, (0.25, 0.75))
        assert np.isfinite(base) and refined < 2.0 * base

    def test_observable_jump_shrinks(self, fine_grid, small_u0, pair_provider, phi):
        jumps = []
        for nodes in (16, 32, 64):
            cfg = sv.SolverConfig(num_nodes=nodes, tolerance=1e-12)
            traj = sv.picard_solve(cfg, fine_grid, small_u0, pair_provider)
            jumps.append(vf.observable_continuity(traj, phi))
        assert jumps[2] < jumps[1] < jumps[0]


class TestInverseRoute:
    def test_drift_route_reproduces_weak_form(
        self, nonlinear_traj, rp_ito, noise_pair, phi
    ):
        report = vf.inverse_route_consistency(
            nonlinear_traj, rp_ito, noise_pair, phi, (0.25, 0.5625), levels=7
        )
        drift = report.drift_residuals
        assert all(a > b for a, b in zip(drift, drift[1:]))
        assert report.window_residual <= drift[-1]
        # the flavor-cancellation leftover telescopes to a partition-
        # independent covariation fluctuation: near-constant across levels,
        # and the expansion route converges onto it as the drift route
        # converges to zero
        gaps = report.cancellation_gap
        assert max(gaps) < 1.05 * min(gaps)
        assert report.expansion_residuals[-1] == pytest.approx(gaps[-1], rel=0.05)

    def test_expansion_route_bounded(self, nonlinear_traj, rp_ito, noise_pair, phi):
        report = vf.inverse_route_consistency(
            nonlinear_traj, rp_ito, noise_pair, phi, (0.25, 0.5625), levels=6
        )
        assert all(np.isfinite(r) for r in report.expansion_residuals)
        assert report.expansion_residuals[-1] <= report.expansion_residuals[0]
