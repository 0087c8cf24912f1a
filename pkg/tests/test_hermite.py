import math

import numpy as np
import pytest

from nomadsim.bodies import ParticleSet, make_plummer, total_energy
from nomadsim.hermite import (
    DirectParams,
    aarseth_timestep,
    direct_accel_jerk,
    direct_evolve,
)

from oracles import brute_accel, grad_potential_fd


def kepler_pair(a=1.0, e=0.9, m=0.5):
    """Equal-mass two-body orbit starting at apocentre; G(m1+m2) = 2m."""
    mu = 2.0 * m
    r0 = a * (1.0 + e)
    v0 = math.sqrt(mu * (1.0 - e) / (1.0 + e) / a)
    return ParticleSet(
        ids=[0, 1],
        masses=[m, m],
        positions=[[-r0 / 2, 0, 0], [r0 / 2, 0, 0]],
        velocities=[[0, -v0 / 2, 0], [0, v0 / 2, 0]],
        smbh=[True, True],
    )


def two_body_energy(ps):
    ke = 0.5 * float(
        np.sum(ps.masses * np.einsum("ij,ij->i", ps.velocities, ps.velocities))
    )
    r = float(np.linalg.norm(ps.positions[0] - ps.positions[1]))
    return ke - ps.masses[0] * ps.masses[1] / r


class TestDirectAccelJerk:
    def test_at_rest_has_zero_jerk(self):
        ps = ParticleSet(
            ids=[0, 1],
            masses=[1.0, 2.0],
            positions=[[0, 0, 0], [1.3, 0, 0]],
            velocities=np.zeros((2, 3)),
            smbh=[False, False],
        )
        acc, jerk = direct_accel_jerk(ps, 0.0)
        assert np.all(jerk == 0.0)
        assert acc[0, 0] > 0.0 and acc[1, 0] < 0.0

    def test_jerk_matches_finite_difference(self):
        ps = kepler_pair(e=0.0)  # circular
        _, jerk = direct_accel_jerk(ps, 0.0)
        h = 1e-6
        ahead = ps.copy()
        ahead.positions += h * ahead.velocities
        behind = ps.copy()
        behind.positions -= h * behind.velocities
        fd = (direct_accel_jerk(ahead, 0.0)[0] - direct_accel_jerk(behind, 0.0)[0]) / (
            2.0 * h
        )
        for i in range(2):
            assert np.linalg.norm(jerk[i] - fd[i]) <= 1e-6 * np.linalg.norm(fd[i])

    def test_acc_is_minus_grad_potential(self, random_set):
        # acc_i = -grad_i(U) / m_i, checked by central differences.
        acc, _ = direct_accel_jerk(random_set, 0.01)
        for i in (0, 17, 63):
            grad = grad_potential_fd(
                random_set.masses, random_set.positions, 0.01, particle=i
            )
            expect = -grad / random_set.masses[i]
            err = np.abs(acc[i] - expect) / np.linalg.norm(expect)
            assert err.max() < 1e-6

    def test_matches_brute_oracle(self, random_set):
        acc, _ = direct_accel_jerk(random_set, 0.01)
        ref = brute_accel(random_set.masses, random_set.positions, 0.01)
        assert np.allclose(acc, ref, rtol=1e-12, atol=1e-14)


class TestAarsethTimestep:
    def test_clamped_to_dt_max(self):
        # eta=0.02, |a|=1, |s|=2, j=c=0 gives raw sqrt(0.02*2/4) = 0.1.
        dt = aarseth_timestep(
            [1, 0, 0], [0, 0, 0], [0, 2, 0], [0, 0, 0], eta=0.02
        )
        assert dt == 2.0**-5

    def test_power_of_two_floor(self):
        # Same shape scaled so the raw value is 0.01: floor is 2^-7.
        dt = aarseth_timestep(
            [1, 0, 0], [0, 0, 0], [0, 200, 0], [0, 0, 0], eta=0.02
        )
        assert math.isclose(math.sqrt(0.02 * 200 / 200**2), 0.01)
        assert dt == 2.0**-7

    def test_clamped_to_dt_min(self):
        dt = aarseth_timestep(
            [1, 0, 0], [0, 0, 0], [0, 2e12, 0], [0, 0, 0], eta=0.02
        )
        assert dt == 2.0**-23

    def test_zero_derivatives_fall_back_to_dt_max(self):
        dt = aarseth_timestep(
            [1, 0, 0], [0, 0, 0], [0, 0, 0], [0, 0, 0], eta=0.02
        )
        assert dt == 2.0**-5

    def test_custom_bounds(self):
        dt = aarseth_timestep(
            [1, 0, 0], [0, 0, 0], [0, 2, 0], [0, 0, 0],
            eta=0.02, dt_max=2.0**-2,
        )
        assert dt == 2.0**-4  # floor of 0.1


class TestDirectParams:
    def test_non_power_of_two_rejected(self):
        with pytest.raises(ValueError):
            DirectParams(dt_max=0.03)

    def test_inverted_bounds_rejected(self):
        with pytest.raises(ValueError):
            DirectParams(dt_min=0.5, dt_max=0.25)

    def test_bad_eta(self):
        with pytest.raises(ValueError):
            DirectParams(eta=0.0)


class TestDirectEvolve:
    def test_identity_at_start_time(self):
        ps = make_plummer(16, 1.0, seed=1)
        assert direct_evolve(ps, DirectParams(), ps.time) == ps

    def test_backwards_rejected(self):
        ps = make_plummer(16, 1.0, seed=1)
        ps.time = 1.0
        with pytest.raises(ValueError):
            direct_evolve(ps, DirectParams(), 0.5)

    def test_eccentric_two_body_energy(self):
        # Scheme-limited accuracy for e=0.9 at eta=0.02; the convergence
        # test below pins the order, this pins the absolute level.
        ps = kepler_pair(e=0.9)
        out = direct_evolve(
            ps, DirectParams(eta=0.02, softening=0.0), 10 * 2 * math.pi
        )
        err = abs((two_body_energy(out) - two_body_energy(ps)) / two_body_energy(ps))
        assert err < 5e-4

    def test_plummer_energy_drift(self):
        ps = make_plummer(512, 1.0, seed=11)
        e0 = total_energy(ps, 0.01).total
        out = direct_evolve(ps, DirectParams(), 1.0)
        e1 = total_energy(out, 0.01).total
        assert abs((e1 - e0) / e0) < 1e-6

    def test_synchronized_at_t_end(self):
        ps = make_plummer(64, 1.0, seed=2)
        out = direct_evolve(ps, DirectParams(), 0.40625)  # 13/32
        assert out.time == 0.40625

    def test_momentum_conservation_shared_steps(self):
        # With everyone in the same block, pair forces are evaluated from
        # the same predicted coordinates and cancel exactly.
        ps = kepler_pair(e=0.6)
        p0 = (ps.masses[:, None] * ps.velocities).sum(axis=0)
        out = direct_evolve(
            ps, DirectParams(softening=0.0), 10 * 2 * math.pi
        )
        p1 = (out.masses[:, None] * out.velocities).sum(axis=0)
        assert np.linalg.norm(p1 - p0) < 1e-12

    def test_momentum_drift_block_steps(self):
        # Individual block steps see each other at predicted positions, so
        # pairwise cancellation is only as good as the integration order;
        # the bound here is empirical at this scale.
        ps = make_plummer(64, 1.0, seed=14)
        p0 = (ps.masses[:, None] * ps.velocities).sum(axis=0)
        out = direct_evolve(ps, DirectParams(), 1.0)
        p1 = (out.masses[:, None] * out.velocities).sum(axis=0)
        assert np.linalg.norm(p1 - p0) < 1e-7

    def test_block_alignment_invariant(self):
        ps = make_plummer(64, 1.0, seed=3)
        params = DirectParams()
        checked = []

        def observer(view):
            assert view.time <= 0.5
            assert (view.times <= view.time).all()
            # Each dt is a power of two within bounds.
            mant = np.frexp(view.dts)[0]
            assert np.all(mant == 0.5)
            assert np.all(view.dts >= params.dt_min)
            assert np.all(view.dts <= params.dt_max)
            # Each particle's time is a multiple of its dt.
            assert np.all(np.mod(view.times, view.dts) == 0.0)
            checked.append(view.time)
            return False

        direct_evolve(ps, params, 0.5, observer=observer)
        assert checked, "observer never ran"

    def test_observer_halt_synchronizes(self):
        ps = make_plummer(64, 1.0, seed=4)
        stop_at = []

        def observer(view):
            stop_at.append(view.time)
            return view.time >= 0.25

        out = direct_evolve(ps, DirectParams(), 2.0, observer=observer)
        assert out.time == stop_at[-1]
        assert out.time >= 0.25
        assert out.time < 2.0

    def test_mid_grid_restart(self):
        # Resuming from a time that is not a multiple of dt_max must work.
        ps = make_plummer(32, 1.0, seed=5)
        mid = direct_evolve(ps, DirectParams(), 3 / 64)
        assert mid.time == 3 / 64
        out = direct_evolve(mid, DirectParams(), 1 / 8)
        assert out.time == 1 / 8

    def test_fourth_order_convergence(self):
        # Halving steps (eta/4) must cut the energy error ~16x. Quantized
        # steps halve exactly when eta is quartered, so the slope is clean.
        # dt_max is kept low enough that the clamp never engages.
        ps = kepler_pair(e=0.5)
        t_end = 2.5 * 2 * math.pi
        errs = []
        for eta in (0.04, 0.01, 0.0025, 0.000625):
            out = direct_evolve(
                ps, DirectParams(eta=eta, softening=0.0, dt_max=2.0**-4), t_end
            )
            errs.append(
                abs((two_body_energy(out) - two_body_energy(ps)) / two_body_energy(ps))
            )
        # dt scales as sqrt(eta): one log2 step in dt per eta/4.
        slopes = [math.log2(errs[i] / errs[i + 1]) for i in range(3)]
        mean_slope = sum(slopes) / len(slopes)
        assert 3.5 < mean_slope < 4.5, (errs, slopes)
