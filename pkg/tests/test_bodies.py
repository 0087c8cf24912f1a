import math

import numpy as np
import pytest

from nomadsim.bodies import (
    EnergyReport,
    MergerConfig,
    ParticleSet,
    bh_separation,
    kinetic_energy,
    make_merger_ics,
    make_plummer,
    pair_orbital_energy,
    potential_energy,
    total_energy,
)
from nomadsim.errors import InvalidStateError

from oracles import brute_kinetic, brute_potential


class TestMakePlummer:
    def test_mass_and_com(self):
        ps = make_plummer(1024, 1.0, seed=42)
        assert float(ps.masses.sum()) == 1.0
        com = np.average(ps.positions, axis=0, weights=ps.masses)
        mom = np.average(ps.velocities, axis=0, weights=ps.masses)
        assert np.abs(com).max() < 1e-12
        assert np.abs(mom).max() < 1e-12

    def test_virial_energy(self):
        # In these units a unit-mass equilibrium model has E = -1/4.
        ps = make_plummer(1024, 1.0, seed=42)
        e = brute_kinetic(ps.masses, ps.velocities) + brute_potential(
            ps.masses, ps.positions
        )
        assert abs(e + 0.25) < 0.05

    def test_deterministic(self):
        a = make_plummer(1024, 1.0, seed=42)
        b = make_plummer(1024, 1.0, seed=42)
        assert a == b
        assert a.positions.tobytes() == b.positions.tobytes()
        assert a.velocities.tobytes() == b.velocities.tobytes()

    def test_seed_changes_output(self):
        a = make_plummer(64, 1.0, seed=1)
        b = make_plummer(64, 1.0, seed=2)
        assert a != b

    def test_too_few_particles(self):
        with pytest.raises(ValueError):
            make_plummer(1, 1.0, seed=0)

    def test_mass_scaling(self):
        ps = make_plummer(256, 4.0, seed=9)
        assert math.isclose(float(ps.masses.sum()), 4.0)
        e = brute_kinetic(ps.masses, ps.velocities) + brute_potential(
            ps.masses, ps.positions
        )
        # E scales as M^2 at fixed length scale.
        assert abs(e + 4.0) < 0.8


class TestMakeMergerIcs:
    def test_counts_and_flags(self):
        ics = make_merger_ics(MergerConfig(n_per_galaxy=1024, seed=5))
        assert len(ics) == 2050
        assert ics.n_smbh == 2
        assert ics.smbh.sum() == 2

    def test_degenerate_overlap(self):
        cfg = MergerConfig(
            n_per_galaxy=8,
            seed=0,
            initial_separation=0.0,
            relative_velocity=(0.0, 0.0, 0.0),
        )
        ics = make_merger_ics(cfg)
        assert bh_separation(ics) == 0.0

    def test_com_and_momentum(self):
        cfg = MergerConfig(
            n_per_galaxy=256,
            seed=3,
            initial_separation=6.0,
            relative_velocity=(0.1, 0.25, 0.0),
        )
        ics = make_merger_ics(cfg)
        com = np.average(ics.positions, axis=0, weights=ics.masses)
        mom = np.average(ics.velocities, axis=0, weights=ics.masses)
        assert np.abs(com).max() < 1e-12
        assert np.abs(mom).max() < 1e-12

    def test_smbh_mass_ratio(self):
        cfg = MergerConfig(n_per_galaxy=64, seed=1, bh_mass=0.02, galaxy_mass=2.0)
        ics = make_merger_ics(cfg)
        assert np.allclose(ics.masses[ics.smbh], 0.02)
        assert math.isclose(float(ics.masses[~ics.smbh].sum()), 4.0)

    def test_separation_along_x(self):
        cfg = MergerConfig(n_per_galaxy=128, seed=2, initial_separation=5.0)
        ics = make_merger_ics(cfg)
        assert math.isclose(bh_separation(ics), 5.0)

    def test_default_orbit_is_bound(self):
        cfg = MergerConfig(n_per_galaxy=16, seed=0)
        assert pair_orbital_energy(cfg) < 0.0


class TestTotalEnergy:
    def test_two_body_analytic(self):
        ps = ParticleSet(
            ids=[0, 1],
            masses=[1.0, 1.0],
            positions=[[0, 0, 0], [1, 0, 0]],
            velocities=np.zeros((2, 3)),
            smbh=[False, False],
        )
        rep = total_energy(ps, softening=0.0)
        assert rep.kinetic == 0.0
        assert rep.total == -1.0

    def test_softened_kernel_value(self):
        ps = ParticleSet(
            ids=[0, 1],
            masses=[1.0, 1.0],
            positions=np.zeros((2, 3)),
            velocities=np.zeros((2, 3)),
            smbh=[False, False],
        )
        rep = total_energy(ps, softening=1.0)
        assert rep.potential == -1.0

    def test_coincident_unsoftened_is_inf_not_crash(self):
        ps = ParticleSet(
            ids=[0, 1],
            masses=[1.0, 1.0],
            positions=np.zeros((2, 3)),
            velocities=np.zeros((2, 3)),
            smbh=[False, False],
        )
        rep = total_energy(ps, softening=0.0)
        assert rep.total == -math.inf

    @pytest.mark.parametrize("softening", [0.0, 0.01, 0.3])
    def test_matches_double_loop_oracle(self, random_set, softening):
        rep = total_energy(random_set, softening)
        ref_u = brute_potential(random_set.masses, random_set.positions, softening)
        ref_k = brute_kinetic(random_set.masses, random_set.velocities)
        assert abs(rep.potential - ref_u) <= 1e-13 * abs(ref_u)
        assert abs(rep.kinetic - ref_k) <= 1e-13 * abs(ref_k)

    def test_oracle_agreement_at_1024(self):
        ps = make_plummer(1024, 1.0, seed=8)
        rep = total_energy(ps, 0.01)
        ref = brute_potential(ps.masses, ps.positions, 0.01)
        assert abs(rep.potential - ref) <= 1e-13 * abs(ref)

    def test_report_identity(self):
        rep = EnergyReport.from_parts(1.5, -2.25)
        assert rep.total == rep.kinetic + rep.potential

    def test_chunking_invariance(self, random_set):
        full = potential_energy(random_set, 0.01, chunk=4096)
        small = potential_energy(random_set, 0.01, chunk=7)
        assert math.isclose(full, small, rel_tol=1e-12)


class TestBhSeparation:
    def _pair(self, p0, p1):
        return ParticleSet(
            ids=[0, 1],
            masses=[0.01, 0.01],
            positions=[p0, p1],
            velocities=np.zeros((2, 3)),
            smbh=[True, True],
        )

    def test_unit_distance(self):
        assert bh_separation(self._pair([0, 0, 0], [1, 0, 0])) == 1.0

    def test_translation_invariance(self):
        assert bh_separation(self._pair([-0.5, 0, 0], [0.5, 0, 0])) == 1.0

    def test_coincident(self):
        assert bh_separation(self._pair([0.3, -1, 2], [0.3, -1, 2])) == 0.0

    def test_wrong_count_raises(self):
        ps = make_plummer(8, 1.0, seed=0)
        with pytest.raises(InvalidStateError):
            bh_separation(ps)
        ps.smbh[0] = True
        with pytest.raises(InvalidStateError):
            bh_separation(ps)


class TestParticleSet:
    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError):
            ParticleSet(
                ids=[1, 1],
                masses=[1.0, 1.0],
                positions=np.zeros((2, 3)),
                velocities=np.zeros((2, 3)),
                smbh=[False, False],
            )

    def test_nonpositive_mass_rejected(self):
        with pytest.raises(ValueError):
            ParticleSet(
                ids=[0, 1],
                masses=[1.0, 0.0],
                positions=np.zeros((2, 3)),
                velocities=np.zeros((2, 3)),
                smbh=[False, False],
            )

    def test_particle_round_trip(self, random_set):
        rebuilt = ParticleSet.from_particles(
            random_set.particles, time=random_set.time
        )
        assert rebuilt == random_set

    def test_copy_is_independent(self, random_set):
        dup = random_set.copy()
        dup.positions[0, 0] += 1.0
        assert dup != random_set

    def test_kinetic_energy_helper(self, random_set):
        assert math.isclose(
            kinetic_energy(random_set),
            brute_kinetic(random_set.masses, random_set.velocities),
            rel_tol=1e-13,
        )
