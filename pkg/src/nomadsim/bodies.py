"""Particle containers, merger initial conditions, and energy diagnostics.

Everything works in standard N-body units: G = 1, and a model built with
``total_mass=1`` has total energy -1/4 (so the Plummer scale radius comes
out at 3*pi/16). Times, lengths, and velocities elsewhere in the package
are quoted in these units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidStateError

__all__ = [
    "Particle",
    "ParticleSet",
    "EnergyReport",
    "MergerConfig",
    "make_plummer",
    "make_merger_ics",
    "total_energy",
    "kinetic_energy",
    "potential_energy",
    "bh_separation",
    "pair_orbital_energy",
]

# Plummer scale radius in units where the total energy is -1/4.
PLUMMER_SCALE_RADIUS = 3.0 * math.pi / 16.0

# Radius sampling is truncated at this enclosed-mass fraction so a single
# far outlier cannot dominate the outer envelope of a small-N model.
_MASS_FRACTION_CUT = 0.999


@dataclass(frozen=True)
class Particle:
    """One body: a star or an SMBH."""

    id: int
    mass: float
    position: np.ndarray
    velocity: np.ndarray
    is_smbh: bool = False


@dataclass
class ParticleSet:
    """A system of particles at a common simulation time.

    Stored as flat arrays (struct-of-arrays) so the solvers can work on the
    columns directly. Particle order is significant and is preserved by the
    snapshot format.
    """

    ids: np.ndarray
    masses: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    smbh: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.ids = np.ascontiguousarray(self.ids, dtype=np.int64)
        self.masses = np.ascontiguousarray(self.masses, dtype=np.float64)
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        self.velocities = np.ascontiguousarray(self.velocities, dtype=np.float64)
        self.smbh = np.ascontiguousarray(self.smbh, dtype=bool)
        self.time = float(self.time)
        n = self.ids.shape[0]
        if self.positions.shape != (n, 3) or self.velocities.shape != (n, 3):
            raise ValueError("positions and velocities must have shape (n, 3)")
        if self.masses.shape != (n,) or self.smbh.shape != (n,):
            raise ValueError("masses and smbh flags must have shape (n,)")
        if np.unique(self.ids).size != n:
            raise ValueError("particle ids must be unique")
        if n and not np.all(self.masses > 0.0):
            raise ValueError("particle masses must be positive")

    def __len__(self) -> int:
        return self.ids.shape[0]

    @property
    def n_smbh(self) -> int:
        return int(self.smbh.sum())

    def particle(self, index: int) -> Particle:
        return Particle(
            id=int(self.ids[index]),
            mass=float(self.masses[index]),
            position=self.positions[index].copy(),
            velocity=self.velocities[index].copy(),
            is_smbh=bool(self.smbh[index]),
        )

    @property
    def particles(self) -> list[Particle]:
        return [self.particle(i) for i in range(len(self))]

    @classmethod
    def from_particles(cls, particles, time: float = 0.0) -> "ParticleSet":
        return cls(
            ids=np.array([p.id for p in particles], dtype=np.int64),
            masses=np.array([p.mass for p in particles], dtype=np.float64),
            positions=np.array([p.position for p in particles], dtype=np.float64),
            velocities=np.array([p.velocity for p in particles], dtype=np.float64),
            smbh=np.array([p.is_smbh for p in particles], dtype=bool),
            time=time,
        )

    def copy(self) -> "ParticleSet":
        return ParticleSet(
            ids=self.ids.copy(),
            masses=self.masses.copy(),
            positions=self.positions.copy(),
            velocities=self.velocities.copy(),
            smbh=self.smbh.copy(),
            time=self.time,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParticleSet):
            return NotImplemented
        return (
            self.time == other.time
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.masses, other.masses)
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.velocities, other.velocities)
            and np.array_equal(self.smbh, other.smbh)
        )


@dataclass(frozen=True)
class EnergyReport:
    """Kinetic, potential, and total energy of a system (G = 1)."""

    kinetic: float
    potential: float
    total: float

    @classmethod
    def from_parts(cls, kinetic: float, potential: float) -> "EnergyReport":
        return cls(kinetic=kinetic, potential=potential, total=kinetic + potential)


@dataclass
class MergerConfig:
    """Parameters for a two-galaxy collision setup.

    ``relative_velocity`` is the velocity of the -x galaxy relative to the
    +x galaxy; each galaxy gets half of it, with opposite signs. The shipped
    defaults put the pair on a bound, fairly radial orbit whose cores first
    meet well inside 20 time units.
    """

    n_per_galaxy: int
    seed: int = 1
    galaxy_mass: float = 1.0
    bh_mass: float = 0.01
    softening: float = 0.01
    initial_separation: float = 4.0
    relative_velocity: tuple[float, float, float] = field(default=(0.0, 0.2, 0.0))

    def __post_init__(self):
        if self.n_per_galaxy < 2:
            raise ValueError("n_per_galaxy must be at least 2")
        if self.softening <= 0.0:
            raise ValueError("softening must be positive")
        if self.galaxy_mass <= 0.0 or self.bh_mass <= 0.0:
            raise ValueError("masses must be positive")
        if self.initial_separation < 0.0:
            raise ValueError("initial_separation must be non-negative")


def _sample_velocity_fraction(rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw v/v_escape for the isotropic Plummer distribution function.

    Rejection sampling of g(q) = q^2 (1 - q^2)^(7/2) with a flat envelope
    of height 0.1 (the maximum of g is ~0.092).
    """
    out = np.empty(n)
    filled = 0
    while filled < n:
        want = n - filled
        x1 = rng.random(2 * want)
        x2 = rng.random(2 * want) * 0.1
        accepted = x1[x2 < x1 * x1 * (1.0 - x1 * x1) ** 3.5]
        take = min(accepted.size, want)
        out[filled : filled + take] = accepted[:take]
        filled += take
    return out


def _isotropic_unit_vectors(rng: np.random.Generator, n: int) -> np.ndarray:
    cos_t = 2.0 * rng.random(n) - 1.0
    sin_t = np.sqrt(1.0 - cos_t**2)
    phi = 2.0 * math.pi * rng.random(n)
    return np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=1)


def make_plummer(n: int, total_mass: float = 1.0, seed: int = 0) -> ParticleSet:
    """Sample an isotropic Plummer sphere in equilibrium.

    Radii come from inverting the enclosed-mass profile (truncated at the
    99.9% mass shell), speeds from rejection sampling of the distribution
    function. The result is rescaled so a unit-mass model has total energy
    -1/4; for other masses the length scale is kept and velocities scale
    with sqrt(total_mass). Centre of mass and net momentum are explicitly
    zeroed. Identical (n, total_mass, seed) triples give bit-identical
    output.
    """
    if n < 2:
        raise ValueError("a Plummer model needs at least 2 particles")
    if total_mass <= 0.0:
        raise ValueError("total_mass must be positive")
    rng = np.random.Generator(np.random.PCG64(seed))

    # Radius via inverse transform of M(r)/M = r^3 / (1 + r^2)^(3/2), a = 1.
    u = rng.random(n) * _MASS_FRACTION_CUT
    radius = 1.0 / np.sqrt(u ** (-2.0 / 3.0) - 1.0)
    positions = radius[:, None] * _isotropic_unit_vectors(rng, n)

    v_escape = math.sqrt(2.0) * (1.0 + radius**2) ** -0.25
    speed = v_escape * _sample_velocity_fraction(rng, n)
    velocities = speed[:, None] * _isotropic_unit_vectors(rng, n)

    # Rescale from a = 1 to standard units, then to the requested mass.
    positions *= PLUMMER_SCALE_RADIUS
    velocities *= math.sqrt(total_mass / PLUMMER_SCALE_RADIUS)
    masses = np.full(n, total_mass / n)

    positions -= np.average(positions, axis=0, weights=masses)
    velocities -= np.average(velocities, axis=0, weights=masses)

    return ParticleSet(
        ids=np.arange(n, dtype=np.int64),
        masses=masses,
        positions=positions,
        velocities=velocities,
        smbh=np.zeros(n, dtype=bool),
        time=0.0,
    )


def make_merger_ics(cfg: MergerConfig) -> ParticleSet:
    """Build the two-galaxy collision: two Plummer spheres, one SMBH each.

    The galaxies are offset by +-initial_separation/2 along x and given
    opposing halves of ``relative_velocity``. Each SMBH sits at its galaxy's
    density centre with the galaxy's bulk velocity. The second galaxy is
    drawn with ``seed + 1``. Global centre of mass and momentum are zeroed.
    """
    n = cfg.n_per_galaxy
    gal_a = make_plummer(n, cfg.galaxy_mass, cfg.seed)
    gal_b = make_plummer(n, cfg.galaxy_mass, cfg.seed + 1)

    offset = np.array([cfg.initial_separation / 2.0, 0.0, 0.0])
    half_v = 0.5 * np.asarray(cfg.relative_velocity, dtype=np.float64)

    positions = np.vstack(
        [gal_a.positions - offset, gal_b.positions + offset, [-offset, offset]]
    )
    velocities = np.vstack(
        [gal_a.velocities + half_v, gal_b.velocities - half_v, [half_v, -half_v]]
    )
    masses = np.concatenate(
        [gal_a.masses, gal_b.masses, [cfg.bh_mass, cfg.bh_mass]]
    )
    smbh = np.zeros(2 * n + 2, dtype=bool)
    smbh[-2:] = True

    positions -= np.average(positions, axis=0, weights=masses)
    velocities -= np.average(velocities, axis=0, weights=masses)

    return ParticleSet(
        ids=np.arange(2 * n + 2, dtype=np.int64),
        masses=masses,
        positions=positions,
        velocities=velocities,
        smbh=smbh,
        time=0.0,
    )


def pair_orbital_energy(cfg: MergerConfig) -> float:
    """Two-point-mass orbital energy of the configured galaxy pair.

    Negative means the pair starts on a bound orbit. Uses the total mass of
    each galaxy including its SMBH; softening is ignored.
    """
    m = cfg.galaxy_mass + cfg.bh_mass
    mu = m / 2.0
    v2 = float(np.dot(cfg.relative_velocity, cfg.relative_velocity))
    if cfg.initial_separation == 0.0:
        return -math.inf
    return 0.5 * mu * v2 - m * m / cfg.initial_separation


def kinetic_energy(ps: ParticleSet) -> float:
    return 0.5 * float(np.sum(ps.masses * np.einsum("ij,ij->i", ps.velocities, ps.velocities)))


def potential_energy(ps: ParticleSet, softening: float = 0.0, chunk: int = 512) -> float:
    """Plummer-softened pairwise potential, -sum_{i<j} m_i m_j / sqrt(r^2 + eps^2).

    Coincident particles with zero softening yield -inf rather than raising.
    """
    if softening < 0.0:
        raise ValueError("softening must be non-negative")
    pos = ps.positions
    m = ps.masses
    n = len(ps)
    eps2 = softening * softening
    total = 0.0
    with np.errstate(divide="ignore"):
        for start in range(0, n, chunk):
            end = min(start + chunk, n)
            block = pos[start:end]
            mb = m[start:end]
            # pairs inside the block (upper triangle)
            d = block[:, None, :] - block[None, :, :]
            r2 = np.einsum("ijk,ijk->ij", d, d) + eps2
            iu = np.triu_indices(end - start, k=1)
            total -= float(np.sum((mb[:, None] * mb[None, :])[iu] / np.sqrt(r2[iu])))
            # pairs between the block and everything after it
            if end < n:
                d = block[:, None, :] - pos[None, end:, :]
                r2 = np.einsum("ijk,ijk->ij", d, d) + eps2
                total -= float(np.sum(mb[:, None] * m[None, end:] / np.sqrt(r2)))
    return total


def total_energy(ps: ParticleSet, softening: float = 0.0) -> EnergyReport:
    """Total system energy with a Plummer-softened potential (G = 1)."""
    return EnergyReport.from_parts(kinetic_energy(ps), potential_energy(ps, softening))


def bh_separation(ps: ParticleSet) -> float:
    """Euclidean distance between the exactly two SMBH particles."""
    idx = np.flatnonzero(ps.smbh)
    if idx.size != 2:
        raise InvalidStateError(
            f"bh_separation needs exactly 2 SMBH particles, found {idx.size}"
        )
    return float(np.linalg.norm(ps.positions[idx[0]] - ps.positions[idx[1]]))
