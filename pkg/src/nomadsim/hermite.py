"""Direct-summation N-body integration: 4th-order Hermite, block timesteps.

Forces are exact softened pair sums, O(n^2). Each particle carries its own
timestep, quantized to a power of two in [dt_min, dt_max] and aligned so
its individual time is always a multiple of its step ("block" scheme). The
per-particle step comes from the standard acceleration/jerk/snap/crackle
criterion scaled by eta.

All dyadic times are exact in binary floating point, so block membership
and alignment tests use plain equality. The integrator can stop early at a
block boundary when an observer asks it to; in that case every particle is
synchronized to the boundary time with one final corrector step, which is
also how the normal end of a span is handled when t_end is not a multiple
of everyone's step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .bodies import ParticleSet
from .errors import DivergedError
from .observing import StepView

__all__ = [
    "DirectParams",
    "HermiteState",
    "direct_accel_jerk",
    "aarseth_timestep",
    "direct_evolve",
]


def _is_power_of_two(x: float) -> bool:
    return x > 0.0 and math.frexp(x)[0] == 0.5


@dataclass(frozen=True)
class DirectParams:
    """Timestep parameter eta, the power-of-two step bounds, and softening."""

    eta: float = 0.02
    dt_max: float = 2.0**-5
    dt_min: float = 2.0**-23
    softening: float = 0.01

    def __post_init__(self):
        if self.eta <= 0.0:
            raise ValueError("eta must be positive")
        if not (_is_power_of_two(self.dt_max) and _is_power_of_two(self.dt_min)):
            raise ValueError("dt_min and dt_max must be exact powers of two")
        if self.dt_min > self.dt_max:
            raise ValueError("dt_min must not exceed dt_max")
        if self.softening < 0.0:
            raise ValueError("softening must be non-negative")


@dataclass
class HermiteState:
    """Per-particle integrator state: forces, individual times and steps."""

    acc: np.ndarray
    jerk: np.ndarray
    times: np.ndarray
    dts: np.ndarray


def _acc_jerk_subset(pos, vel, masses, targets, eps2, chunk=None):
    """Softened acceleration and jerk on ``targets`` from all particles.

    ``targets`` is an index array. Work is chunked so the (k, n) pair
    temporaries stay modest. Summation order is fixed, so results are
    deterministic.
    """
    n = pos.shape[0]
    k = targets.shape[0]
    acc = np.empty((k, 3))
    jerk = np.empty((k, 3))
    if chunk is None:
        chunk = max(8, min(512, int(4.0e6 / max(n, 1))))
    cols = np.arange(n)
    for s in range(0, k, chunk):
        e = min(s + chunk, k)
        tgt = targets[s:e]
        dx = pos[None, :, :] - pos[tgt, None, :]
        dv = vel[None, :, :] - vel[tgt, None, :]
        r2 = np.einsum("ijk,ijk->ij", dx, dx) + eps2
        with np.errstate(divide="ignore", invalid="ignore"):
            inv2 = 1.0 / r2
            inv3 = inv2 / np.sqrt(r2)
            inv5 = inv3 * inv2
        self_pair = cols[None, :] == tgt[:, None]
        inv3[self_pair] = 0.0
        inv5[self_pair] = 0.0
        rv = np.einsum("ijk,ijk->ij", dx, dv)
        w3 = masses[None, :] * inv3
        acc[s:e] = np.einsum("ij,ijk->ik", w3, dx)
        jerk[s:e] = np.einsum("ij,ijk->ik", w3, dv) - np.einsum(
            "ij,ijk->ik", 3.0 * rv * masses[None, :] * inv5, dx
        )
    return acc, jerk


def direct_accel_jerk(ps: ParticleSet, softening: float = 0.0):
    """Exact pairwise accelerations and their time derivatives (jerk)."""
    if softening < 0.0:
        raise ValueError("softening must be non-negative")
    targets = np.arange(len(ps), dtype=np.int64)
    return _acc_jerk_subset(
        ps.positions, ps.velocities, ps.masses, targets, softening * softening
    )


def _floor_pow2(x):
    """Largest power of two <= x, elementwise; x must be positive."""
    mant, expo = np.frexp(x)
    return np.ldexp(1.0, expo - 1)


def aarseth_timestep(
    acc,
    jerk,
    snap,
    crackle,
    eta: float,
    dt_min: float = DirectParams.dt_min,
    dt_max: float = DirectParams.dt_max,
) -> float:
    """Adaptive step for one particle, floored to a power of two and clamped.

    ``acc``..``crackle`` are 3-vectors (the first four time derivatives of
    position, starting at the second). The raw value is
    sqrt(eta * (|a||s| + |j|^2) / (|j||c| + |s|^2)). A vanishing
    denominator (degenerate all-zero derivatives) falls back to dt_max.
    """
    a = float(np.linalg.norm(acc))
    j = float(np.linalg.norm(jerk))
    s = float(np.linalg.norm(snap))
    c = float(np.linalg.norm(crackle))
    num = a * s + j * j
    den = j * c + s * s
    if den == 0.0:
        return dt_max
    raw = math.sqrt(eta * num / den)
    if raw <= dt_min:
        return dt_min
    return float(min(_floor_pow2(raw), dt_max))


def _align_down(dt, t0, dt_min):
    """Shrink steps until t0 is a multiple of each, for a mid-grid start."""
    if t0 == 0.0:
        return dt
    dt = dt.copy()
    while True:
        bad = np.mod(t0, dt) != 0.0
        if not bad.any():
            return dt
        if (dt[bad] <= dt_min).any():
            raise ValueError(
                f"cannot align block steps to start time {t0!r}; "
                "it sits on a grid finer than dt_min"
            )
        dt[bad] *= 0.5


@njit(cache=True, error_model="numpy")
def _forces_on(i, xp, vp, m, eps2):
    """Softened acceleration and jerk on particle i from everyone else."""
    n = xp.shape[0]
    ax = ay = az = 0.0
    jx = jy = jz = 0.0
    xi0 = xp[i, 0]
    xi1 = xp[i, 1]
    xi2 = xp[i, 2]
    vi0 = vp[i, 0]
    vi1 = vp[i, 1]
    vi2 = vp[i, 2]
    for j in range(n):
        if j == i:
            continue
        dx = xp[j, 0] - xi0
        dy = xp[j, 1] - xi1
        dz = xp[j, 2] - xi2
        dvx = vp[j, 0] - vi0
        dvy = vp[j, 1] - vi1
        dvz = vp[j, 2] - vi2
        r2 = dx * dx + dy * dy + dz * dz + eps2
        inv = 1.0 / np.sqrt(r2)
        inv3 = inv * inv * inv
        mw = m[j] * inv3
        rv3 = 3.0 * (dx * dvx + dy * dvy + dz * dvz) / r2
        ax += mw * dx
        ay += mw * dy
        az += mw * dz
        jx += mw * (dvx - rv3 * dx)
        jy += mw * (dvy - rv3 * dy)
        jz += mw * (dvz - rv3 * dz)
    return ax, ay, az, jx, jy, jz


@njit(cache=True, error_model="numpy")
def _forces_all(x, v, m, eps2, acc, jerk):
    for i in range(x.shape[0]):
        ax, ay, az, jx, jy, jz = _forces_on(i, x, v, m, eps2)
        acc[i, 0] = ax
        acc[i, 1] = ay
        acc[i, 2] = az
        jerk[i, 0] = jx
        jerk[i, 1] = jy
        jerk[i, 2] = jz


@njit(cache=True, error_model="numpy")
def _block_step(x, v, m, acc, jerk, t, dt, xp, vp, af, jf,
                eps2, eta, dt_min, dt_max, t_end):
    """Advance the next block. Returns (block_time, n_active, ok).

    block_time is -1.0 when the next boundary would pass t_end, leaving all
    state untouched. Corrected values are written into x/v and also into
    the prediction scratch xp/vp so callers can hand out a coherent view
    of the system at the boundary time.
    """
    n = x.shape[0]
    t_next = 1.0e300
    for i in range(n):
        ti = t[i] + dt[i]
        if ti < t_next:
            t_next = ti
    if t_next > t_end:
        return -1.0, 0, True

    for i in range(n):
        d = t_next - t[i]
        half_d2 = 0.5 * d * d
        sixth_d3 = d * d * d / 6.0
        for k in range(3):
            xp[i, k] = x[i, k] + d * v[i, k] + half_d2 * acc[i, k] + sixth_d3 * jerk[i, k]
            vp[i, k] = v[i, k] + d * acc[i, k] + half_d2 * jerk[i, k]

    # All active forces come from the same predicted state, so the force
    # pass must finish before any corrector write lands in xp/vp.
    n_active = 0
    for i in range(n):
        if t[i] + dt[i] == t_next:
            ax, ay, az, jx, jy, jz = _forces_on(i, xp, vp, m, eps2)
            af[i, 0] = ax
            af[i, 1] = ay
            af[i, 2] = az
            jf[i, 0] = jx
            jf[i, 1] = jy
            jf[i, 2] = jz
            n_active += 1

    ok = True
    for i in range(n):
        if t[i] + dt[i] != t_next:
            continue
        h = dt[i]
        h2_12 = h * h / 12.0
        a1n = np.sqrt(af[i, 0] ** 2 + af[i, 1] ** 2 + af[i, 2] ** 2)
        j1n = np.sqrt(jf[i, 0] ** 2 + jf[i, 1] ** 2 + jf[i, 2] ** 2)
        # Corrector (time-symmetric Hermite form), then interpolated
        # snap/crackle for the next step size.
        s1sq = 0.0
        c0sq = 0.0
        for k in range(3):
            a0k = acc[i, k]
            j0k = jerk[i, k]
            a1k = af[i, k]
            j1k = jf[i, k]
            v1k = v[i, k] + 0.5 * h * (a0k + a1k) + h2_12 * (j0k - j1k)
            x1k = x[i, k] + 0.5 * h * (v[i, k] + v1k) + h2_12 * (a0k - a1k)
            da = a0k - a1k
            s0k = (-6.0 * da - h * (4.0 * j0k + 2.0 * j1k)) / (h * h)
            c0k = (12.0 * da + 6.0 * h * (j0k + j1k)) / (h * h * h)
            s1k = s0k + h * c0k
            s1sq += s1k * s1k
            c0sq += c0k * c0k
            x[i, k] = x1k
            v[i, k] = v1k
            acc[i, k] = a1k
            jerk[i, k] = j1k
            xp[i, k] = x1k
            vp[i, k] = v1k
            if not (math.isfinite(x1k) and math.isfinite(v1k)):
                ok = False
        s1n = np.sqrt(s1sq)
        c0n = np.sqrt(c0sq)
        num = a1n * s1n + j1n * j1n
        den = j1n * c0n + s1n * s1n
        if den > 0.0 and num > 0.0:
            raw = np.sqrt(eta * num / den)
        else:
            raw = dt_max
        if raw < dt_min:
            raw = dt_min
        if raw > dt_max:
            raw = dt_max
        mant, expo = math.frexp(raw)
        dtn = math.ldexp(1.0, expo - 1)
        if dtn < dt_min:
            dtn = dt_min
        if dtn > dt_max:
            dtn = dt_max
        cap = 2.0 * h if t_next % (2.0 * h) == 0.0 else h
        if dtn > cap:
            dtn = cap
        t[i] = t_next
        dt[i] = dtn
    return t_next, n_active, ok


@njit(cache=True, error_model="numpy")
def _sync_to(x, v, m, acc, jerk, t, t_stop, eps2):
    """One forced corrector step bringing every particle to t_stop."""
    n = x.shape[0]
    xp = np.empty_like(x)
    vp = np.empty_like(v)
    for i in range(n):
        d = t_stop - t[i]
        half_d2 = 0.5 * d * d
        sixth_d3 = d * d * d / 6.0
        for k in range(3):
            xp[i, k] = x[i, k] + d * v[i, k] + half_d2 * acc[i, k] + sixth_d3 * jerk[i, k]
            vp[i, k] = v[i, k] + d * acc[i, k] + half_d2 * jerk[i, k]
    ok = True
    for i in range(n):
        h = t_stop - t[i]
        if h == 0.0:
            continue
        ax, ay, az, jx, jy, jz = _forces_on(i, xp, vp, m, eps2)
        a1 = (ax, ay, az)
        j1 = (jx, jy, jz)
        h2_12 = h * h / 12.0
        for k in range(3):
            a0k = acc[i, k]
            j0k = jerk[i, k]
            v1k = v[i, k] + 0.5 * h * (a0k + a1[k]) + h2_12 * (j0k - j1[k])
            x1k = x[i, k] + 0.5 * h * (v[i, k] + v1k) + h2_12 * (a0k - a1[k])
            x[i, k] = x1k
            v[i, k] = v1k
            if not (math.isfinite(x1k) and math.isfinite(v1k)):
                ok = False
        t[i] = t_stop
    return ok


def direct_evolve(
    ps: ParticleSet,
    params: DirectParams,
    t_end: float,
    observer=None,
) -> ParticleSet:
    """Advance to t_end with the block-step Hermite scheme.

    The observer runs at every block boundary with predicted positions for
    inactive particles; a truthy return stops the run at that boundary.
    Either way every particle is synchronized to the final time. Non-finite
    state raises DivergedError.
    """
    if t_end < ps.time:
        raise ValueError("t_end must not precede the set's current time")
    out = ps.copy()
    if t_end == ps.time:
        return out

    n = len(out)
    eps2 = params.softening * params.softening
    x = out.positions
    v = out.velocities
    m = out.masses

    state = HermiteState(
        acc=np.empty_like(x),
        jerk=np.empty_like(x),
        times=np.full(n, ps.time),
        dts=np.empty(n),
    )
    _forces_all(x, v, m, eps2, state.acc, state.jerk)
    if not (np.isfinite(state.acc).all() and np.isfinite(state.jerk).all()):
        raise DivergedError("non-finite forces at the start of a direct span")

    # Startup steps from the reduced criterion eta * |a| / |adot|.
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = params.eta * np.linalg.norm(state.acc, axis=1) / np.linalg.norm(
            state.jerk, axis=1
        )
    raw = np.where(np.isfinite(raw), raw, params.dt_max)
    raw = np.clip(raw, params.dt_min, params.dt_max)
    state.dts[:] = np.minimum(_floor_pow2(raw), params.dt_max)
    state.dts[:] = _align_down(state.dts, ps.time, params.dt_min)

    xp = np.empty_like(x)
    vp = np.empty_like(v)
    af = np.empty_like(x)
    jf = np.empty_like(x)
    halt = False
    t_last = ps.time
    startup_pairs = n * n  # charged to the first block's view

    while not halt:
        t_next, n_active, ok = _block_step(
            x, v, m, state.acc, state.jerk, state.times, state.dts,
            xp, vp, af, jf,
            eps2, params.eta, params.dt_min, params.dt_max, t_end,
        )
        if not ok:
            raise DivergedError(f"direct integration diverged at t={t_next}")
        if t_next < 0.0:
            break
        t_last = t_next
        if observer is not None:
            view = StepView(
                time=t_next,
                positions=xp,
                velocities=vp,
                masses=m,
                smbh=out.smbh,
                pair_count=n_active * n + startup_pairs,
                times=state.times,
                dts=state.dts,
            )
            startup_pairs = 0
            if observer(view):
                halt = True
        if t_next == t_end and (state.times == t_end).all():
            out.time = t_end
            return out

    # Synchronize everyone to the stop time with one forced corrector step.
    t_stop = t_last if halt else t_end
    if not _sync_to(x, v, m, state.acc, state.jerk, state.times, t_stop, eps2):
        raise DivergedError(f"direct integration diverged at t={t_stop}")
    out.time = t_stop
    return out
