"""Barnes-Hut octree gravity with a fixed-step kick-drift-kick leapfrog.

The tree is a linear octree: particles are sorted by 63-bit Morton key
once per build, nodes are contiguous index ranges into that ordering, and
all node data lives in flat arrays. Force evaluation walks the tree one
depth at a time with the whole particle frontier as arrays, so the work
per step is a handful of numpy passes rather than a per-particle Python
traversal. Results are deterministic for a fixed input: the traversal
order and the bincount reductions are fixed.

Cells are accepted by the classic opening criterion: a cell of side s at
distance d from the particle (measured to the cell's centre of mass) is
used as a monopole when s / d < theta. The interaction kernel is
Plummer-softened, matching the direct solver and the energy diagnostics.
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
    "TreeParams",
    "Octree",
    "build_tree",
    "tree_accel",
    "tree_evolve",
    "leapfrog_steps",
]

_MAX_DEPTH = 21  # 3 * 21 = 63 Morton bits in a uint64


@dataclass(frozen=True)
class TreeParams:
    """Opening angle, softening length, and leapfrog step size."""

    theta: float = 0.7
    softening: float = 0.01
    dt: float = 1.0 / 64.0

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise ValueError("theta must be in (0, 1]")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.softening < 0.0:
            raise ValueError("softening must be non-negative")


def _spread_bits(v: np.ndarray) -> np.ndarray:
    # 21 low bits of v end up at every third bit position.
    v = v.astype(np.uint64)
    v = (v | (v << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x1249249249249249)
    return v


def _morton_keys(cells: np.ndarray) -> np.ndarray:
    return (
        (_spread_bits(cells[:, 0]) << np.uint64(2))
        | (_spread_bits(cells[:, 1]) << np.uint64(1))
        | _spread_bits(cells[:, 2])
    )


class Octree:
    """Flat-array octree over one ParticleSet.

    Node arrays are indexed by node id; node 0 is the root. Children of an
    internal node are contiguous: ``child_start[i] .. child_start[i] +
    child_count[i]``. Leaves hold one particle each except when distinct
    particles share a position down to the maximum refinement depth, in
    which case the deepest cell keeps them all and force evaluation falls
    back to particle pairs.
    """

    def __init__(self, center, half_width, mass, com, is_leaf,
                 child_start, child_count, pstart, pcount, depth,
                 order, root_center, root_half):
        self.center = center
        self.half_width = half_width
        self.mass = mass
        self.com = com
        self.is_leaf = is_leaf
        self.child_start = child_start
        self.child_count = child_count
        self.pstart = pstart
        self.pcount = pcount
        self.depth = depth
        self.order = order
        self.root_center = root_center
        self.root_half = root_half

    @property
    def n_nodes(self) -> int:
        return self.mass.shape[0]

    @property
    def n_particles(self) -> int:
        return self.order.shape[0]

    def children(self, node: int) -> np.ndarray:
        return np.arange(
            self.child_start[node], self.child_start[node] + self.child_count[node]
        )

    def leaf_particles(self, node: int) -> np.ndarray:
        return self.order[self.pstart[node] : self.pstart[node] + self.pcount[node]]

    def validate(self, ps: ParticleSet, rtol: float = 1e-12) -> None:
        """Assert the structural invariants; raises AssertionError on failure."""
        pos = ps.positions
        for node in range(self.n_nodes):
            if self.is_leaf[node]:
                idx = self.leaf_particles(node)
                lo = self.center[node] - self.half_width[node]
                hi = self.center[node] + self.half_width[node]
                inside = (pos[idx] >= lo - 1e-12).all() and (pos[idx] <= hi + 1e-12).all()
                assert inside, f"leaf {node} has particles outside its cell"
            else:
                kids = self.children(node)
                m_kids = float(self.mass[kids].sum())
                assert math.isclose(float(self.mass[node]), m_kids, rel_tol=rtol), (
                    f"node {node} mass {self.mass[node]} != children sum {m_kids}"
                )
                com_kids = (self.mass[kids, None] * self.com[kids]).sum(axis=0) / m_kids
                scale = float(np.abs(com_kids).max()) + self.half_width[node]
                assert np.abs(self.com[node] - com_kids).max() <= rtol * scale, (
                    f"node {node} centre of mass disagrees with children"
                )
        total = float(ps.masses.sum())
        assert math.isclose(float(self.mass[0]), total, rel_tol=1e-13), (
            "root mass does not close with the particle total"
        )


def build_tree(ps: ParticleSet) -> Octree:
    """Build the octree for a particle set. Positions must be finite."""
    if len(ps) == 0:
        raise ValueError("cannot build a tree over an empty particle set")
    pos = ps.positions
    if not np.isfinite(pos).all():
        raise ValueError("particle positions must be finite to build a tree")

    lo = pos.min(axis=0)
    hi = pos.max(axis=0)
    root_center = 0.5 * (lo + hi)
    root_half = float(np.max(hi - root_center))
    root_half = root_half * (1.0 + 1e-12) + 1e-300  # strictly positive, pads edges

    # Cell coordinates at maximum depth, then one Morton key per particle.
    scale = (1 << _MAX_DEPTH) / (2.0 * root_half)
    cells = ((pos - (root_center - root_half)) * scale).astype(np.int64)
    np.clip(cells, 0, (1 << _MAX_DEPTH) - 1, out=cells)
    keys = _morton_keys(cells)
    order = np.argsort(keys, kind="stable").astype(np.int64)
    skeys = keys[order]
    scells = cells[order]

    m_sorted = ps.masses[order]
    cum_m = np.concatenate([[0.0], np.cumsum(m_sorted)])
    cum_mp = np.vstack(
        [np.zeros(3), np.cumsum(m_sorted[:, None] * pos[order], axis=0)]
    )

    n = len(ps)
    blocks: list[dict] = []
    fixups: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
    n_emitted = 0

    def emit(starts: np.ndarray, ends: np.ndarray, depth: int) -> np.ndarray:
        """Append one level's node records for ranges [starts, ends)."""
        nonlocal n_emitted
        half = root_half / (1 << depth)
        if depth == 0:
            ctr = root_center[None, :].copy()
        else:
            # The cell index at this depth is the max-depth cell coordinate
            # of any member particle, truncated.
            coord = scells[starts] >> (_MAX_DEPTH - depth)
            ctr = (root_center - root_half) + (coord + 0.5) * (2.0 * half)
        m = cum_m[ends] - cum_m[starts]
        with np.errstate(invalid="ignore"):
            com = (cum_mp[ends] - cum_mp[starts]) / m[:, None]
        counts = ends - starts
        leaf = (counts == 1) | (depth == _MAX_DEPTH)
        blocks.append(
            dict(
                center=ctr,
                half=np.full(starts.size, half),
                mass=m,
                com=com,
                leaf=leaf,
                pstart=starts.astype(np.int64),
                pcount=counts.astype(np.int64),
                depth=np.full(starts.size, depth, dtype=np.int64),
            )
        )
        n_emitted += starts.size
        return leaf

    root_start = np.array([0], dtype=np.int64)
    root_end = np.array([n], dtype=np.int64)
    root_leaf = emit(root_start, root_end, 0)

    open_starts = root_start[~root_leaf]
    open_ends = root_end[~root_leaf]
    open_ids = np.array([0], dtype=np.int64)[~root_leaf]
    depth = 0
    while open_starts.size:
        depth += 1
        shift = np.uint64(3 * (_MAX_DEPTH - depth))
        digits = skeys >> shift
        # Child boundaries: positions where the depth-d prefix changes,
        # restricted to the interior of an open range.
        change = np.flatnonzero(digits[1:] != digits[:-1]) + 1
        holder = np.searchsorted(open_starts, change, side="right") - 1
        safe = np.clip(holder, 0, None)
        keep = (
            (holder >= 0)
            & (change > open_starts[safe])
            & (change < open_ends[safe])
        )
        inner = change[keep]
        inner_holder = holder[keep]

        starts = np.concatenate([open_starts, inner])
        owners = np.concatenate([np.arange(open_starts.size), inner_holder])
        sort = np.lexsort((starts, owners))
        starts = starts[sort]
        owners = owners[sort]
        next_start = np.concatenate([starts[1:], [0]])
        last_of_owner = np.concatenate([owners[1:] != owners[:-1], [True]])
        ends = np.where(last_of_owner, open_ends[owners], next_start)

        kid_count = np.bincount(owners, minlength=open_starts.size)
        kid_first = n_emitted + np.concatenate([[0], np.cumsum(kid_count)[:-1]])
        fixups.append((open_ids, kid_first.astype(np.int64), kid_count.astype(np.int64)))

        node_ids = n_emitted + np.arange(starts.size)
        leaf = emit(starts, ends, depth)
        open_mask = ~leaf
        open_starts = starts[open_mask]
        open_ends = ends[open_mask]
        open_ids = node_ids[open_mask]

    child_start = np.zeros(n_emitted, dtype=np.int64)
    child_count = np.zeros(n_emitted, dtype=np.int64)
    for ids, first, count in fixups:
        child_start[ids] = first
        child_count[ids] = count

    mass = np.concatenate([b["mass"] for b in blocks])
    com = np.concatenate([b["com"] for b in blocks])
    is_leaf = np.concatenate([b["leaf"] for b in blocks])
    pstart_all = np.concatenate([b["pstart"] for b in blocks])
    pcount_all = np.concatenate([b["pcount"] for b in blocks])

    # Single-particle leaves take the particle's exact mass and position:
    # the cumulative sums are only good to rounding, and force evaluation
    # relies on a particle's own leaf having exactly zero offset.
    single = is_leaf & (pcount_all == 1)
    owner = order[pstart_all[single]]
    mass[single] = ps.masses[owner]
    com[single] = pos[owner]

    return Octree(
        center=np.concatenate([b["center"] for b in blocks]),
        half_width=np.concatenate([b["half"] for b in blocks]),
        mass=mass,
        com=com,
        is_leaf=is_leaf,
        child_start=child_start,
        child_count=child_count,
        pstart=pstart_all,
        pcount=pcount_all,
        depth=np.concatenate([b["depth"] for b in blocks]),
        order=order,
        root_center=root_center,
        root_half=root_half,
    )


def _expand_ranges(first: np.ndarray, count: np.ndarray) -> np.ndarray:
    """Concatenate ranges [first_i, first_i + count_i) into one index array."""
    total = int(count.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    rep_first = np.repeat(first, count)
    offsets = np.arange(total) - np.repeat(
        np.concatenate([[0], np.cumsum(count)[:-1]]), count
    )
    return rep_first + offsets


@njit(cache=True, error_model="numpy")
def _walk_kernel(
    com, mass, half_width, is_leaf, child_start, child_count,
    pstart, pcount, order, positions, masses, theta2, eps2, acc,
):
    """Stack-based per-particle traversal. Sequential and deterministic."""
    n = positions.shape[0]
    stack = np.empty(512, dtype=np.int64)
    interactions = 0
    for i in range(n):
        xi = positions[i, 0]
        yi = positions[i, 1]
        zi = positions[i, 2]
        ax = 0.0
        ay = 0.0
        az = 0.0
        top = 1
        stack[0] = 0
        while top > 0:
            top -= 1
            nd = stack[top]
            dx = com[nd, 0] - xi
            dy = com[nd, 1] - yi
            dz = com[nd, 2] - zi
            r2 = dx * dx + dy * dy + dz * dz
            size = 2.0 * half_width[nd]
            if is_leaf[nd]:
                if pcount[nd] == 1:
                    rw = r2 + eps2
                    if rw > 0.0:
                        w = mass[nd] / (rw * np.sqrt(rw))
                        ax += w * dx
                        ay += w * dy
                        az += w * dz
                        interactions += 1
                else:
                    # Coincident unsoftened pairs divide by zero here on
                    # purpose: the singularity surfaces as divergence.
                    for k in range(pstart[nd], pstart[nd] + pcount[nd]):
                        j = order[k]
                        if j == i:
                            continue
                        px = positions[j, 0] - xi
                        py = positions[j, 1] - yi
                        pz = positions[j, 2] - zi
                        rp = px * px + py * py + pz * pz + eps2
                        w = masses[j] / (rp * np.sqrt(rp))
                        ax += w * px
                        ay += w * py
                        az += w * pz
                        interactions += 1
            elif size * size < theta2 * r2:
                rw = r2 + eps2
                w = mass[nd] / (rw * np.sqrt(rw))
                ax += w * dx
                ay += w * dy
                az += w * dz
                interactions += 1
            else:
                for c in range(child_start[nd], child_start[nd] + child_count[nd]):
                    stack[top] = c
                    top += 1
        acc[i, 0] = ax
        acc[i, 1] = ay
        acc[i, 2] = az
    return interactions


def tree_accel(
    tree: Octree,
    ps: ParticleSet,
    params: TreeParams,
    stats: dict | None = None,
) -> np.ndarray:
    """Per-particle accelerations from the tree built over ``ps``.

    Returns an (n, 3) array. If ``stats`` is given, its "interactions" key
    is incremented by the number of monopole and particle-pair evaluations.
    The hot loop is a compiled kernel; ``_tree_accel_numpy`` is the
    pure-numpy equivalent kept for cross-checking.
    """
    n = len(ps)
    acc = np.zeros((n, 3))
    interactions = _walk_kernel(
        tree.com,
        tree.mass,
        tree.half_width,
        tree.is_leaf,
        tree.child_start,
        tree.child_count,
        tree.pstart,
        tree.pcount,
        tree.order,
        ps.positions,
        ps.masses,
        params.theta * params.theta,
        params.softening * params.softening,
        acc,
    )
    if stats is not None:
        stats["interactions"] = stats.get("interactions", 0) + int(interactions)
    return acc


def _tree_accel_numpy(
    tree: Octree,
    ps: ParticleSet,
    params: TreeParams,
    stats: dict | None = None,
) -> np.ndarray:
    """Vectorized frontier traversal; same contract as ``tree_accel``."""
    n = len(ps)
    targets = ps.positions
    eps2 = params.softening * params.softening
    theta2 = params.theta * params.theta
    acc = np.zeros((n, 3))
    interactions = 0

    # Frontier of (node, particle) pairs still to be resolved. Expansion
    # goes one level at a time, so the cell size is constant per pass.
    f_nodes = np.zeros(n, dtype=np.int64)
    f_parts = np.arange(n, dtype=np.int64)
    depth = 0
    has_multi = bool((tree.pcount[tree.is_leaf] > 1).any())

    while f_nodes.size:
        d = tree.com[f_nodes] - targets[f_parts]
        r2 = np.einsum("ij,ij->i", d, d)
        size = 2.0 * tree.root_half / (1 << depth)
        leaf = tree.is_leaf[f_nodes]
        single = leaf if not has_multi else leaf & (tree.pcount[f_nodes] == 1)
        accept = (size * size < theta2 * r2) & ~leaf

        # Accepted cells and one-particle leaves share the monopole kernel:
        # a leaf's COM is its particle, and a particle's own leaf has d = 0,
        # so its self-term vanishes on its own (guarded when eps = 0).
        use = accept | single
        if use.any():
            rw = r2[use] + eps2
            with np.errstate(divide="ignore"):
                inv = 1.0 / np.sqrt(rw)
            w = tree.mass[f_nodes[use]] * inv * inv * inv
            if eps2 == 0.0:
                w = np.where(rw == 0.0, 0.0, w)
            contrib = d[use] * w[:, None]
            tgt = f_parts[use]
            for k in range(3):
                acc[:, k] += np.bincount(tgt, weights=contrib[:, k], minlength=n)
            interactions += int(use.sum())

        # Multi-particle leaves (identical positions at max depth): pairs.
        multi = leaf & ~single
        if has_multi and multi.any():
            m_nodes = f_nodes[multi]
            m_parts = f_parts[multi]
            counts = tree.pcount[m_nodes]
            src = tree.order[_expand_ranges(tree.pstart[m_nodes], counts)]
            tgt = np.repeat(m_parts, counts)
            keep = src != tgt
            src = src[keep]
            tgt = tgt[keep]
            if src.size:
                dp = targets[src] - targets[tgt]
                rp = np.einsum("ij,ij->i", dp, dp) + eps2
                with np.errstate(divide="ignore"):
                    w = ps.masses[src] * rp**-1.5
                contrib = dp * w[:, None]
                for k in range(3):
                    acc[:, k] += np.bincount(tgt, weights=contrib[:, k], minlength=n)
                interactions += src.size

        # Everything else opens: queue the children against the same particles.
        opened = ~use & ~leaf
        o_nodes = f_nodes[opened]
        o_parts = f_parts[opened]
        counts = tree.child_count[o_nodes]
        f_nodes = _expand_ranges(tree.child_start[o_nodes], counts)
        f_parts = np.repeat(o_parts, counts)
        depth += 1

    if stats is not None:
        stats["interactions"] = stats.get("interactions", 0) + interactions
    return acc


def leapfrog_steps(positions, velocities, accel_fn, dt: float, n_steps: int):
    """Kick-drift-kick steps against an arbitrary acceleration function.

    ``accel_fn(positions) -> (n, 3)``. Works with negative dt, which makes
    the scheme's time reversibility directly testable.
    """
    x = np.array(positions, dtype=np.float64)
    v = np.array(velocities, dtype=np.float64)
    a = accel_fn(x)
    for _ in range(n_steps):
        v += 0.5 * dt * a
        x += dt * v
        a = accel_fn(x)
        v += 0.5 * dt * a
    return x, v


def tree_evolve(
    ps: ParticleSet,
    params: TreeParams,
    t_end: float,
    observer=None,
) -> ParticleSet:
    """Advance with fixed-step leapfrog, rebuilding the tree every step.

    ``(t_end - ps.time) / dt`` must be an integer (to 1e-9). The observer
    is called after every step and may halt the run early; the returned
    set carries whatever time was reached.
    """
    if t_end < ps.time:
        raise ValueError("t_end must not precede the set's current time")
    ratio = (t_end - ps.time) / params.dt
    n_steps = round(ratio)
    if abs(ratio - n_steps) > 1e-9:
        raise ValueError(
            f"(t_end - time) / dt = {ratio!r} is not integral; "
            "the tree integrator takes fixed steps"
        )

    out = ps.copy()
    if n_steps == 0:
        return out
    x = out.positions
    v = out.velocities
    t0 = ps.time
    time = t0

    # The startup force evaluation is charged to the first step's view so
    # cost models see the segment's full work.
    stats: dict = {}
    a = tree_accel(build_tree(out), out, params, stats=stats)
    for step in range(1, n_steps + 1):
        v += 0.5 * params.dt * a
        x += params.dt * v
        if not np.isfinite(x).all():
            raise DivergedError(f"tree integration diverged at t={time}")
        a = tree_accel(build_tree(out), out, params, stats=stats)
        v += 0.5 * params.dt * a
        time = t0 + step * params.dt
        out.time = time
        if observer is not None:
            view = StepView(
                time=time,
                positions=x,
                velocities=v,
                masses=out.masses,
                smbh=out.smbh,
                pair_count=stats["interactions"],
            )
            stats["interactions"] = 0
            if observer(view):
                break
    return out
