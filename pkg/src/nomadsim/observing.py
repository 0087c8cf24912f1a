"""Step observation hook shared by both solvers.

Solvers call the observer after every step (tree) or block boundary
(direct) with a read-only view of the evolving state. Returning a truthy
value asks the solver to stop cleanly at that boundary; the solver then
returns a state synchronized at the view's time. This is the probe the
autonomous runtime uses to watch solver internals while they run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["StepView"]


@dataclass
class StepView:
    """Snapshot of an in-flight integration, passed to observers.

    ``pair_count`` is the number of pairwise force evaluations the step
    cost (tree: accepted cell and leaf interactions; direct: active
    particles times system size), which cost models use as the work unit.
    ``times``/``dts`` are per-particle integration clocks; the fixed-step
    tree solver leaves them as None.
    """

    time: float
    positions: np.ndarray
    velocities: np.ndarray
    masses: np.ndarray
    smbh: np.ndarray
    pair_count: int = 0
    times: np.ndarray | None = field(default=None, repr=False)
    dts: np.ndarray | None = field(default=None, repr=False)
