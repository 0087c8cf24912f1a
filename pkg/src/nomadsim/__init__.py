"""Self-migrating two-galaxy merger simulation on a simulated grid.

A tree solver and a direct N-body solver share one particle payload; an
autonomous runtime watches the SMBH separation through the solvers'
observer hooks and migrates itself between capability-tagged simulated
nodes, authenticating each move with short-lived tokens from a
credential store.
"""

from .bodies import (
    EnergyReport,
    MergerConfig,
    Particle,
    ParticleSet,
    bh_separation,
    make_merger_ics,
    make_plummer,
    total_energy,
)
from .credentials import CredentialStore, ProxyToken, StoredCredential, Validity
from .events import EventLog
from .fabric import (
    CATEGORIES,
    GridFabric,
    JobSpec,
    LinkModel,
    NodeSpec,
    SimClock,
    default_fabric_config,
    fabric_from_config,
    load_fabric_config,
)
from .hermite import DirectParams, HermiteState, aarseth_timestep, direct_accel_jerk, direct_evolve
from .runtime import (
    Phase,
    RunConfig,
    RunReport,
    RunState,
    SwitchPolicy,
    evaluate_switch,
    perform_migration,
    run_simulation,
)
from .snapshots import read_snapshot, snapshot_from_bytes, snapshot_to_bytes, write_snapshot
from .treecode import Octree, TreeParams, build_tree, tree_accel, tree_evolve

__version__ = "0.1.0"

__all__ = [
    "Particle",
    "ParticleSet",
    "EnergyReport",
    "MergerConfig",
    "make_plummer",
    "make_merger_ics",
    "total_energy",
    "bh_separation",
    "write_snapshot",
    "read_snapshot",
    "snapshot_to_bytes",
    "snapshot_from_bytes",
    "TreeParams",
    "Octree",
    "build_tree",
    "tree_accel",
    "tree_evolve",
    "DirectParams",
    "HermiteState",
    "direct_accel_jerk",
    "aarseth_timestep",
    "direct_evolve",
    "NodeSpec",
    "LinkModel",
    "JobSpec",
    "SimClock",
    "GridFabric",
    "CATEGORIES",
    "default_fabric_config",
    "load_fabric_config",
    "fabric_from_config",
    "CredentialStore",
    "StoredCredential",
    "ProxyToken",
    "Validity",
    "EventLog",
    "Phase",
    "SwitchPolicy",
    "RunConfig",
    "RunState",
    "RunReport",
    "evaluate_switch",
    "perform_migration",
    "run_simulation",
    "__version__",
]
