"""Experiment drivers: single runs, the threshold sweep, the size sweep.

Each run gets a fresh fabric and credential store, so rows never share
simulated state; the credential lifetime comfortably outlives a run and
the password is fixed, which keeps modeled-mode sweeps byte-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .bodies import MergerConfig
from .credentials import CredentialStore
from .errors import NomadsimError
from .fabric import default_fabric_config, fabric_from_config
from .hermite import DirectParams
from .runtime import RunConfig, RunReport, SwitchPolicy, run_simulation
from .treecode import TreeParams

__all__ = [
    "RA_TABLE",
    "RA_FOR_N_SWEEP",
    "ExperimentConfig",
    "run_single",
    "run_ra_sweep",
    "run_n_sweep",
    "format_ra",
]

# The threshold grid of the timing-and-energy table: both pure solvers
# plus the intermediate thresholds.
RA_TABLE = (0.0, 0.1, math.sqrt(0.1), math.sqrt(0.3), 1.0, math.sqrt(10.0), math.inf)

# The size sweep holds the threshold at sqrt(0.3).
RA_FOR_N_SWEEP = math.sqrt(0.3)

_PASSWORD = "travelling-simulation"
_CRED_LIFETIME = 1.0e9


def format_ra(r_a: float) -> str:
    if math.isinf(r_a):
        return "inf"
    return f"{r_a:.6g}"


@dataclass
class ExperimentConfig:
    """Knobs for one experiment invocation (defaults mirror the study)."""

    mode: str = "single"
    r_a_values: tuple = (RA_FOR_N_SWEEP,)
    n_values: tuple = (2048,)
    seed: int = 1
    fabric_config: dict = field(default_factory=default_fabric_config)
    t_end: float = 20.0
    tree_dt: float = 1.0 / 64.0
    theta: float = 0.7
    eta: float = 0.02
    softening: float = 0.01
    dt_max: float = 2.0**-5
    dt_min: float = 2.0**-23
    initial_separation: float | None = None
    relative_velocity: tuple | None = None
    timing: str = "modeled"
    out_dir: str | None = None

    def __post_init__(self):
        if self.mode not in ("single", "ra-sweep", "n-sweep"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.r_a_values:
            raise ValueError("need at least one r_a value")
        if not self.n_values:
            raise ValueError("need at least one particle count")
        for n in self.n_values:
            if n < 4 or n % 2:
                raise ValueError(
                    f"N={n}: particle counts must be even (two equal galaxies) "
                    "and at least 4"
                )


def _merger_for(cfg: ExperimentConfig, n: int) -> MergerConfig:
    kwargs = dict(n_per_galaxy=n // 2, seed=cfg.seed, softening=cfg.softening)
    if cfg.initial_separation is not None:
        kwargs["initial_separation"] = cfg.initial_separation
    if cfg.relative_velocity is not None:
        kwargs["relative_velocity"] = tuple(cfg.relative_velocity)
    return MergerConfig(**kwargs)


def _execute(cfg: ExperimentConfig, n: int, r_a: float, label: str) -> RunReport:
    run_cfg = RunConfig(
        merger=_merger_for(cfg, n),
        policy=SwitchPolicy(r_a=r_a, check_interval=cfg.tree_dt, t_end=cfg.t_end),
        tree=TreeParams(theta=cfg.theta, softening=cfg.softening, dt=cfg.tree_dt),
        direct=DirectParams(
            eta=cfg.eta,
            dt_max=cfg.dt_max,
            dt_min=cfg.dt_min,
            softening=cfg.softening,
        ),
        timing=cfg.timing,
        label=label,
    )
    store = CredentialStore(name=f"store-{label}")
    fabric = fabric_from_config(cfg.fabric_config, store)
    store.clock = fabric.clock
    cred = store.store_credential(_PASSWORD, _CRED_LIFETIME)
    sink = None
    if cfg.out_dir is not None:
        sink = Path(cfg.out_dir) / f"events-{label}.jsonl"
    try:
        return run_simulation(run_cfg, fabric, store, cred, _PASSWORD, event_sink=sink)
    except NomadsimError as exc:
        # A row failure is recorded, not fatal: the sweep continues.
        return RunReport.from_totals(
            fabric.ledger.totals(),
            switch_count=0,
            dE_over_E=float("nan"),
            phase="failed",
            failure_reason=type(exc).__name__,
            n_particles=n,
            r_a=r_a,
            seed=cfg.seed,
            timing=cfg.timing,
            t_end=cfg.t_end,
            final_time=float("nan"),
            label=label,
        )


def run_single(cfg: ExperimentConfig) -> list[RunReport]:
    n = cfg.n_values[0]
    r_a = cfg.r_a_values[0]
    return [_execute(cfg, n, r_a, label=f"single-n{n}-ra{format_ra(r_a)}")]


def run_ra_sweep(cfg: ExperimentConfig) -> list[RunReport]:
    """One row per threshold at fixed N and seed."""
    n = cfg.n_values[0]
    return [
        _execute(cfg, n, r_a, label=f"ra-{format_ra(r_a)}")
        for r_a in cfg.r_a_values
    ]


def run_n_sweep(cfg: ExperimentConfig) -> list[RunReport]:
    """One row per particle count at the fixed sweep threshold."""
    r_a = cfg.r_a_values[0] if len(cfg.r_a_values) == 1 else RA_FOR_N_SWEEP
    return [_execute(cfg, n, r_a, label=f"n-{n}") for n in cfg.n_values]
