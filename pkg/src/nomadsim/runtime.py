"""Autonomous switch-and-migrate runtime.

The run is a single logical thread of control that hops between simulated
nodes. It watches its own solver through the per-step observer hook,
evaluates the separation threshold at every check instant, and when the
required solver changes it executes the migration protocol on its own:
serialize state, define the job, authenticate, move the files, submit,
and reinitialize on the target, in that order. No external manager is
involved; callers get back a final report and the event log, nothing
else.

Every handoff between solvers goes through the snapshot byte format, even
when the node does not change, so payload integrity is enforced (and
checkable from the log) on every switch.
"""

from __future__ import annotations

import hashlib
import json
import time as _time
from dataclasses import dataclass, field
from enum import Enum

from .bodies import (
    MergerConfig,
    ParticleSet,
    bh_separation,
    make_merger_ics,
    total_energy,
)
from .credentials import CredentialStore
from .errors import (
    AuthenticationError,
    CredentialError,
    CredentialExpiredError,
    CredentialRevokedError,
    DivergedError,
    InvalidStateError,
)
from .events import EventLog
from .fabric import HOME, GridFabric, JobSpec
from .hermite import DirectParams, direct_evolve
from .snapshots import read_snapshot, snapshot_to_bytes
from .treecode import TreeParams, tree_evolve

__all__ = [
    "Phase",
    "SwitchPolicy",
    "RunConfig",
    "RunState",
    "RunReport",
    "evaluate_switch",
    "perform_migration",
    "run_simulation",
    "CAPABILITY_FOR_SOLVER",
]

CAPABILITY_FOR_SOLVER = {
    "tree": "tree-accelerator",
    "direct": "direct-accelerator",
}

_AUTH_REASONS = {
    CredentialRevokedError: "revoked",
    CredentialExpiredError: "expired",
}


class Phase(str, Enum):
    INITIALIZING = "initializing"
    RUNNING = "running"
    SWITCHING = "switching"
    MIGRATING = "migrating"
    TERMINATED = "terminated"
    FAILED = "failed"


@dataclass(frozen=True)
class SwitchPolicy:
    """Threshold rule: direct when r_smbh < r_a, tree when r_smbh >= r_a.

    ``r_a = 0`` never engages the direct solver; ``r_a = inf`` never leaves
    it. The predicate is evaluated at every multiple of ``check_interval``
    the running solver touches, and the run terminates once simulation
    time reaches ``t_end``.
    """

    r_a: float
    check_interval: float = 1.0 / 64.0
    t_end: float = 20.0
    solver_map: tuple = (("close", "direct"), ("far", "tree"))

    def __post_init__(self):
        if self.r_a < 0:
            raise ValueError("r_a must be non-negative")
        if self.check_interval <= 0:
            raise ValueError("check_interval must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be non-negative")

    def desired_solver(self, separation: float) -> str:
        mapping = dict(self.solver_map)
        return mapping["close"] if separation < self.r_a else mapping["far"]


@dataclass
class RunConfig:
    """Everything one autonomous run needs besides the fabric and store."""

    merger: MergerConfig
    policy: SwitchPolicy
    tree: TreeParams = field(default_factory=TreeParams)
    direct: DirectParams = field(default_factory=DirectParams)
    timing: str = "modeled"
    proxy_lifetime: float = 3600.0
    label: str = "run"
    ics: ParticleSet | None = None

    def __post_init__(self):
        if self.timing not in ("modeled", "measured"):
            raise ValueError("timing must be 'modeled' or 'measured'")
        ratio = self.policy.check_interval / self.tree.dt
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError(
                "check_interval must be a positive integer multiple of the tree dt"
            )
        ratio = self.policy.t_end / self.policy.check_interval
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("t_end must be a multiple of check_interval")


@dataclass
class RunState:
    """Where the application is and what it is doing."""

    phase: Phase
    current_node: str | None
    current_solver: str | None
    snapshot: ParticleSet | None
    switch_count: int = 0
    failure_reason: str | None = None


@dataclass
class RunReport:
    """Final accounting: Table-style row plus diagnostics.

    ``total`` is by construction the sum of the six categories, which in
    turn equals the simulated clock.
    """

    direct_s: float
    tree_s: float
    local_io_s: float
    transfer_s: float
    submission_s: float
    init_s: float
    switch_count: int
    dE_over_E: float
    phase: str
    failure_reason: str | None = None
    n_particles: int = 0
    r_a: float = 0.0
    seed: int = 0
    timing: str = "modeled"
    t_end: float = 0.0
    final_time: float = 0.0
    label: str = "run"
    events: list = field(default_factory=list, repr=False)

    @property
    def total_s(self) -> float:
        return (
            self.direct_s
            + self.tree_s
            + self.local_io_s
            + self.transfer_s
            + self.submission_s
            + self.init_s
        )

    @property
    def other_s(self) -> float:
        return self.local_io_s + self.transfer_s + self.submission_s + self.init_s

    @property
    def overhead_share(self) -> float:
        total = self.total_s
        return self.other_s / total if total > 0 else 0.0

    @property
    def ok(self) -> bool:
        return self.phase == Phase.TERMINATED.value

    @classmethod
    def from_totals(cls, totals: dict, **kwargs) -> "RunReport":
        return cls(
            direct_s=totals.get("direct", 0.0),
            tree_s=totals.get("tree", 0.0),
            local_io_s=totals.get("local-io", 0.0),
            transfer_s=totals.get("transfer", 0.0),
            submission_s=totals.get("submission", 0.0),
            init_s=totals.get("init", 0.0),
            **kwargs,
        )


def evaluate_switch(state: RunState, policy: SwitchPolicy) -> str:
    """Decide stay / switch-to-direct / switch-to-tree / terminate.

    Termination (time >= t_end) wins over solver choice. The solver rule
    is the strict threshold: direct strictly below r_a, tree at or above.
    """
    if state.phase != Phase.RUNNING:
        raise InvalidStateError(
            f"switch decisions only happen while running, not {state.phase.value}"
        )
    if state.snapshot is None or state.snapshot.n_smbh != 2:
        raise InvalidStateError("the switch predicate needs exactly 2 SMBHs")
    if state.snapshot.time >= policy.t_end:
        return "terminate"
    want = policy.desired_solver(bh_separation(state.snapshot))
    if want == state.current_solver:
        return "stay"
    return f"switch-to-{want}"


class _RunContext:
    """Shared plumbing the run carries between phases."""

    def __init__(self, cfg, fabric, credstore, credential_id, password, log):
        self.cfg = cfg
        self.fabric = fabric
        self.credstore = credstore
        self.credential_id = credential_id
        self.password = password
        self.log = log
        self.stage_seq = 0

    def solver_params_payload(self) -> dict:
        tree, direct = self.cfg.tree, self.cfg.direct
        return {
            "tree": {"theta": tree.theta, "softening": tree.softening, "dt": tree.dt},
            "direct": {
                "eta": direct.eta,
                "dt_max": direct.dt_max,
                "dt_min": direct.dt_min,
                "softening": direct.softening,
            },
        }

    def stage_files(self, ps: ParticleSet, solver: str) -> tuple[dict, str]:
        """Serialize the application state into its travelling file set."""
        seq = self.stage_seq
        self.stage_seq += 1
        snap_name = f"snapshot-{seq:03d}.bin"
        params_name = f"params-{seq:03d}.json"
        script_name = f"task-{seq:03d}.json"
        descriptor = json.dumps(
            {
                "task": "evolve-merger",
                "solver": solver,
                "snapshot": snap_name,
                "params_file": params_name,
                "policy": {
                    "r_a": self.cfg.policy.r_a,
                    "check_interval": self.cfg.policy.check_interval,
                    "t_end": self.cfg.policy.t_end,
                },
            },
            sort_keys=True,
        )
        files = {
            snap_name: snapshot_to_bytes(ps),
            params_name: json.dumps(
                self.solver_params_payload(), sort_keys=True
            ).encode(),
            script_name: descriptor.encode(),
        }
        return files, script_name

    def write_stage(self, endpoint: str, files: dict) -> None:
        """Step 1: write the file set locally, booked as local file I/O."""
        total = 0
        for name, data in files.items():
            self.fabric.put_file(endpoint, name, data)
            total += len(data)
            self.log.append(
                "file-write",
                endpoint=endpoint,
                name=name,
                bytes=len(data),
                sha256=hashlib.sha256(data).hexdigest(),
                clock=self.fabric.clock.now,
            )
        seconds = self.fabric.io.io_time(total)
        self.book("local-io", seconds)

    def book(self, category: str, seconds: float) -> None:
        # The ledger's listener mirrors every booking into the event log.
        self.fabric.ledger.book(category, seconds)

    def issue_token(self):
        return self.credstore.issue_proxy(
            self.credential_id, self.password, self.cfg.proxy_lifetime
        )

    def init_stage(self, node: str, script_name: str):
        """Step 6: the node's fixed executor rebuilds the application.

        Reads the travelling files back from the node's own store, parses
        the declarative descriptor, and reconstructs the particle state
        and solver. Booked as initialization.
        """
        descriptor = json.loads(self.fabric.get_file(node, script_name))
        if descriptor.get("task") != "evolve-merger":
            raise ValueError(f"executor cannot run task {descriptor.get('task')!r}")
        snap_name = descriptor["snapshot"]
        data = self.fabric.get_file(node, snap_name)
        self.log.append(
            "file-read",
            endpoint=node,
            name=snap_name,
            bytes=len(data),
            sha256=hashlib.sha256(data).hexdigest(),
            clock=self.fabric.clock.now,
        )
        ps = read_snapshot(data)
        params = json.loads(self.fabric.get_file(node, descriptor["params_file"]))
        solver = descriptor["solver"]
        self.book("init", self.fabric.node(node).init_overhead)
        return ps, solver, params


def perform_migration(
    state: RunState,
    target: str,
    fabric: GridFabric,
    credstore: CredentialStore,
    ctx: _RunContext,
    next_solver: str | None = None,
) -> RunState:
    """Execute the site switch: the six protocol steps, in order.

    On any authentication failure the run fails closed: nothing partial
    stays on the target, the serialized state remains on the source, and
    the phase records why. The particle payload travels as snapshot bytes,
    so source and target states are bit-identical by construction.
    """
    if state.phase != Phase.SWITCHING:
        raise InvalidStateError("migration starts from the switching phase")
    if next_solver is None:
        next_solver = ctx.cfg.policy.desired_solver(bh_separation(state.snapshot))
    needed = CAPABILITY_FOR_SOLVER[next_solver]
    spec = fabric.node(target)
    if needed not in spec.capabilities:
        raise ValueError(
            f"target {target!r} lacks the {needed!r} capability"
        )

    source = state.current_node
    _transition(state, Phase.MIGRATING, ctx.log, fabric.clock.now)

    # Step 1: serialize application, parameters, and job script locally.
    files, script_name = ctx.stage_files(state.snapshot, next_solver)
    ctx.write_stage(source, files)

    # Step 2: job definition for the new resources.
    job = JobSpec(
        target_node=target,
        input_files=[(name, len(data)) for name, data in sorted(files.items())],
        task_descriptor=files[script_name].decode(),
    )

    staged: list[str] = []
    try:
        # Step 3: authenticate independently via the credential store.
        token = ctx.issue_token()
        job.token = token

        # Step 4: move the files to the remote site.
        for name in sorted(files):
            seconds = fabric.transfer_file(name, source, target, token)
            staged.append(name)
            ctx.log.append(
                "transfer",
                name=name,
                bytes=len(files[name]),
                src=source,
                dst=target,
                seconds=seconds,
                clock=fabric.clock.now,
            )

        # Step 5: submit the job to the target's executor.
        handle = fabric.submit_job(job, token)
        ctx.log.append(
            "submit", node=target, job_id=handle.job_id, clock=fabric.clock.now
        )
    except (AuthenticationError, CredentialError) as exc:
        for name in staged:
            fabric.delete_file(target, name)
        reason = _failure_reason(exc)
        ctx.log.append(
            "auth-failure", stage="migration", reason=reason,
            clock=fabric.clock.now,
        )
        _transition(state, Phase.FAILED, ctx.log, fabric.clock.now, reason=reason)
        state.failure_reason = reason
        return state

    # Step 6: reinitialize on the new site from the delivered files.
    ps, solver, _params = ctx.init_stage(target, script_name)
    state.snapshot = ps
    state.current_node = target
    state.current_solver = solver
    state.switch_count += 1
    _transition(state, Phase.RUNNING, ctx.log, fabric.clock.now)
    return state


def _failure_reason(exc: Exception) -> str:
    if isinstance(exc, AuthenticationError):
        return exc.reason
    for etype, reason in _AUTH_REASONS.items():
        if isinstance(exc, etype):
            return reason
    return "auth"


def _transition(state: RunState, to: Phase, log: EventLog, clock: float,
                reason=None) -> None:
    record = {"from": state.phase.value, "to": to.value, "clock": clock}
    if reason is not None:
        record["reason"] = reason
    log.append("phase", **record)
    state.phase = to


class _Segment:
    """Observer wiring for one evolve span: accounting plus the predicate."""

    def __init__(self, ctx: _RunContext, state: RunState, last_check: float):
        self.ctx = ctx
        self.state = state
        self.last_check = last_check
        self.pairs = 0
        self.decision: str | None = None

    def __call__(self, view) -> bool:
        self.pairs += view.pair_count
        policy = self.ctx.cfg.policy
        interval = policy.check_interval
        if view.time <= self.last_check:
            return False
        ratio = view.time / interval
        if ratio - round(ratio) != 0.0:
            return False
        self.last_check = view.time
        idx = view.smbh.nonzero()[0]
        d = view.positions[idx[0]] - view.positions[idx[1]]
        separation = float((d @ d) ** 0.5)
        if view.time >= policy.t_end:
            decision = "terminate"
        else:
            want = policy.desired_solver(separation)
            decision = (
                "stay" if want == self.state.current_solver else f"switch-to-{want}"
            )
        self.ctx.log.append(
            "check",
            t=view.time,
            r_smbh=separation,
            r_a=policy.r_a,
            decision=decision,
        )
        if decision in ("stay", "terminate"):
            return False
        self.decision = decision
        return True


def _evolve_segment(ctx: _RunContext, state: RunState, last_check: float):
    """Run the current solver toward t_end, booking its compute time."""
    cfg = ctx.cfg
    segment = _Segment(ctx, state, last_check)
    solver = state.current_solver
    started = _time.perf_counter()
    if solver == "tree":
        out = tree_evolve(state.snapshot, cfg.tree, cfg.policy.t_end, observer=segment)
        pair_cost = ctx.fabric.cost.tree_pair_cost
    else:
        out = direct_evolve(
            state.snapshot, cfg.direct, cfg.policy.t_end, observer=segment
        )
        pair_cost = ctx.fabric.cost.direct_pair_cost
    if cfg.timing == "measured":
        seconds = _time.perf_counter() - started
    else:
        seconds = segment.pairs * pair_cost
    ctx.book(solver, seconds)
    state.snapshot = out
    return segment


def run_simulation(
    cfg: RunConfig,
    fabric: GridFabric,
    credstore: CredentialStore,
    credential_id: str,
    password: str,
    event_sink=None,
) -> RunReport:
    """Launch and run one autonomous simulation to completion or failure.

    The caller provides the fabric (with at least one node per solver the
    policy can demand), a credential store holding ``credential_id``, and
    the password the application carries. Returns the final report; the
    full event log rides along on it (and lands in ``event_sink`` as JSON
    lines when given).
    """
    log = EventLog(sink=event_sink)
    state = RunState(
        phase=Phase.INITIALIZING,
        current_node=None,
        current_solver=None,
        snapshot=None,
    )

    ics = cfg.ics if cfg.ics is not None else make_merger_ics(cfg.merger)
    softening = cfg.merger.softening
    e0 = total_energy(ics, softening).total
    log.append(
        "run-start",
        label=cfg.label,
        n=len(ics),
        r_a=cfg.policy.r_a,
        t_end=cfg.policy.t_end,
        seed=cfg.merger.seed,
        timing=cfg.timing,
    )

    def finish(final_ps) -> RunReport:
        fabric.ledger.remove_listener(_mirror_booking)
        e1 = total_energy(final_ps, softening).total
        de = abs((e1 - e0) / e0) if e0 != 0 else float("nan")
        totals = fabric.ledger.totals()
        log.append(
            "run-end",
            clock=fabric.clock.now,
            phase=state.phase.value,
            reason=state.failure_reason,
            switch_count=state.switch_count,
            dE_over_E=de,
            totals=totals,
            final_time=final_ps.time,
        )
        log.close()
        return RunReport.from_totals(
            totals,
            switch_count=state.switch_count,
            dE_over_E=de,
            phase=state.phase.value,
            failure_reason=state.failure_reason,
            n_particles=len(final_ps),
            r_a=cfg.policy.r_a,
            seed=cfg.merger.seed,
            timing=cfg.timing,
            t_end=cfg.policy.t_end,
            final_time=final_ps.time,
            label=cfg.label,
            events=log.records,
        )

    ctx = _RunContext(cfg, fabric, credstore, credential_id, password, log)

    def _mirror_booking(category, seconds):
        log.append(
            "book", category=category, seconds=seconds, clock=fabric.clock.now
        )

    fabric.ledger.add_listener(_mirror_booking)

    # Launch: equip, authenticate, ship to the first site, initialize. The
    # initial submission is booked but is not a switch; the predicate
    # evaluation that picks the first solver is logged as the first check.
    r0 = bh_separation(ics)
    solver0 = cfg.policy.desired_solver(r0)
    log.append(
        "check", t=ics.time, r_smbh=r0, r_a=cfg.policy.r_a, decision="stay"
    )
    node0 = fabric.find_node(CAPABILITY_FOR_SOLVER[solver0])
    files, script_name = ctx.stage_files(ics, solver0)
    ctx.write_stage(HOME, files)
    job = JobSpec(
        target_node=node0,
        input_files=[(name, len(data)) for name, data in sorted(files.items())],
        task_descriptor=files[script_name].decode(),
    )
    try:
        token = ctx.issue_token()
        job.token = token
        for name in sorted(files):
            seconds = fabric.transfer_file(name, HOME, node0, token)
            log.append(
                "transfer",
                name=name,
                bytes=len(files[name]),
                src=HOME,
                dst=node0,
                seconds=seconds,
                clock=fabric.clock.now,
            )
        handle = fabric.submit_job(job, token)
        log.append(
            "submit", node=node0, job_id=handle.job_id, clock=fabric.clock.now
        )
    except (AuthenticationError, CredentialError) as exc:
        reason = _failure_reason(exc)
        log.append(
            "auth-failure", stage="launch", reason=reason, clock=fabric.clock.now
        )
        _transition(state, Phase.FAILED, log, fabric.clock.now, reason=reason)
        state.failure_reason = reason
        return finish(ics)

    ps, solver, _params = ctx.init_stage(node0, script_name)
    state.snapshot = ps
    state.current_node = node0
    state.current_solver = solver
    _transition(state, Phase.RUNNING, log, fabric.clock.now)

    last_check = ps.time
    while True:
        try:
            segment = _evolve_segment(ctx, state, last_check)
        except DivergedError:
            _transition(state, Phase.FAILED, log, fabric.clock.now, reason="diverged")
            state.failure_reason = "diverged"
            return finish(state.snapshot)
        last_check = segment.last_check

        if segment.decision is None:
            # Reached t_end; the final check either said stay or terminate.
            _transition(state, Phase.TERMINATED, log, fabric.clock.now)
            return finish(state.snapshot)

        next_solver = segment.decision.removeprefix("switch-to-")
        _transition(state, Phase.SWITCHING, log, fabric.clock.now)
        needed = CAPABILITY_FOR_SOLVER[next_solver]
        if needed in fabric.node(state.current_node).capabilities:
            target = state.current_node
        else:
            target = fabric.find_node(needed)
        if target == state.current_node:
            # Same node offers the capability: switch tasks in place.
            files, script_name = ctx.stage_files(state.snapshot, next_solver)
            ctx.write_stage(target, files)
            ps, solver, _params = ctx.init_stage(target, script_name)
            state.snapshot = ps
            state.current_solver = solver
            state.switch_count += 1
            log.append(
                "task-switch", node=target, solver=solver, clock=fabric.clock.now
            )
            _transition(state, Phase.RUNNING, log, fabric.clock.now)
        else:
            state = perform_migration(
                state, target, fabric, credstore, ctx, next_solver=next_solver
            )
            if state.phase == Phase.FAILED:
                return finish(state.snapshot)
