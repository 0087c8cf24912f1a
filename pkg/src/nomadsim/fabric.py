"""Simulated grid: named nodes, a latency+bandwidth link, and a booking clock.

The fabric is a single-owner discrete-event world. One simulated clock
advances only through bookings, and every booked second lands in exactly
one of six categories, so the categories always partition total elapsed
time. Nodes carry capability tags and in-memory file stores; transfers
move real bytes between stores so payload integrity is checkable end to
end. Every transfer and submission is gated by a proxy token validated at
the current simulated time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    AuthenticationError,
    DuplicateNodeError,
    UnknownNodeError,
)

__all__ = [
    "CATEGORIES",
    "KNOWN_CAPABILITIES",
    "HOME",
    "NodeSpec",
    "LinkModel",
    "IoModel",
    "CostModel",
    "JitterModel",
    "JobSpec",
    "JobHandle",
    "SimClock",
    "CostLedger",
    "GridFabric",
    "default_fabric_config",
    "load_fabric_config",
    "fabric_from_config",
]

# The six accounting categories; solver time is split by method and the
# rest is the grid/OS overhead breakdown.
CATEGORIES = ("direct", "tree", "local-io", "transfer", "submission", "init")

KNOWN_CAPABILITIES = frozenset({"tree-accelerator", "direct-accelerator"})

# Implicit endpoint for the launcher's machine: files originate here and
# jobs can never target it.
HOME = "home"


@dataclass(frozen=True)
class NodeSpec:
    """A grid machine: capabilities plus fixed per-job overheads (seconds)."""

    name: str
    location: str
    capabilities: frozenset
    submission_overhead: float = 1.5
    init_overhead: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "capabilities", frozenset(self.capabilities))
        if not self.capabilities:
            raise ValueError(f"node {self.name!r} needs at least one capability")
        unknown = self.capabilities - KNOWN_CAPABILITIES
        if unknown:
            raise ValueError(f"unknown capability tags: {sorted(unknown)}")
        if self.submission_overhead < 0 or self.init_overhead < 0:
            raise ValueError("overheads must be non-negative")
        if self.name == HOME:
            raise ValueError(f"{HOME!r} is reserved for the launch endpoint")


@dataclass(frozen=True)
class LinkModel:
    """Single-pipe network model: duration = latency + size / bandwidth."""

    latency: float = 0.1
    bandwidth: float = 550_000.0  # bytes per second

    def __post_init__(self):
        if self.latency < 0:
            raise ValueError("latency must be non-negative")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")

    def transfer_time(self, n_bytes: int) -> float:
        return self.latency + n_bytes / self.bandwidth


@dataclass(frozen=True)
class IoModel:
    """Local file I/O accounting: duration = latency + size / bandwidth."""

    latency: float = 0.02
    bandwidth: float = 8.0e7

    def io_time(self, n_bytes: int) -> float:
        return self.latency + n_bytes / self.bandwidth


@dataclass(frozen=True)
class CostModel:
    """Predicted solver seconds per pairwise force evaluation.

    Used by the byte-reproducible "modeled" timing mode; the constants are
    fitted to desk hardware, not measurements of any particular machine.
    """

    tree_pair_cost: float = 1.2e-8
    direct_pair_cost: float = 1.0e-8


@dataclass(frozen=True)
class JitterModel:
    """Optional multiplicative noise on transfer durations; off by default."""

    enabled: bool = False
    amplitude: float = 0.2
    seed: int = 0


@dataclass
class JobSpec:
    """A job definition: target, input files as (name, bytes), descriptor."""

    target_node: str
    input_files: list
    task_descriptor: str
    token: object = None


@dataclass(frozen=True)
class JobHandle:
    job_id: int
    node: str
    task_descriptor: str


class SimClock:
    """Monotone simulated-seconds clock."""

    def __init__(self):
        self._now = 0.0

    @property
    def now(self) -> float:
        return self._now

    def advance(self, seconds: float) -> None:
        if seconds < 0:
            raise ValueError("the clock cannot run backwards")
        self._now += seconds


class CostLedger:
    """Per-category time accumulator tied to a clock.

    Booking is the only way the clock advances, which makes the accounting
    identity (categories sum to elapsed time) structural.
    """

    def __init__(self, clock: SimClock):
        self._clock = clock
        self._totals = {cat: 0.0 for cat in CATEGORIES}
        self._listeners: list = []

    def add_listener(self, fn) -> None:
        """fn(category, seconds) is called after every successful booking."""
        self._listeners.append(fn)

    def remove_listener(self, fn) -> None:
        self._listeners.remove(fn)

    def book(self, category: str, seconds: float) -> None:
        if category not in CATEGORIES:
            raise ValueError(f"unknown booking category {category!r}")
        if seconds < 0:
            raise ValueError("cannot book a negative duration")
        self._totals[category] += seconds
        self._clock.advance(seconds)
        for fn in self._listeners:
            fn(category, seconds)

    def totals(self) -> dict:
        return dict(self._totals)

    def total(self) -> float:
        return sum(self._totals.values())


class GridFabric:
    """Registry of nodes plus the authenticated transfer/submission layer."""

    def __init__(
        self,
        credstore,
        link: LinkModel | None = None,
        io: IoModel | None = None,
        cost: CostModel | None = None,
        jitter: JitterModel | None = None,
        clock: SimClock | None = None,
    ):
        self.credstore = credstore
        self.link = link or LinkModel()
        self.io = io or IoModel()
        self.cost = cost or CostModel()
        self.jitter = jitter or JitterModel()
        self.clock = clock or SimClock()
        self.ledger = CostLedger(self.clock)
        self.nodes: dict[str, NodeSpec] = {}
        self._order: list[str] = []
        self.stores: dict[str, dict[str, bytes]] = {HOME: {}}
        self.delivered: dict[str, list[JobHandle]] = {}
        self._next_job = 0
        self._jitter_rng = np.random.default_rng(self.jitter.seed)

    # -- registry ---------------------------------------------------------

    def register_node(self, spec: NodeSpec) -> str:
        if spec.name in self.nodes:
            raise DuplicateNodeError(f"node {spec.name!r} is already registered")
        self.nodes[spec.name] = spec
        self._order.append(spec.name)
        self.stores[spec.name] = {}
        self.delivered[spec.name] = []
        return spec.name

    def node(self, name: str) -> NodeSpec:
        try:
            return self.nodes[name]
        except KeyError:
            raise UnknownNodeError(f"no node named {name!r}") from None

    def find_node(self, capability: str) -> str:
        """First registered node carrying the capability."""
        for name in self._order:
            if capability in self.nodes[name].capabilities:
                return name
        raise UnknownNodeError(f"no registered node offers {capability!r}")

    def _store(self, endpoint: str) -> dict:
        if endpoint != HOME:
            self.node(endpoint)
        return self.stores[endpoint]

    # -- files ------------------------------------------------------------

    def put_file(self, endpoint: str, name: str, data: bytes) -> None:
        self._store(endpoint)[name] = bytes(data)

    def get_file(self, endpoint: str, name: str) -> bytes:
        store = self._store(endpoint)
        if name not in store:
            raise FileNotFoundError(f"{endpoint}:{name}")
        return store[name]

    def delete_file(self, endpoint: str, name: str) -> None:
        self._store(endpoint).pop(name, None)

    def book_local_io(self, n_bytes: int) -> float:
        duration = self.io.io_time(n_bytes)
        self.ledger.book("local-io", duration)
        return duration

    # -- authenticated operations ------------------------------------------

    def _check_token(self, token) -> None:
        verdict = self.credstore.validate(token, now=self.clock.now)
        if not verdict.valid:
            raise AuthenticationError(
                f"token rejected: {verdict.reason}", reason=verdict.reason
            )

    def transfer(self, file_size: int, src: str, dst: str, token) -> float:
        """Book a src->dst transfer of file_size bytes. Returns the duration.

        The token is validated at the current simulated time before the
        clock moves; on failure nothing is booked and nothing moves.
        """
        self._store(src)
        self._store(dst)
        if file_size < 0:
            raise ValueError("file_size must be non-negative")
        self._check_token(token)
        duration = self.link.transfer_time(file_size)
        if self.jitter.enabled:
            duration *= 1.0 + self.jitter.amplitude * float(self._jitter_rng.random())
        self.ledger.book("transfer", duration)
        return duration

    def transfer_file(self, name: str, src: str, dst: str, token) -> float:
        """Move a named file between stores, booking its transfer."""
        data = self.get_file(src, name)
        duration = self.transfer(len(data), src, dst, token)
        self.stores[dst][name] = data
        return duration

    def submit_job(self, job: JobSpec, token) -> JobHandle:
        """Deliver a job to its target node's executor, booking overhead."""
        spec = self.node(job.target_node)
        self._check_token(token)
        self.ledger.book("submission", spec.submission_overhead)
        handle = JobHandle(
            job_id=self._next_job, node=job.target_node,
            task_descriptor=job.task_descriptor,
        )
        self._next_job += 1
        self.delivered[job.target_node].append(handle)
        return handle

    def book(self, category: str, seconds: float) -> None:
        self.ledger.book(category, seconds)


# -- configuration ----------------------------------------------------------


def default_fabric_config() -> dict:
    """The shipped two-site topology and timing constants.

    Schema (all timing values in simulated seconds, sizes in bytes):

        nodes: list of {name, location, capabilities: [tag...],
                        submission_overhead, init_overhead}
        link: {latency, bandwidth}
        io: {latency, bandwidth}
        cost_model: {tree_pair_cost, direct_pair_cost}
        jitter: {enabled, amplitude, seed}
    """
    return {
        "nodes": [
            {
                "name": "darkstar",
                "location": "NL",
                "capabilities": ["tree-accelerator"],
                "submission_overhead": 1.5,
                "init_overhead": 1.0,
            },
            {
                "name": "zonker",
                "location": "US",
                "capabilities": ["direct-accelerator"],
                "submission_overhead": 1.5,
                "init_overhead": 1.0,
            },
        ],
        "link": {"latency": 0.1, "bandwidth": 550_000.0},
        "io": {"latency": 0.02, "bandwidth": 8.0e7},
        "cost_model": {"tree_pair_cost": 1.2e-8, "direct_pair_cost": 1.0e-8},
        "jitter": {"enabled": False, "amplitude": 0.2, "seed": 0},
    }


def load_fabric_config(path) -> dict:
    cfg = json.loads(Path(path).read_text())
    base = default_fabric_config()
    for key, value in base.items():
        cfg.setdefault(key, value)
    return cfg


def fabric_from_config(cfg: dict, credstore) -> GridFabric:
    fabric = GridFabric(
        credstore,
        link=LinkModel(**cfg["link"]),
        io=IoModel(**cfg["io"]),
        cost=CostModel(**cfg["cost_model"]),
        jitter=JitterModel(**cfg["jitter"]),
    )
    for node in cfg["nodes"]:
        fabric.register_node(NodeSpec(**node))
    return fabric
