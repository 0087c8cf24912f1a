"""Append-only event log and the replay checks built on top of it.

Each record is one JSON object per line with sorted keys, so logs from
identical runs are byte-identical. Timing: predicate checks carry the
simulation time "t" (the clock does not advance while a solver segment
is in flight); grid-side records (phase, book, transfer, submit, file
I/O) carry the simulated-seconds stamp "clock". The kinds written by the
runtime:

    run-start      config echo (n, r_a, seeds, mode, ...)
    phase          {from, to, reason?}          state-machine transitions
    check          {t, r_smbh, r_a, decision}   one per predicate check
    book           {category, seconds}          every booked duration
    file-write     {endpoint, name, bytes, sha256}
    file-read      {endpoint, name, bytes, sha256}
    transfer       {name, bytes, src, dst, seconds}
    submit         {node, job_id}
    run-end        {switch_count, dE_over_E, totals}

The validators re-derive run facts from the log alone, independently of
the runtime's own counters.
"""

from __future__ import annotations

import json
from pathlib import Path

__all__ = [
    "EventLog",
    "replay_switch_count",
    "replay_phase_sequence",
    "verify_transfer_integrity",
    "verify_accounting",
    "LEGAL_TRANSITIONS",
]

LEGAL_TRANSITIONS = {
    "initializing": {"running", "failed"},
    "running": {"switching", "terminated", "failed"},
    "switching": {"running", "migrating", "failed"},
    "migrating": {"running", "failed"},
    "terminated": set(),
    "failed": set(),
}


class EventLog:
    """In-memory record list, optionally mirrored to a JSONL file."""

    def __init__(self, sink=None):
        self.records: list[dict] = []
        self._sink_path = Path(sink) if sink is not None else None
        self._sink_file = None
        if self._sink_path is not None:
            self._sink_path.parent.mkdir(parents=True, exist_ok=True)
            self._sink_file = open(self._sink_path, "w", encoding="utf-8")

    def append(self, event: str, **fields) -> dict:
        record = {"event": event, **fields}
        self.records.append(record)
        if self._sink_file is not None:
            self._sink_file.write(json.dumps(record, sort_keys=True) + "\n")
            self._sink_file.flush()
        return record

    def close(self) -> None:
        if self._sink_file is not None:
            self._sink_file.close()
            self._sink_file = None

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps(record, sort_keys=True) + "\n" for record in self.records
        )

    def dump(self, path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @staticmethod
    def read(path) -> list[dict]:
        return [
            json.loads(line)
            for line in Path(path).read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]

    def __iter__(self):
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)


def replay_switch_count(records, r_a: float) -> int:
    """Recount switches from the logged separations alone.

    A switch happens exactly when the predicate [r_smbh < r_a] changes
    between consecutive check instants where switching is possible (the
    final check, whose decision is termination, cannot switch). Logged
    decisions other than the terminate marker are ignored. Holds for runs
    that completed; a run that failed mid-migration stops counting early.
    """
    seps = [
        rec["r_smbh"]
        for rec in records
        if rec.get("event") == "check" and rec.get("decision") != "terminate"
    ]
    flips = 0
    for a, b in zip(seps, seps[1:]):
        if (a < r_a) != (b < r_a):
            flips += 1
    return flips


def replay_phase_sequence(records) -> list[str]:
    """Extract the phase sequence, asserting every transition is legal."""
    phases = ["initializing"]
    for rec in records:
        if rec.get("event") != "phase":
            continue
        src, dst = rec["from"], rec["to"]
        if src != phases[-1]:
            raise AssertionError(
                f"phase record departs from {src!r} but the run is in {phases[-1]!r}"
            )
        if dst not in LEGAL_TRANSITIONS[src]:
            raise AssertionError(f"illegal transition {src!r} -> {dst!r}")
        phases.append(dst)
    return phases


def verify_transfer_integrity(records) -> int:
    """Check every file read back on a node against its last write anywhere.

    Returns the number of reads checked; raises AssertionError on any
    checksum mismatch or read of a never-written file.
    """
    last_write: dict[str, str] = {}
    checked = 0
    for rec in records:
        kind = rec.get("event")
        if kind == "file-write":
            last_write[rec["name"]] = rec["sha256"]
        elif kind == "file-read":
            name = rec["name"]
            if name not in last_write:
                raise AssertionError(f"read of {name!r} with no prior write")
            if rec["sha256"] != last_write[name]:
                raise AssertionError(
                    f"payload {name!r} changed in flight: "
                    f"{last_write[name]} -> {rec['sha256']}"
                )
            checked += 1
    return checked


def verify_accounting(records, totals: dict, elapsed: float, tol: float = 1e-9) -> None:
    """Booked records must reproduce the ledger and sum to the clock."""
    booked: dict[str, float] = {}
    for rec in records:
        if rec.get("event") == "book":
            booked[rec["category"]] = booked.get(rec["category"], 0.0) + rec["seconds"]
    for category, seconds in totals.items():
        if abs(booked.get(category, 0.0) - seconds) > tol:
            raise AssertionError(
                f"ledger and log disagree for {category!r}: "
                f"{seconds} vs {booked.get(category, 0.0)}"
            )
    if abs(sum(totals.values()) - elapsed) > tol:
        raise AssertionError(
            f"categories sum to {sum(totals.values())}, clock elapsed {elapsed}"
        )
