"""Credential delegation store: long-lived credentials, short-lived tokens.

A user deposits a password-locked credential; the running application
holds only the password and trades it for short-lived proxy tokens that
gate every transfer and job submission. Revoking the credential cuts off
new tokens and, in this implementation, also invalidates tokens already
issued (validation consults the store, so the cascade is free; this is
stricter than letting outstanding short-lived tokens run out).

Passwords are never kept: only a salted SHA-256 digest is stored. Salts
come from a deterministic per-store counter so identical simulated runs
stay byte-identical; this is simulation-grade hygiene, not production
key management.

Stores live on simulated time (a shared clock) and can be replicated;
revocations propagate between replicas on explicit sync() calls.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass

from .errors import (
    CredentialExpiredError,
    CredentialRevokedError,
    TransportError,
    UnknownCredentialError,
    WrongPasswordError,
)
from .fabric import SimClock

__all__ = [
    "StoredCredential",
    "ProxyToken",
    "Validity",
    "CredentialStore",
    "DEFAULT_MAX_TOKEN_LIFETIME",
]

# "Short-lived" cap on proxy tokens: two simulated hours.
DEFAULT_MAX_TOKEN_LIFETIME = 7200.0


@dataclass
class StoredCredential:
    id: str
    salt: bytes
    password_digest: bytes
    expires_at: float
    revoked: bool = False


@dataclass(frozen=True)
class ProxyToken:
    """Short-lived delegated credential; every field travels on the wire."""

    token_id: str
    credential_id: str
    issued_at: float
    expires_at: float


@dataclass(frozen=True)
class Validity:
    valid: bool
    reason: str  # "ok", "expired", "revoked", "unknown-credential", "missing"

    def __bool__(self) -> bool:
        return self.valid


def _digest(salt: bytes, password: str) -> bytes:
    return hashlib.sha256(salt + password.encode()).digest()


class CredentialStore:
    """One credential service instance on a simulated clock.

    Mutations are serialized with a lock so the store can be shared by the
    fabric's execution contexts and the line-protocol service.
    """

    def __init__(
        self,
        clock: SimClock | None = None,
        max_token_lifetime: float = DEFAULT_MAX_TOKEN_LIFETIME,
        name: str = "credstore",
    ):
        self.clock = clock or SimClock()
        self.max_token_lifetime = max_token_lifetime
        self.name = name
        self.reachable = True
        self._lock = threading.Lock()
        self._creds: dict[str, StoredCredential] = {}
        self._counter = 0
        self._token_counter = 0
        self._pending_revocations: list[tuple[float, str]] = []

    # -- internals ----------------------------------------------------------

    def _now(self, now: float | None = None) -> float:
        return self.clock.now if now is None else now

    def _next_salt(self) -> bytes:
        # Deterministic per store: unique salts without nondeterminism.
        return hashlib.sha256(f"{self.name}:salt:{self._counter}".encode()).digest()

    def _apply_scheduled(self, now: float) -> None:
        due = [cid for when, cid in self._pending_revocations if now >= when]
        if due:
            self._pending_revocations = [
                (when, cid) for when, cid in self._pending_revocations if now < when
            ]
            for cid in due:
                cred = self._creds.get(cid)
                if cred is not None:
                    cred.revoked = True

    def _get(self, credential_id: str) -> StoredCredential:
        try:
            return self._creds[credential_id]
        except KeyError:
            raise UnknownCredentialError(
                f"no credential {credential_id!r}"
            ) from None

    def _check_usable(self, cred: StoredCredential, password: str, now: float):
        if cred.revoked:
            raise CredentialRevokedError(f"credential {cred.id} was destroyed")
        if now >= cred.expires_at:
            raise CredentialExpiredError(f"credential {cred.id} expired")
        if _digest(cred.salt, password) != cred.password_digest:
            raise WrongPasswordError(f"wrong password for credential {cred.id}")

    # -- operations ----------------------------------------------------------

    def store_credential(self, password: str, lifetime: float) -> str:
        """Deposit a credential; only the salted digest is retained."""
        if lifetime <= 0:
            raise ValueError("credential lifetime must be positive")
        with self._lock:
            salt = self._next_salt()
            cred_id = f"{self.name}-cred-{self._counter:04d}"
            self._counter += 1
            self._creds[cred_id] = StoredCredential(
                id=cred_id,
                salt=salt,
                password_digest=_digest(salt, password),
                expires_at=self._now() + lifetime,
            )
            return cred_id

    def issue_proxy(
        self, credential_id: str, password: str, duration: float
    ) -> ProxyToken:
        """Trade the password for a short-lived token.

        The token never outlives the backing credential and never exceeds
        the configured short-lived maximum.
        """
        if duration <= 0:
            raise ValueError("token duration must be positive")
        if duration > self.max_token_lifetime:
            raise ValueError(
                f"requested lifetime {duration}s exceeds the short-lived "
                f"maximum {self.max_token_lifetime}s"
            )
        with self._lock:
            now = self._now()
            self._apply_scheduled(now)
            cred = self._get(credential_id)
            self._check_usable(cred, password, now)
            token = ProxyToken(
                token_id=f"{self.name}-token-{self._token_counter:06d}",
                credential_id=credential_id,
                issued_at=now,
                expires_at=min(now + duration, cred.expires_at),
            )
            self._token_counter += 1
            return token

    def revoke(self, credential_id: str) -> None:
        """Destroy the credential. Idempotent; outstanding tokens die too."""
        with self._lock:
            cred = self._get(credential_id)
            cred.revoked = True

    def revoke_at(self, credential_id: str, when: float) -> None:
        """Schedule a revocation at a future simulated time.

        Models the owner destroying the credential while the application
        runs unattended; it takes effect at the first consultation at or
        after ``when``.
        """
        self._get(credential_id)
        with self._lock:
            self._pending_revocations.append((when, credential_id))

    def renew(self, credential_id: str, password: str, new_lifetime: float) -> float:
        """Extend the credential to now + new_lifetime. Returns new expiry."""
        if new_lifetime <= 0:
            raise ValueError("new_lifetime must be positive")
        with self._lock:
            now = self._now()
            self._apply_scheduled(now)
            cred = self._get(credential_id)
            self._check_usable(cred, password, now)
            cred.expires_at = now + new_lifetime
            return cred.expires_at

    def replicate(self, credential_id: str, target: "CredentialStore") -> None:
        """Copy a credential to another store (same digest and expiry)."""
        with self._lock:
            cred = self._get(credential_id)
            if not target.reachable:
                raise TransportError(
                    f"credential store {target.name!r} is unreachable"
                )
            target._creds[credential_id] = StoredCredential(
                id=cred.id,
                salt=cred.salt,
                password_digest=cred.password_digest,
                expires_at=cred.expires_at,
                revoked=cred.revoked,
            )

    def sync(self, other: "CredentialStore") -> None:
        """Pull-based reconciliation: revocations propagate both ways."""
        if not (self.reachable and other.reachable):
            raise TransportError("cannot sync with an unreachable store")
        with self._lock:
            now = max(self._now(), other._now())
            self._apply_scheduled(now)
            other._apply_scheduled(now)
            shared = self._creds.keys() & other._creds.keys()
            for cid in shared:
                revoked = self._creds[cid].revoked or other._creds[cid].revoked
                self._creds[cid].revoked = revoked
                other._creds[cid].revoked = revoked

    def validate(self, token: ProxyToken | None, now: float | None = None) -> Validity:
        """Is the token good at ``now``? Expiry is half-open: now == expiry
        is already invalid. A revoked backing credential kills the token."""
        if token is None:
            return Validity(False, "missing")
        now = self._now(now)
        self._apply_scheduled(now)
        cred = self._creds.get(token.credential_id)
        if cred is None:
            return Validity(False, "unknown-credential")
        if cred.revoked:
            return Validity(False, "revoked")
        if now >= token.expires_at:
            return Validity(False, "expired")
        return Validity(True, "ok")

    # -- introspection --------------------------------------------------------

    def serialize_state(self) -> bytes:
        """Stable JSON dump of the stored records (digests, not secrets)."""
        payload = {
            "name": self.name,
            "credentials": [
                {
                    "id": c.id,
                    "salt": c.salt.hex(),
                    "digest": c.password_digest.hex(),
                    "expires_at": c.expires_at,
                    "revoked": c.revoked,
                }
                for c in sorted(self._creds.values(), key=lambda c: c.id)
            ],
        }
        return json.dumps(payload, sort_keys=True).encode()
