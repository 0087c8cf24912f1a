"""Exception types shared across the package."""


class NomadsimError(Exception):
    """Base class for all package errors."""


class InvalidStateError(NomadsimError):
    """An operation was attempted on an object in the wrong state."""


class DivergedError(NomadsimError):
    """An integrator produced non-finite positions or velocities."""


class SnapshotError(NomadsimError):
    """Base class for snapshot parse failures."""


class SnapshotHeaderError(SnapshotError):
    """Snapshot header is missing, malformed, or has the wrong magic/version."""


class SnapshotTruncatedError(SnapshotError):
    """Snapshot body is shorter than the header promises."""


class SnapshotChecksumError(SnapshotError):
    """Snapshot checksum does not match its contents."""


class FabricError(NomadsimError):
    """Base class for simulated-grid failures."""


class DuplicateNodeError(FabricError):
    """A node with this name is already registered."""


class UnknownNodeError(FabricError):
    """The named node is not registered with the fabric."""


class AuthenticationError(FabricError):
    """A credential-gated operation was attempted with an invalid token.

    ``reason`` is one of ``"expired"``, ``"revoked"``, ``"unknown"``.
    """

    def __init__(self, message: str, reason: str = "unknown"):
        super().__init__(message)
        self.reason = reason


class CredentialError(NomadsimError):
    """Base class for credential-store failures."""


class UnknownCredentialError(CredentialError):
    """No credential with this id exists."""


class WrongPasswordError(CredentialError):
    """The supplied password does not match the stored digest."""


class CredentialRevokedError(CredentialError):
    """The credential has been destroyed by its owner."""


class CredentialExpiredError(CredentialError):
    """The credential's lifetime has elapsed."""


class TransportError(NomadsimError):
    """A simulated remote endpoint is unreachable."""
