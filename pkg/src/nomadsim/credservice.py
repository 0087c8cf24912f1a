"""Line-delimited request/response protocol over a local TCP socket.

Lets the runtime treat a credential store as a separate service. One
request per line, UTF-8, newline-terminated; fields are space-separated
and password fields are URL-quoted so they may contain anything.

Requests and successful responses:

    STORE <password> <lifetime>                  -> OK <credential_id>
    ISSUE <credential_id> <password> <duration>  -> OK <token_id> <credential_id> <issued_at> <expires_at>
    REVOKE <credential_id>                       -> OK revoked
    RENEW <credential_id> <password> <lifetime>  -> OK <expires_at>
    VALIDATE <token_id> <credential_id> <issued_at> <expires_at> [<now>]
                                                 -> OK valid|invalid <reason>

Failures: ERR <code> <message...> with codes unknown-credential,
wrong-password, revoked, expired, invalid-argument, bad-request.
"""

from __future__ import annotations

import socket
import socketserver
import threading
from urllib.parse import quote, unquote

from .credentials import CredentialStore, ProxyToken, Validity
from .errors import (
    CredentialError,
    CredentialExpiredError,
    CredentialRevokedError,
    UnknownCredentialError,
    WrongPasswordError,
)

__all__ = ["CredentialService", "CredServiceClient"]

_ERROR_CODES = {
    UnknownCredentialError: "unknown-credential",
    WrongPasswordError: "wrong-password",
    CredentialRevokedError: "revoked",
    CredentialExpiredError: "expired",
}


def _dispatch(store: CredentialStore, line: str) -> str:
    parts = line.strip().split()
    if not parts:
        return "ERR bad-request empty line"
    verb, args = parts[0].upper(), parts[1:]
    try:
        if verb == "STORE" and len(args) == 2:
            cred_id = store.store_credential(unquote(args[0]), float(args[1]))
            return f"OK {cred_id}"
        if verb == "ISSUE" and len(args) == 3:
            token = store.issue_proxy(args[0], unquote(args[1]), float(args[2]))
            return (
                f"OK {token.token_id} {token.credential_id} "
                f"{token.issued_at!r} {token.expires_at!r}"
            )
        if verb == "REVOKE" and len(args) == 1:
            store.revoke(args[0])
            return "OK revoked"
        if verb == "RENEW" and len(args) == 3:
            expires = store.renew(args[0], unquote(args[1]), float(args[2]))
            return f"OK {expires!r}"
        if verb == "VALIDATE" and len(args) in (4, 5):
            token = ProxyToken(
                token_id=args[0],
                credential_id=args[1],
                issued_at=float(args[2]),
                expires_at=float(args[3]),
            )
            now = float(args[4]) if len(args) == 5 else None
            verdict = store.validate(token, now=now)
            return f"OK {'valid' if verdict.valid else 'invalid'} {verdict.reason}"
        return f"ERR bad-request unsupported request {line.strip()!r}"
    except CredentialError as exc:
        code = _ERROR_CODES.get(type(exc), "credential-error")
        return f"ERR {code} {exc}"
    except ValueError as exc:
        return f"ERR invalid-argument {exc}"


class CredentialService:
    """Serves one CredentialStore over a loopback socket in a thread."""

    def __init__(self, store: CredentialStore, host: str = "127.0.0.1", port: int = 0):
        self.store = store
        outer = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self):
                for raw in self.rfile:
                    reply = _dispatch(outer.store, raw.decode("utf-8"))
                    self.wfile.write((reply + "\n").encode("utf-8"))
                    self.wfile.flush()

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = Server((host, port), Handler)
        self._thread = threading.Thread(
            target=self._server.serve_forever, name="credservice", daemon=True
        )

    @property
    def address(self) -> tuple:
        return self._server.server_address

    def start(self) -> "CredentialService":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> "CredentialService":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


class CredServiceClient:
    """Blocking line-protocol client; raises the store's exception types."""

    _EXCEPTIONS = {code: exc for exc, code in _ERROR_CODES.items()}

    def __init__(self, host: str, port: int, timeout: float = 5.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._file = self._sock.makefile("rwb")

    def close(self) -> None:
        self._file.close()
        self._sock.close()

    def __enter__(self) -> "CredServiceClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _round_trip(self, line: str) -> list:
        self._file.write((line + "\n").encode("utf-8"))
        self._file.flush()
        reply = self._file.readline().decode("utf-8").strip()
        parts = reply.split()
        if not parts:
            raise ConnectionError("credential service closed the connection")
        if parts[0] == "OK":
            return parts[1:]
        code = parts[1] if len(parts) > 1 else "credential-error"
        message = " ".join(parts[2:])
        exc_type = self._EXCEPTIONS.get(code)
        if exc_type is not None:
            raise exc_type(message)
        if code == "invalid-argument":
            raise ValueError(message)
        raise CredentialError(f"{code}: {message}")

    def store_credential(self, password: str, lifetime: float) -> str:
        return self._round_trip(f"STORE {quote(password)} {lifetime!r}")[0]

    def issue_proxy(self, credential_id: str, password: str, duration: float) -> ProxyToken:
        fields = self._round_trip(
            f"ISSUE {credential_id} {quote(password)} {duration!r}"
        )
        return ProxyToken(
            token_id=fields[0],
            credential_id=fields[1],
            issued_at=float(fields[2]),
            expires_at=float(fields[3]),
        )

    def revoke(self, credential_id: str) -> None:
        self._round_trip(f"REVOKE {credential_id}")

    def renew(self, credential_id: str, password: str, new_lifetime: float) -> float:
        return float(
            self._round_trip(f"RENEW {credential_id} {quote(password)} {new_lifetime!r}")[0]
        )

    def validate(self, token: ProxyToken, now: float | None = None) -> Validity:
        line = (
            f"VALIDATE {token.token_id} {token.credential_id} "
            f"{token.issued_at!r} {token.expires_at!r}"
        )
        if now is not None:
            line += f" {now!r}"
        fields = self._round_trip(line)
        return Validity(fields[0] == "valid", fields[1])
