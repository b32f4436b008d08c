"""Exception hierarchy shared by the scorer, the referee service and the CLI.

Every error carries a short machine-readable ``category`` used for CLI exit
codes and HTTP error bodies.
"""

from __future__ import annotations


class EnergyRefError(Exception):
    category = "error"
    http_status = 500
    exit_code = 1


class InvalidInput(EnergyRefError, ValueError):
    category = "invalid_input"
    http_status = 400
    exit_code = 3


class ParseError(InvalidInput):
    category = "parse_error"

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where = f"{source}:"
        if line is not None:
            where = f"{where}{line}:"
        super().__init__(f"{where} {message}" if where else message)


class ConfigError(EnergyRefError):
    category = "config_error"
    http_status = 500
    exit_code = 4


class ManifestError(ConfigError):
    category = "manifest_error"


class AuthenticationError(EnergyRefError):
    category = "authentication"
    http_status = 401
    exit_code = 5


class ConflictError(EnergyRefError):
    category = "conflict"
    http_status = 409
    exit_code = 5


class SessionError(EnergyRefError):
    """Raised for requests against an expired or closed session."""

    category = "session_closed"
    http_status = 403
    exit_code = 5


class SessionExpired(SessionError):
    category = "session_expired"


class StateError(EnergyRefError):
    category = "state_error"
    http_status = 409
    exit_code = 5


class NotFound(EnergyRefError):
    category = "not_found"
    http_status = 404
    exit_code = 3


class InvalidRequest(InvalidInput):
    category = "invalid_request"
