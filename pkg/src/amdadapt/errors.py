"""Exceptions shared across the toolkit, mapped to CLI exit codes."""


class AmdError(Exception):
    """Base class; carries the process exit code for the CLI layer."""

    exit_code = 1


class ConfigError(AmdError):
    """Malformed or out-of-range configuration."""

    exit_code = 2


class IOFormatError(AmdError):
    """Unreadable or structurally invalid file (checkpoint, manifest, image)."""

    exit_code = 3


class DivergenceError(AmdError):
    """Non-finite loss or parameters during optimization."""

    exit_code = 4


class ContractError(AmdError):
    """A runtime invariant was violated (shape, state, or usage contract)."""

    exit_code = 5
