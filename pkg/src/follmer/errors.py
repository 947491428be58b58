"""Error taxonomy shared across the package.

Invalid arguments raise plain ValueError. The classes below exist so the CLI
can map failure families onto exit codes without string matching.
"""


class FollmerError(Exception):
    """Base class for package-specific failures."""


class ConfigError(FollmerError, ValueError):
    """Bad or unknown configuration keys/values (CLI exit code 2)."""


class NumericError(FollmerError, ArithmeticError):
    """Non-finite or degenerate numerics during a run (CLI exit code 3)."""


class StateError(FollmerError, RuntimeError):
    """Operation called in the wrong object state (e.g. missing tape)."""


class DataFormatError(FollmerError, ValueError):
    """Malformed data file contents; carries position info (CLI exit code 4)."""
