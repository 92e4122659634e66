"""Exception types shared across the package."""


class FedmixError(Exception):
    """Base class for all fedmix errors."""


class DimensionError(FedmixError):
    """Shapes or sizes incompatible with an operation."""


class ContractError(FedmixError):
    """A caller violated an operation's contract."""


class ConfigError(FedmixError):
    """Invalid configuration value or combination."""


class DataError(FedmixError):
    """Dataset content or on-disk format problem."""


class UsageError(FedmixError):
    """Bad command line: unknown flag, unreadable path. Exits with code 2."""
