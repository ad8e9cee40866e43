"""Exception hierarchy shared across the package.

Each class carries a short ``category`` string; the CLI prints it as the
machine-parsable first token of its one-line error report.
"""


class AsidError(Exception):
    category = "error"


class DimensionError(AsidError, ValueError):
    category = "dimension"


class ContractError(AsidError, ValueError):
    category = "contract"


class ConfigError(AsidError, ValueError):
    category = "config"


class NumericError(AsidError, ArithmeticError):
    category = "numeric"


class OrderingError(AsidError, RuntimeError):
    """An attention set was fetched before its producer published it."""

    category = "ordering"


class ShareError(AsidError, ValueError):
    """Shared attention geometry does not fit the consumer's partitions."""

    category = "share"


class CorruptStoreError(AsidError, ValueError):
    category = "corrupt-store"


class DataError(AsidError, OSError):
    category = "data"
