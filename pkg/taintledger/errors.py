class TaintLedgerError(Exception):
    """Base class for every data error raised by taintledger."""


class ValidationError(TaintLedgerError):
    """Input violates a structural rule (duplicate address, bad address text, ...)."""


class InvalidChainData(TaintLedgerError):
    """A balance operation breaks a ledger precondition."""


class StreamOrderError(TaintLedgerError):
    """Blocks arrived out of order, or a block range was already committed."""


class ParseError(TaintLedgerError):
    """A line of an input file could not be parsed."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class ConfigError(TaintLedgerError):
    """Configuration is missing, malformed, or infeasible."""


class StoreClosed(TaintLedgerError):
    """Operation on a closed history store."""


class FutureBlockError(TaintLedgerError):
    """Historical query for a block above the last committed one."""


class SeedNotFound(TaintLedgerError):
    """A tracking seed has no record in the store."""


class UnsupportedScheme(TaintLedgerError):
    """No descriptor is registered for the bridge scheme."""


class PayloadError(TaintLedgerError):
    """Bridge payload does not match its scheme layout."""


class DescriptorError(TaintLedgerError):
    """Bridge scheme descriptor is inconsistent."""


class BalanceProviderError(TaintLedgerError):
    """External balance lookup failed."""
