"""Exception hierarchy shared by every module."""


class CycleCLError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(CycleCLError, ValueError):
    """A configuration value is out of range or inconsistent."""


class DimensionError(CycleCLError, ValueError):
    """Array shapes do not match what an operation expects."""


class EmptyInputError(CycleCLError, ValueError):
    """An operation received zero frames or zero items."""


class NumericError(CycleCLError, ArithmeticError):
    """Non-finite values were encountered."""


class ContractError(CycleCLError, RuntimeError):
    """A call violated the documented call protocol (e.g. stale cache)."""


class ProtocolError(CycleCLError, ValueError):
    """An evaluation protocol precondition does not hold."""


class DatasetParseError(CycleCLError, ValueError):
    """A dataset file on disk is missing or malformed."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class MissingArtifactError(CycleCLError, FileNotFoundError):
    """An upstream pipeline artifact has not been produced yet."""
