# ABOUTME: Exception hierarchy shared by every cellgnn module.
# ABOUTME: The three families map onto the command-line exit codes 1, 2 and 3.


class CellGnnError(Exception):
    """Base class for all errors raised by cellgnn."""

    exit_code = 2


class ConfigError(CellGnnError, ValueError):
    """Invalid run configuration or out-of-range command arguments."""

    exit_code = 1


class DataError(CellGnnError, ValueError):
    """Malformed input data, failed parses, or library coverage gaps."""

    exit_code = 2


class NumericError(CellGnnError, ArithmeticError):
    """Numerical failure such as a diverging training run."""

    exit_code = 3


class NetlistSyntaxError(DataError):
    """Syntax or consistency error in a transistor-level cell source."""

    def __init__(self, message: str, line: int = 0):
        self.line = line
        if line:
            message = f"line {line}: {message}"
        super().__init__(message)


class MalformedCellError(DataError):
    """Cell whose transistor network is not a valid static CMOS gate."""


class LibertySyntaxError(DataError):
    """Grammar violation or unsupported construct in a Liberty-subset file."""

    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        if line:
            message = f"line {line}, column {column}: {message}"
        super().__init__(message)


class GateNetlistError(DataError):
    """Invalid gate-level netlist (cycle, multiple drivers, unknown cell)."""


class CoverageError(DataError):
    """Library does not cover the cells or arcs a netlist or model needs."""


class DatasetFormatError(DataError):
    """Corrupt or incompatible dataset or checkpoint file."""


class DivergenceError(NumericError):
    """Training loss became non-finite."""
