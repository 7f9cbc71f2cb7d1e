"""Exception hierarchy; the CLI maps each class to an exit code."""


class NapcError(Exception):
    exit_code = 2


class DataError(NapcError):
    """Malformed store, config or input file."""

    exit_code = 2


class NumericalError(NapcError):
    """Divergence, non-finite values or integer overflow."""

    exit_code = 3


class QuantizationError(NapcError):
    """The scale search ran out of draws for a layer."""

    exit_code = 4

    def __init__(self, message: str, layer: str | None = None):
        super().__init__(message)
        self.layer = layer
