"""Exception hierarchy shared by all malite modules."""


class MaliteError(Exception):
    """Base class for every error raised by the toolkit."""

    #: process exit code used by the CLI when this error escapes a command
    exit_code = 3


class EmptyInput(MaliteError, ValueError):
    pass


class ShapeError(MaliteError, ValueError):
    pass


class InvalidPatchSpec(MaliteError, ValueError):
    pass


class InvalidConfig(MaliteError, ValueError):
    pass


class NumericalError(MaliteError, ArithmeticError):
    exit_code = 4


class FormatError(MaliteError, ValueError):
    pass


class EmptyDataset(MaliteError, ValueError):
    pass


class StratificationError(MaliteError, ValueError):
    pass
