"""Exception hierarchy for the DACL library and its CLI exit codes"""

from typing import Optional


class DaclError(Exception):
    """Base class for every error raised by this package"""
    exit_code = 1


class DimensionError(DaclError, ValueError):
    """Operand shapes do not agree"""


class DomainError(DaclError, ValueError):
    """Operand outside the mathematical domain of an op (e.g. log of a non-positive entry)"""


class ContractError(DaclError, ValueError):
    """A documented pre-condition was violated by the caller"""


class DomainIndexError(DaclError, IndexError):
    """Domain index outside 0..M-1"""


class ConfigurationError(DaclError):
    """Invalid configuration or experimental protocol"""


class DataFormatError(DaclError):
    """Malformed input file; carries the offending path and line"""
    exit_code = 2

    def __init__(self, message: str, path: Optional[str] = None, line_number: Optional[int] = None):
        self.path = path
        self.line_number = line_number
        location = ""
        if path is not None:
            location = f"{path}:{line_number}: " if line_number is not None else f"{path}: "
        super().__init__(f"{location}{message}")


class NumericalAbort(DaclError):
    """A training loss became non-finite"""
    exit_code = 3

    def __init__(self, term: str, value: float, epoch: int, step: int):
        self.term = term
        self.value = value
        self.epoch = epoch
        self.step = step
        super().__init__(f"non-finite loss term '{term}' = {value} at epoch {epoch}, step {step}")


class AcceptanceFailure(DaclError):
    """Gradient oracle or acceptance gate failed"""
    exit_code = 4


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the CLI exit status"""
    if isinstance(exc, DaclError):
        return exc.exit_code
    if isinstance(exc, OSError):
        return 2
    return 1
