"""Error taxonomy shared by the library and the command line front end.

Every failure mode raised on purpose maps to one of the classes below, and
each class carries a distinct process exit code so shell callers can branch
on the kind of failure without parsing prose.
"""

from __future__ import annotations


class VirtstainError(Exception):
    """Base class for all deliberate failures. Exit code 1."""

    exit_code = 1


class ConfigurationError(VirtstainError):
    """Invalid or inconsistent configuration values. Exit code 2."""

    exit_code = 2


class RangeError(VirtstainError):
    """Index or coordinate outside the valid range. Exit code 3."""

    exit_code = 3


class ShapeError(VirtstainError):
    """Raster or parameter shapes do not line up. Exit code 4."""

    exit_code = 4


class ContractError(VirtstainError):
    """Caller broke an API precondition. Exit code 5."""

    exit_code = 5


class DomainError(VirtstainError):
    """Unknown stain or image domain identifier. Exit code 6."""

    exit_code = 6


class CoverageError(VirtstainError):
    """Stitching left pixels without any contributing tile. Exit code 7."""

    exit_code = 7

    def __init__(self, message: str, coords: tuple[int, int] | None = None):
        super().__init__(message)
        self.coords = coords


class StateError(VirtstainError):
    """Operation attempted in an invalid state (e.g. NaN gradients, missing
    checkpoint, finalizing an empty accumulator). Exit code 8."""

    exit_code = 8
