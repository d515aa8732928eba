"""Exception hierarchy shared by all modules."""


class HypoflowError(Exception):
    """Base class for all package errors."""


class ConfigurationError(HypoflowError, ValueError):
    """Invalid fixture, grid, registry name or experiment configuration."""


class DataError(HypoflowError, ValueError):
    """Non-finite or otherwise unusable input data."""


class RangeError(HypoflowError, ValueError):
    """A parameter lies outside the range where an operation is meaningful."""


class AssemblyError(HypoflowError):
    """Stencil and grid disagree (e.g. wrap rule mismatch)."""


class ConnectivityError(HypoflowError):
    """The horizontal move graph failed to reach every node."""


class TubeExitError(HypoflowError):
    """An ambient point left the tubular neighbourhood of the target."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class DomainError(HypoflowError, ValueError):
    """A point that must lie on the target manifold does not."""


class AliasingError(HypoflowError):
    """Adjacent grid nodes differ in angle by at least pi."""


class HomotopyError(HypoflowError):
    """Two maps expected to be homotopic carry different windings."""


class SolverError(HypoflowError):
    """An iterative linear solve did not converge."""
