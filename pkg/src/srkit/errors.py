"""Exception hierarchy shared by all srkit modules."""

from __future__ import annotations


class SRKitError(Exception):
    """Base class for srkit errors."""


class OutOfChart(SRKitError):
    """A point left the chart's validity box.

    When raised by an integrator, ``partial`` holds the trajectory computed up
    to the located exit time and ``exit_time`` the bisected exit instant.
    """

    def __init__(self, message, point=None, partial=None, exit_time=None):
        super().__init__(message)
        self.point = point
        self.partial = partial
        self.exit_time = exit_time


class DegenerateFrame(SRKitError):
    """The full frame [X_1 ... X_n] is numerically singular."""


class StepFailure(SRKitError):
    """Adaptive step size underflow."""


class NonHorizontal(SRKitError):
    """Complement controls exceed the horizontality tolerance."""


class NoConvergence(SRKitError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class TransversalityFailure(SRKitError):
    def __init__(self, message, point=None, certificate=None):
        super().__init__(message)
        self.point = point
        self.certificate = certificate


class ZeroLength(SRKitError):
    """Reparameterization requested for a curve of zero length."""


class NormalizationFailure(SRKitError):
    """No unit covector annihilates the hypersurface tangent space.

    ``samples`` lists the offending grid indices.
    """

    def __init__(self, message, samples=None):
        super().__init__(message)
        self.samples = samples or []


class SingularJacobian(SRKitError):
    def __init__(self, message, samples=None):
        super().__init__(message)
        self.samples = samples or []


class ConfigError(SRKitError):
    """Invalid user configuration (CLI or model file)."""
