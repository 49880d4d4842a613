"""Exception types shared across the package.

Every error that a public operation can raise by contract lives here, so
callers (and the CLI) can catch by name.
"""


class EcholabError(Exception):
    """Base class for all package errors."""


# --- geometry ---------------------------------------------------------------

class EmptyObstacle(EcholabError):
    """Obstacle has no boundary to reflect from."""


class PStrictlyInside(EcholabError):
    """Probe center lies in the closure of the obstacle."""


class DegenerateReflector(EcholabError):
    """det(S_q(sphere) - S_q(boundary)) is not safely positive."""


class NonPositiveDistance(EcholabError):
    """A length that must be positive is not."""


class OutsideChart(EcholabError):
    """Chart coordinate outside the patch radius."""


class AmbiguousProjection(EcholabError):
    """Point outside the tubular neighbourhood with a unique nearest boundary point."""


# --- analytic fields --------------------------------------------------------

class NonPositiveTau(EcholabError):
    """Spectral parameter tau must be positive."""


class InsideSource(EcholabError):
    """Gradient closed form is exterior-only."""


# --- forward solver ---------------------------------------------------------

class CFLViolation(EcholabError):
    """Time step exceeds the stability bound."""


class ContaminationMargin(EcholabError):
    """Box too small: wall reflections could reach a recording point before T."""


class ObstacleTouchesSource(EcholabError):
    """Closed source ball intersects the closed obstacle."""


# --- indicator --------------------------------------------------------------

class MissingVolumeSamples(EcholabError):
    """Recording has no ball-volume sample nodes."""


class MissingSphereSamples(EcholabError):
    """Recording has no observation-sphere sample nodes."""


class GammaNotZero(EcholabError):
    """Surface-integral shortcut requires gamma == 0."""


# --- fits / recovery --------------------------------------------------------

class NoiseFloorReached(EcholabError):
    """Indicator indistinguishable from discretization error."""


class InsufficientTauRange(EcholabError):
    """Not enough usable tau points for the requested fit."""


class SingularSystem(EcholabError):
    """Two-probe curvature system is (numerically) singular."""


class MultiReflector(EcholabError):
    """Operation requires a singleton first reflector."""


# --- oracle -----------------------------------------------------------------

class QuadratureNonConvergence(EcholabError):
    """Adaptive quadrature failed to reach tolerance."""


# --- scenario / cli ---------------------------------------------------------

class SchemaError(EcholabError):
    """Scenario file is malformed or violates a load-time hypothesis."""
