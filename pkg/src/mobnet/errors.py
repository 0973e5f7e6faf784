"""Exception types shared across the package.

Each class corresponds to one failure mode of the public operations; they
all derive from MobnetError so callers can catch the package's errors in
one clause.
"""


class MobnetError(Exception):
    """Base class for all package errors."""


# -- mobility generator validation ----------------------------------------

class RowSumViolation(MobnetError):
    """A row of the rate matrix does not sum to zero."""


class NegativeOffDiagonal(MobnetError):
    """An off-diagonal rate is negative."""


class ReducibleGenerator(MobnetError):
    """The positive-rate digraph is not strongly connected."""


class SingularSolve(MobnetError):
    """The stationary-distribution linear system could not be solved."""


class TolTooSmall(MobnetError):
    """Requested truncation error is infeasible within the term budget."""


class EpsOutOfRange(MobnetError):
    """Mixing-time level must lie strictly between 0 and 1."""


class HorizonExceeded(MobnetError):
    """The scan horizon ended before the deviation dropped below the level."""


# -- paths and operators ---------------------------------------------------

class DimensionMismatch(MobnetError):
    """Operands have incompatible dimensions."""


class LevelNeverReached(MobnetError):
    """The path never reaches the requested level within its horizon."""


class EmptyGrid(MobnetError):
    """An evaluation grid must contain at least one time."""


# -- simulation ------------------------------------------------------------

class ZeroHorizon(MobnetError):
    """Simulation horizon must be strictly positive."""


class EventBudgetExceeded(MobnetError):
    """Guard against runaway event counts."""


class EmptyTagNode(MobnetError):
    """The tagged node holds no user at time zero."""


class UnstableParams(MobnetError):
    """Stationary sampling requires load strictly below one."""


class CycleBudgetExceeded(MobnetError):
    """Regenerative run exceeded its event budget before completing cycles."""


class InsufficientCycles(MobnetError):
    """Not enough cycle data to estimate the requested quantity."""


class TagUnavailable(MobnetError):
    """A sampled stationary state was empty, so no user can be tagged."""


# -- reference laws ----------------------------------------------------------

class ZeroAlpha(MobnetError):
    """The stationary law requires a strictly positive drift gap."""


class StepTooCoarse(MobnetError):
    """Euler step too coarse relative to the horizon."""


class RhoOutOfRange(MobnetError):
    """Geometric parameter must lie in (0, 1)."""


class TailBoundOrder(MobnetError):
    """Poisson tail bound requires v >= u."""


class InvalidValue(MobnetError):
    """NaN or otherwise meaningless numeric input."""


# -- spectral / martingale ---------------------------------------------------

class DefectiveGenerator(MobnetError):
    """The rate matrix is not diagonalizable."""


class DegenerateVector(MobnetError):
    """The spectral product vanishes on this vector."""


class QuadratureFailure(MobnetError):
    """Adaptive quadrature failed to converge."""


class DimensionUnsupported(MobnetError):
    """Simplex quadrature is implemented for K in {2, 3} only."""


class ZeroDenominator(MobnetError):
    """Relative entropy requires a strictly positive reference vector."""


# -- configuration / CLI -----------------------------------------------------

class ConfigError(MobnetError):
    """Missing or malformed configuration."""
