"""Exception hierarchy shared by all chaostat modules."""

from __future__ import annotations


class ChaostatError(Exception):
    """Base class for every library error."""


class DomainError(ChaostatError, ValueError):
    """An argument lies outside the domain of the operation."""


class ResourceError(ChaostatError):
    """A configured budget (iterations, atoms, ...) would be exceeded."""


class NotACycle(ChaostatError):
    """The supplied points do not close up into a periodic orbit."""


class NotFound(ChaostatError):
    """A search finished without locating the requested object."""


class OutOfRange(DomainError):
    """Parameter outside the regime where the object is defined."""


class BranchDegenerate(ChaostatError):
    """Monotonicity checks of the folding branches failed."""


class Ambiguous(ChaostatError):
    """An iterate sits within tolerance of a cut point."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"iterate {step} is within tolerance of a cut point")


class PrecisionExhausted(ChaostatError):
    """The computation needs more mantissa bits than configured."""


class NoSignChange(ChaostatError):
    """A bracketing search found no sign change on its bracket."""


class LostCycle(ChaostatError):
    """Continuation lost track of the periodic orbit."""


class NotProbability(DomainError):
    """A measure that should have total mass one does not."""


class InvalidSwitch(ChaostatError):
    """A weight switch was requested that the current table cannot perform."""


class Underflow(ChaostatError):
    """A radius fell below the representable resolution."""


class BudgetExhausted(ChaostatError):
    """A semi-decidable search ran out of budget; ``partial`` holds the best result."""

    def __init__(self, message: str, partial=None):
        self.partial = partial
        super().__init__(message)


class LadderBlocked(ChaostatError):
    """The entry interval of a backward ladder could not be established."""


class NoSweep(ChaostatError):
    """The parameter family does not sweep across the requested target."""


class Inconclusive(ChaostatError):
    """Neither hat sequence certified its bound within the allotted levels."""

    def __init__(self, levels: int):
        self.levels = levels
        super().__init__(f"no certificate within {levels} levels")
