"""Exception hierarchy shared across the package."""


class LabelDPError(Exception):
    """Base class for all errors raised by :mod:`labeldp`."""


class StructuralError(LabelDPError, ValueError):
    """Array shapes disagree with the label sets they describe."""


class ParameterError(LabelDPError, ValueError):
    """A parameter is outside its admissible range."""


class UnknownLabelError(LabelDPError, KeyError):
    """A label is not a member of the randomizer's input set."""


class RangeError(LabelDPError, ValueError):
    """A value falls outside the interval an operation is defined on."""


class DomainError(LabelDPError, ValueError):
    """A loss was evaluated outside its domain (e.g. Poisson at y_hat <= 0)."""


class SolverError(LabelDPError, RuntimeError):
    """The LP backend failed or returned a point that does not re-verify."""


class InfeasibleError(SolverError):
    """The LP has no feasible point."""
