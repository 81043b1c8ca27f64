"""Exception types raised by the engine pipeline."""


class OptoStirlingError(Exception):
    """Base class for all package errors."""


class DegenerateCavity(OptoStirlingError):
    """Feedback gain closes the effective linewidth (kappa_eff <= 0)."""


class ResponsePole(OptoStirlingError):
    """Dressed-cavity response denominator vanishes (parametric instability)."""


class HeatingRunaway(OptoStirlingError):
    """Total mechanical damping gamma + Gamma_m is not positive."""


class NegativeFrequency(OptoStirlingError):
    """Optical spring pushes the mechanical frequency to zero or below."""


class EmptyLevel(OptoStirlingError):
    """No usable grid cell brackets the requested level."""


class NoConvergence(OptoStirlingError):
    """Corner refinement failed under every method."""


class NoClosedLoop(OptoStirlingError):
    """The four isolines cannot be linked into a closed Stirling cycle."""


class StepFailure(OptoStirlingError):
    """Adaptive step size underflowed during integration."""


class NotAnEngine(OptoStirlingError):
    """Net work per cycle is not negative, so no efficiency is defined."""
