"""Exception hierarchy shared by every module."""


class DeathsysError(Exception):
    """Base class for domain errors (CLI exit code 1)."""


class ConfigError(DeathsysError):
    """Malformed or unknown configuration content."""


class InvalidSystem(DeathsysError):
    pass


class DeathHasOutgoingEdge(InvalidSystem):
    pass


class NoDeathProcess(InvalidSystem):
    pass


class UnknownReference(InvalidSystem):
    pass


class AttributeInfluenced(InvalidSystem):
    pass


class TargetIsAttribute(DeathsysError):
    pass


class StepTooCoarse(DeathsysError):
    pass


class NonFiniteState(DeathsysError):
    pass


class NotBinaryY(DeathsysError):
    pass


class KindIncompatibleWithStateSpace(DeathsysError):
    pass


class ChannelUnmapped(DeathsysError):
    pass


class RuleInputUnavailable(DeathsysError):
    pass


class UndeclaredInputs(DeathsysError):
    pass


class NonFiniteLikelihood(DeathsysError):
    pass


class IncompatibleChannels(DeathsysError):
    pass


class NonConvergence(DeathsysError):
    pass


class NucWarning(UserWarning):
    """The factor/outcome pair is not NUC; contrasts are not causal."""


class CarWarning(UserWarning):
    """Likelihood evaluated on data whose observation scheme is not CAR(DYN)."""


class ConvergenceWarning(UserWarning):
    pass


class SingularHessian(DeathsysError):
    """Observed information not positive definite; standard errors unavailable."""
