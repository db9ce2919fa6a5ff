"""Exception hierarchy shared by every minlab module."""


class MinlabError(Exception):
    """Base class; ``exit_code`` is what the CLI returns when it escapes."""

    exit_code = 2


class ValidationError(MinlabError):
    exit_code = 2


class NumericalError(MinlabError):
    exit_code = 3


# meromorphic
class PoleProximity(ValidationError):
    pass


class DegenerateInput(ValidationError):
    pass


class NotAPole(ValidationError):
    pass


class NonConvergent(NumericalError):
    pass


# weierstrass
class PeriodFailure(ValidationError):
    pass


class JorgeMeeksViolation(ValidationError):
    pass


class InconsistentPoleOrders(ValidationError):
    pass


class GalleryFormatError(ValidationError):
    pass


# mesh
class BudgetExceeded(NumericalError):
    pass


class RTooSmall(ValidationError):
    pass


# spectral
class SingularMass(NumericalError):
    pass


class FactorizationFailure(NumericalError):
    pass


class NonConvergence(NumericalError):
    pass


class AmbiguousCount(NumericalError):
    pass


# forms / certify
class TooFewEnds(ValidationError):
    pass


class QuadratureFailure(NumericalError):
    pass


class MeshMismatch(ValidationError):
    pass


class RankDeficientGram(NumericalError):
    pass
