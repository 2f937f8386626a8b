"""Exception types shared across the package."""


class LiouvilleError(Exception):
    pass


class ParameterError(LiouvilleError, ValueError):
    """A parameter lies outside its admissible range."""


class DomainError(LiouvilleError, ValueError):
    """A point lies outside the domain where a quantity is defined."""


class PreconditionError(LiouvilleError, ValueError):
    pass


class RepresentationError(LiouvilleError):
    """A covariance cannot be synthesized on the requested grid."""


class HorizonExceeded(LiouvilleError, ValueError):
    pass


class MomentDoesNotExist(ParameterError):
    pass
