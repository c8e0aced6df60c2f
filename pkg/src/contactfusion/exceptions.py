"""Exception hierarchy shared across the package."""


class ContactFusionError(Exception):
    """Base class for all package errors."""


class InputError(ContactFusionError, ValueError):
    """Malformed or out-of-contract input."""


class TooFewPointsError(InputError):
    pass


class DegenerateNeighborhoodError(InputError):
    pass


class EmptyMeshError(InputError):
    pass


class KTooLargeError(InputError):
    pass


class ParseError(InputError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class MissingNormalsError(ParseError):
    pass


class OutOfGridError(InputError):
    pass


class EmptySetError(InputError):
    pass


class ZeroLumpedWeightError(ContactFusionError):
    pass


class SolverError(ContactFusionError):
    pass


class EmptyLevelSetError(ContactFusionError):
    pass


class NoContactError(InputError):
    pass


class ZeroForceError(InputError):
    pass


class NoCorrespondenceError(ContactFusionError):
    pass


class EmptyModelError(InputError):
    pass


class NoHitError(ContactFusionError):
    pass


class ContactConfigurationError(ContactFusionError):
    pass
