"""Exception hierarchy. Everything subclasses ``ValueError`` so callers using
plain ``except ValueError`` keep working."""


class BridgeError(ValueError):
    pass


class InvalidShapeError(BridgeError):
    pass


class InvalidConfigError(BridgeError):
    pass


class InvalidStepError(BridgeError):
    pass


class DegenerateStepError(InvalidStepError):
    """Raised where a zero bridge variance would make a formula 0/0."""


class InvalidConditionError(BridgeError):
    pass


class InvalidInputError(BridgeError):
    pass


class FormatError(BridgeError):
    pass


class IntegrityError(FormatError):
    pass


class GridError(BridgeError):
    pass


class TrainingDivergedError(RuntimeError):
    pass
