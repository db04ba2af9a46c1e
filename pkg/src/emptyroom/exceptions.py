"""Exception types shared across the package."""


class EmptyRoomError(Exception):
    """Base class for all package errors."""


class ShapeError(EmptyRoomError, ValueError):
    pass


class ParameterError(EmptyRoomError, ValueError):
    pass


class FormatError(EmptyRoomError, ValueError):
    pass


class GraphError(EmptyRoomError, RuntimeError):
    pass


class ContractError(EmptyRoomError, ValueError):
    pass


class NumericError(EmptyRoomError, ArithmeticError):
    pass


class LabelError(EmptyRoomError, ValueError):
    pass


class MaskError(EmptyRoomError, ValueError):
    pass


class ConfigError(EmptyRoomError, ValueError):
    pass


class GenerationError(EmptyRoomError, RuntimeError):
    pass
