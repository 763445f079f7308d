"""Exception hierarchy shared by all modules.

Every error carries the CLI exit code it maps to, so the command layer can
translate failures without a lookup table.
"""


class BacError(Exception):
    exit_code = 2


class ParseError(BacError, ValueError):
    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (at byte {offset})")
        self.offset = offset


class SchemaError(BacError, ValueError):
    def __init__(self, field, message=None):
        super().__init__(message or f"missing or invalid field: {field}")
        self.field = field


class FeatureSchemaError(SchemaError):
    """Feature vector does not match the schema a model was trained with."""

    exit_code = 5


class RangeError(BacError, ValueError):
    pass


class EmptyCorpusError(BacError, ValueError):
    pass


class EmptyIndexError(BacError, ValueError):
    pass


class EmptyInputError(BacError, ValueError):
    pass


class InternalConsistencyError(BacError, RuntimeError):
    pass


class TransportError(BacError, ConnectionError):
    exit_code = 3


class PlanParseError(BacError, ValueError):
    pass


class LabelLeakError(BacError, ValueError):
    exit_code = 4


class DegenerateLabelsError(BacError, ValueError):
    exit_code = 4


class ShapeError(BacError, ValueError):
    pass


class StratifyError(BacError, ValueError):
    exit_code = 4


class IoError(BacError, OSError):
    pass
