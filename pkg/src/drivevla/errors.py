"""Exception hierarchy.

Everything raised on bad input derives from :class:`DataError`, which the CLI
maps to exit code 2. VLM transport failures map to exit code 3.
"""


class DriveVlaError(Exception):
    """Base class for all package errors."""


class ConfigError(DriveVlaError):
    pass


class DataError(DriveVlaError):
    pass


class MalformedRecord(DataError):
    def __init__(self, stream, line_number, detail=""):
        self.stream = stream
        self.line_number = line_number
        super().__init__(f"{stream}: malformed record at line {line_number}: {detail}".rstrip(": "))


class MissingStream(DataError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"required stream missing: {name}")


class DegenerateOrigin(DataError):
    pass


class InvalidDt(DataError):
    pass


class InvalidFix(DataError):
    pass


class NoGnss(DataError):
    pass


class TooShort(DataError):
    pass


class WrongLength(DataError):
    pass


class NotEnoughScenes(DataError):
    pass


class IncompleteTrajectory(DataError):
    pass


class WindowMismatch(DataError):
    pass


class FrameMismatch(DataError):
    pass


class SchemaViolation(DataError):
    def __init__(self, line_number, detail):
        self.line_number = line_number
        super().__init__(f"schema violation at line {line_number}: {detail}")


class MissingCamera(DataError):
    pass


class LengthMismatch(DataError):
    pass


class EmptyTrajectory(DataError):
    pass


class VlmError(DriveVlaError):
    pass


class VlmUnavailable(VlmError):
    pass


class MalformedResponse(VlmError):
    pass


class EmptyCompletion(VlmError):
    pass
