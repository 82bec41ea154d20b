from typing import Optional, Sequence


class CEQAError(Exception):
    pass


class ConfigError(CEQAError):
    pass


class KGFormatError(CEQAError):

    def __init__(self, message: str, line_no: Optional[int] = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class UnknownRelationError(KGFormatError):

    def __init__(self, token: str, line_no: Optional[int] = None):
        self.token = token
        super().__init__(f"unknown relation {token}", line_no)


class SplitError(CEQAError):
    pass


class QueryParseError(CEQAError):

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} at offset {offset}")


class RecordSchemaError(CEQAError):

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class GroundingError(CEQAError):
    pass


class ConstraintLimitError(CEQAError):
    pass


class SamplingRetry(CEQAError):
    """Dead end while grounding a query type; the caller picks another vertex."""


class TapeError(CEQAError):
    pass


class CheckpointError(CEQAError):
    pass


class TrainingError(CEQAError):

    def __init__(self, message: str, batch_ids: Sequence[int] = ()):
        self.batch_ids = list(batch_ids)
        if self.batch_ids:
            message = f"{message} (last batch pairs: {self.batch_ids})"
        super().__init__(message)


class VertexRangeError(CEQAError, IndexError):
    pass
