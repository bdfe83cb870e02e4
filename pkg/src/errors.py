"""
EventAttn - Errors
统一的异常层次，code 对应 config.ERROR_CODES 中的退出码
"""

from config import ERROR_CODES


class EventAttnError(Exception):
    """所有可预期错误的基类"""
    code = "RUNTIME_ERROR"

    @property
    def exit_code(self) -> int:
        return ERROR_CODES.get(self.code, 1)


class ConfigError(EventAttnError):
    code = "CONFIG_ERROR"


class ValidationError(EventAttnError):
    code = "VALIDATION_ERROR"


class DimensionError(ValidationError):
    code = "DIMENSION_ERROR"

    def __init__(self, message: str, expected=None, actual=None):
        if expected is not None or actual is not None:
            message = f"{message} (期望 {expected}, 实际 {actual})"
        super().__init__(message)
        self.expected = expected
        self.actual = actual


class EmptyInputError(ValidationError):
    code = "EMPTY_INPUT"


class ParameterError(ValidationError):
    code = "PARAMETER_ERROR"


class DatasetParseError(EventAttnError):
    code = "PARSE_ERROR"

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"第 {line} 行: {message}"
        super().__init__(message)
        self.line = line


class TrainingError(EventAttnError):
    code = "TRAINING_ERROR"

    def __init__(self, message: str, param_name: str | None = None, clip_id: str | None = None):
        super().__init__(message)
        self.param_name = param_name
        self.clip_id = clip_id


class CheckpointError(EventAttnError):
    code = "CHECKPOINT_CORRUPT"


class CheckpointVersionError(CheckpointError):
    code = "CHECKPOINT_VERSION"


class ShapeMismatchError(CheckpointError):
    code = "CHECKPOINT_SHAPE"


class TruncatedCheckpointError(CheckpointError):
    code = "CHECKPOINT_TRUNCATED"


class UndefinedAPError(EventAttnError):
    code = "UNDEFINED_AP"


class RankDeficiencyError(EventAttnError):
    code = "RANK_DEFICIENT"
