"""
Custom exception classes for the detector toolkit
"""
from typing import Optional, Dict, Any
from fastapi import HTTPException, status


class YoloFormerException(Exception):
    """Base exception for the detector toolkit"""
    def __init__(self, message: str, error_code: str = None, details: Dict[str, Any] = None):
        self.message = message
        self.error_code = error_code or "YOLOFORMER_ERROR"
        self.details = details or {}
        super().__init__(self.message)


class ValidationError(YoloFormerException):
    """Input validation errors"""
    def __init__(self, message: str, field: str = None, details: Dict[str, Any] = None):
        details = dict(details or {})
        if field:
            details["field"] = field
        super().__init__(message, "VALIDATION_ERROR", details)
        self.field = field


class ShapeError(ValidationError):
    """Tensor shape or extent mismatch"""
    def __init__(self, message: str, dimension: str = None, details: Dict[str, Any] = None):
        details = dict(details or {})
        if dimension:
            details["dimension"] = dimension
        super().__init__(message, field=dimension, details=details)
        self.error_code = "SHAPE_ERROR"
        self.dimension = dimension


class ConfigurationError(YoloFormerException):
    """Configuration errors"""
    def __init__(self, message: str, config_key: str = None):
        details = {}
        if config_key:
            details["config_key"] = config_key
        super().__init__(message, "CONFIG_ERROR", details)
        self.config_key = config_key


class ManifestError(YoloFormerException):
    """Dataset manifest errors"""
    def __init__(self, message: str, line: int = None, path: str = None):
        details = {}
        if line is not None:
            details["line"] = line
        if path:
            details["path"] = path
        super().__init__(message, "MANIFEST_ERROR", details)
        self.line = line


class NumericalError(YoloFormerException):
    """Non-finite values or failed numerical checks"""
    def __init__(self, message: str, operation: str = None, batch_index: int = None):
        details = {}
        if operation:
            details["operation"] = operation
        if batch_index is not None:
            details["batch_index"] = batch_index
        super().__init__(message, "NUMERICAL_ERROR", details)
        self.batch_index = batch_index


class TapeError(YoloFormerException):
    """Autodiff tape misuse"""
    def __init__(self, message: str = "Tensor is not recorded on the tape"):
        super().__init__(message, "TAPE_ERROR")


class OptimizationError(YoloFormerException):
    """Optimizer state errors"""
    def __init__(self, message: str, param: str = None):
        details = {}
        if param:
            details["param"] = param
        super().__init__(message, "OPTIMIZATION_ERROR", details)


class CheckpointError(YoloFormerException):
    """Checkpoint read/write errors"""
    def __init__(self, message: str, path: str = None):
        details = {}
        if path:
            details["path"] = path
        super().__init__(message, "CHECKPOINT_ERROR", details)


# CLI exit code mappings
EXIT_SUCCESS = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_INTERNAL = 4

EXCEPTION_EXIT_CODE_MAP = {
    ValidationError: EXIT_VALIDATION,
    ShapeError: EXIT_VALIDATION,
    ConfigurationError: EXIT_VALIDATION,
    ManifestError: EXIT_VALIDATION,
    CheckpointError: EXIT_VALIDATION,
    NumericalError: EXIT_NUMERICAL,
    TapeError: EXIT_NUMERICAL,
    OptimizationError: EXIT_NUMERICAL,
}

# HTTP Exception mappings
EXCEPTION_STATUS_MAP = {
    ValidationError: status.HTTP_422_UNPROCESSABLE_ENTITY,
    ShapeError: status.HTTP_422_UNPROCESSABLE_ENTITY,
    ManifestError: status.HTTP_422_UNPROCESSABLE_ENTITY,
    ConfigurationError: status.HTTP_500_INTERNAL_SERVER_ERROR,
    CheckpointError: status.HTTP_503_SERVICE_UNAVAILABLE,
    NumericalError: status.HTTP_500_INTERNAL_SERVER_ERROR,
    TapeError: status.HTTP_500_INTERNAL_SERVER_ERROR,
    OptimizationError: status.HTTP_500_INTERNAL_SERVER_ERROR,
}


def exit_code_for(exception: Exception) -> int:
    """Map an exception to a CLI exit code"""
    for exc_type in type(exception).__mro__:
        if exc_type in EXCEPTION_EXIT_CODE_MAP:
            return EXCEPTION_EXIT_CODE_MAP[exc_type]
    return EXIT_INTERNAL


def yoloformer_exception_to_http(exception: YoloFormerException) -> HTTPException:
    """Convert a toolkit exception to an HTTP exception"""
    status_code = EXCEPTION_STATUS_MAP.get(type(exception), status.HTTP_500_INTERNAL_SERVER_ERROR)

    detail = {
        "error_code": exception.error_code,
        "message": exception.message,
        "details": exception.details
    }

    return HTTPException(status_code=status_code, detail=detail)
