"""
Logging setup plus the error envelope shared by the service and the CLI
"""
import logging
import traceback
from datetime import datetime
from typing import Any, Dict, Optional

from fastapi import Request, status
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from starlette.exceptions import HTTPException as StarletteHTTPException

from yoloformer.utils.exceptions import YoloFormerException, yoloformer_exception_to_http

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

logger = logging.getLogger(__name__)


def configure_logging(level: Optional[str] = None):
    """Configure root logging once, level from argument or config"""
    if level is None:
        from yoloformer.utils.config import settings
        level = settings.log_level
    numeric = getattr(logging, str(level).upper(), logging.INFO)
    logging.basicConfig(level=numeric, format=LOG_FORMAT)
    logging.getLogger().setLevel(numeric)


class ErrorHandler:
    """Centralized error handling"""

    @staticmethod
    def log_error(error: Exception, request: Request = None, command: str = None) -> Dict[str, Any]:
        """Log a toolkit error as a warning and anything else with its traceback"""
        context = {"error_type": type(error).__name__, "error_message": str(error)}
        if request:
            context["route"] = f"{request.method} {request.url.path}"
        if command:
            context["command"] = command

        if isinstance(error, YoloFormerException):
            context.update(error_code=error.error_code, error_details=error.details)
            logger.warning(f"YoloFormer Error: {context}")
        else:
            context["traceback"] = traceback.format_exc()
            logger.error(f"Unexpected Error: {context}")
        return context

    @staticmethod
    def create_error_response(error_code: str, message: str, status_code: int = 500,
                              details: Dict[str, Any] = None) -> JSONResponse:
        """``{"success": false, "error": {code, message, timestamp, details}}``"""
        return JSONResponse(status_code=status_code, content={
            "success": False,
            "error": {
                "code": error_code,
                "message": message,
                "timestamp": datetime.utcnow().isoformat(),
                "details": details or {}
            }
        })


async def yoloformer_exception_handler(request: Request, exc: YoloFormerException):
    ErrorHandler.log_error(exc, request)
    return ErrorHandler.create_error_response(exc.error_code, exc.message,
                                              yoloformer_exception_to_http(exc).status_code, exc.details)


async def validation_exception_handler(request: Request, exc: RequestValidationError):
    """Query and body validation failures from FastAPI"""
    ErrorHandler.log_error(exc, request)
    fields = [{"field": ".".join(str(x) for x in e["loc"]), "message": e["msg"], "type": e["type"]}
              for e in exc.errors()]
    return ErrorHandler.create_error_response("VALIDATION_ERROR", "Input validation failed",
                                              status.HTTP_422_UNPROCESSABLE_ENTITY, {"validation_errors": fields})


async def http_exception_handler(request: Request, exc: StarletteHTTPException):
    """Unknown paths and methods raised by the router"""
    ErrorHandler.log_error(exc, request)
    return ErrorHandler.create_error_response("HTTP_ERROR", str(exc.detail), exc.status_code)


async def general_exception_handler(request: Request, exc: Exception):
    ErrorHandler.log_error(exc, request)
    return ErrorHandler.create_error_response("INTERNAL_ERROR", "An internal server error occurred",
                                              status.HTTP_500_INTERNAL_SERVER_ERROR, {"type": type(exc).__name__})
