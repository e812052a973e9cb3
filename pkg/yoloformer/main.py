from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.exceptions import RequestValidationError
from starlette.exceptions import HTTPException as StarletteHTTPException

from yoloformer import __version__
from yoloformer.engine.tensor import set_check_finite
from yoloformer.routes.detect_routes import router as detect_router
from yoloformer.routes.eval_routes import router as eval_router
from yoloformer.utils.config import settings
from yoloformer.utils.exceptions import YoloFormerException
from yoloformer.utils.error_handler import (
    configure_logging,
    yoloformer_exception_handler,
    validation_exception_handler,
    http_exception_handler,
    general_exception_handler
)

configure_logging(settings.log_level)
set_check_finite(settings.check_finite)

app = FastAPI(
    title="YOLO-Former Inference Service",
    description="Single-image detection and mAP scoring for desk-scale YOLO-Former detectors",
    version=__version__
)

# Add global exception handlers
app.add_exception_handler(YoloFormerException, yoloformer_exception_handler)
app.add_exception_handler(RequestValidationError, validation_exception_handler)
app.add_exception_handler(StarletteHTTPException, http_exception_handler)
app.add_exception_handler(Exception, general_exception_handler)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(detect_router, tags=["detection"])
app.include_router(eval_router, tags=["evaluation"])

@app.get("/health")
async def health_check():
    return {"status": "healthy", "service": "YOLO-Former"}

@app.get("/")
async def root():
    return {
        "service": "YOLO-Former Inference Service",
        "version": __version__,
        "status": "running",
        "checkpoint": settings.checkpoint_path,
        "api_docs": "/docs"
    }
