import uvicorn
from yoloformer.utils.config import settings

if __name__ == "__main__":
    uvicorn.run(
        "yoloformer.main:app",
        host=settings.host,
        port=settings.port,
        reload=settings.debug
    )
