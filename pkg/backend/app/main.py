"""
Glass Defect Inspector - HTTP service
Serves the four-stage inspection pipeline over FastAPI
"""
from contextlib import asynccontextmanager
from typing import AsyncGenerator, Optional

import uvicorn
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from loguru import logger

from app.api import api_router
from app.core.config import PipelineConfig, load_pipeline_config, settings
from app.core.errors import ContractViolationError, InspectError, InvalidArgumentError
from app.services import forest
from app.services.classify import BD_MODEL_NAME, DC_MODEL_NAME, Inspector
from app.services.embedding import make_provider


def load_inspector(config: PipelineConfig) -> Optional[Inspector]:
    """Load both forests from MODEL_DIR; None when they are not there yet."""
    bd_path = settings.MODEL_DIR / BD_MODEL_NAME
    dc_path = settings.MODEL_DIR / DC_MODEL_NAME
    if not (bd_path.is_file() and dc_path.is_file()):
        logger.warning("No models in {}; /inspect will answer 503 until they exist", settings.MODEL_DIR)
        return None
    return Inspector(forest.load(bd_path), forest.load(dc_path), make_provider(config.embedding), config)


def create_app(config: Optional[PipelineConfig] = None, inspector: Optional[Inspector] = None) -> FastAPI:
    config = config or load_pipeline_config(settings.CONFIG_FILE)

    @asynccontextmanager
    async def lifespan(app: FastAPI) -> AsyncGenerator[None, None]:
        """Application lifespan manager for startup and shutdown events."""
        # Startup
        logger.info(f"Starting {settings.APP_NAME} v{settings.APP_VERSION}")
        if app.state.inspector is None:
            app.state.inspector = load_inspector(config)

        yield

        # Shutdown
        logger.info(f"Shutting down {settings.APP_NAME} v{settings.APP_VERSION}")

    app = FastAPI(
        title=settings.APP_NAME,
        version=settings.APP_VERSION,
        description="Localization and classification of smartphone glass surface regions",
        openapi_url=f"{settings.API_V1_STR}/openapi.json",
        docs_url=f"{settings.API_V1_STR}/docs",
        redoc_url=f"{settings.API_V1_STR}/redoc",
        lifespan=lifespan,
    )
    app.state.inspector = inspector
    app.state.config = config

    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_credentials=False,
        allow_methods=["GET", "POST", "OPTIONS"],
        allow_headers=["*"],
    )

    # Include API routes
    app.include_router(api_router, prefix=settings.API_V1_STR)

    @app.exception_handler(InvalidArgumentError)
    async def invalid_argument_handler(request: Request, exc: InvalidArgumentError) -> JSONResponse:
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.exception_handler(ContractViolationError)
    async def contract_violation_handler(request: Request, exc: ContractViolationError) -> JSONResponse:
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.exception_handler(Exception)
    async def global_exception_handler(request: Request, exc: Exception) -> JSONResponse:
        """Global exception handler for unhandled errors."""
        logger.opt(exception=exc).error("Unhandled exception: {}", exc)
        detail = str(exc) if isinstance(exc, InspectError) else "Internal server error"
        return JSONResponse(status_code=500, content={"detail": detail})

    @app.get("/health")
    async def health_check() -> dict:
        """Health check endpoint for load balancers and monitoring."""
        return {
            "status": "healthy",
            "app_name": settings.APP_NAME,
            "version": settings.APP_VERSION,
            "models_loaded": app.state.inspector is not None,
        }

    return app


if __name__ == "__main__":
    uvicorn.run(
        create_app(),
        host="0.0.0.0",
        port=19000,
        log_level=settings.LOG_LEVEL.lower(),
    )
