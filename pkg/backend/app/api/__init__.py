"""
API router configuration
"""
from fastapi import APIRouter

from app.api.inspection import router as inspection_router

api_router = APIRouter()

# Include all API routes
api_router.include_router(inspection_router, tags=["inspection"])
