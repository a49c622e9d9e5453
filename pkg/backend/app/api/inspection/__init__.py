"""
Inspection API endpoints
"""
from pathlib import PurePath

import cv2
import numpy as np
from fastapi import APIRouter, File, HTTPException, Query, Request, UploadFile
from loguru import logger

from app.schemas.classes import RegionClass
from app.services.imaging import to_gray

router = APIRouter()


@router.get("/classes")
async def get_region_classes():
    """Region taxonomy with the binary projection and report colors."""
    return {
        "classes": [
            {
                "index": int(c),
                "name": c.wire_name,
                "abbreviation": c.abbreviation,
                "verdict": c.verdict.value,
                "color": c.color,
            }
            for c in RegionClass
        ]
    }


@router.post("/inspect")
def inspect_image(
    request: Request,
    file: UploadFile = File(...),
    luma: bool = Query(False, description="Convert colour uploads to luminance"),
):
    """Run the four stages on an uploaded PNG/PGM and return the report."""
    inspector = getattr(request.app.state, "inspector", None)
    if inspector is None:
        raise HTTPException(status_code=503, detail="No models loaded; train them and set MODEL_DIR")

    blob = file.file.read()
    array = cv2.imdecode(np.frombuffer(blob, dtype=np.uint8), cv2.IMREAD_UNCHANGED) if blob else None
    if array is None:
        raise HTTPException(status_code=422, detail=f"cannot decode image '{file.filename}'")

    source_id = PurePath(file.filename or "upload").stem
    report = inspector.inspect(to_gray(array, luma), source_id=source_id)
    logger.info("API inspection of {}: {} findings", source_id, len(report.findings))
    return report.to_dict()
