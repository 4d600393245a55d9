from fastapi import APIRouter, Request, Response, status
from src.domain.schemas import HealthOut

router = APIRouter()

@router.get("/health", response_model=HealthOut, response_model_exclude_none=True)
async def health_check(request: Request, response: Response):
    detector = request.app.state.detector
    if detector is None:
        response.status_code = status.HTTP_503_SERVICE_UNAVAILABLE
        return HealthOut(status="not-ready")
    return HealthOut(status="ready", model_version=detector.model_version)
