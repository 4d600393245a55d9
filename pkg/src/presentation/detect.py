import logging
from typing import Optional

from fastapi import APIRouter, Depends, Header, HTTPException, Request, Response, status
from starlette.concurrency import run_in_threadpool

from src.domain.errors import LogParseError
from src.domain.schemas import DetectionResult, ProtocolError
from src.infra.detector import Detector

logger = logging.getLogger(__name__)

router = APIRouter()


def _echo(request_id: Optional[str]) -> Optional[dict]:
    return {"X-Request-ID": request_id} if request_id else None


def get_detector(request: Request, x_request_id: Optional[str] = Header(default=None)) -> Detector:
    detector = request.app.state.detector
    if detector is None:
        raise HTTPException(
            status_code=status.HTTP_503_SERVICE_UNAVAILABLE,
            detail=ProtocolError(code="NOT_READY", message="models are not loaded").model_dump(),
            headers=_echo(x_request_id),
        )
    return detector


@router.post("/detect", response_model=DetectionResult)
async def detect(request: Request, response: Response, detector: Detector = Depends(get_detector),
                 x_request_id: Optional[str] = Header(default=None)):
    body = await request.body()
    try:
        result = await run_in_threadpool(detector.detect, body, x_request_id)
    except LogParseError as exc:
        raise HTTPException(
            status_code=status.HTTP_400_BAD_REQUEST,
            detail=ProtocolError(code=exc.code, message=exc.message).model_dump(),
            headers=_echo(x_request_id),
        )
    except Exception:
        logger.exception("detection failed")
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail=ProtocolError(code="INTERNAL", message="internal detector error").model_dump(),
            headers=_echo(x_request_id),
        )
    if x_request_id:
        response.headers["X-Request-ID"] = x_request_id
    return result
