from fastapi import APIRouter
from src.presentation import detect, health_check

router = APIRouter()

router.include_router(health_check.router, prefix="/v1", tags=["health"])
router.include_router(detect.router, prefix="/v1", tags=["detect"])
