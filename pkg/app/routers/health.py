"""Health check router."""

from datetime import datetime, timezone

from fastapi import APIRouter

from app.config import config
from app.models import HealthResponse

router = APIRouter()


def now_utc() -> datetime:
    """Get current UTC datetime."""
    return datetime.now(timezone.utc)


@router.get("/health", response_model=HealthResponse)
async def health():
    """Health check endpoint."""
    return {
        "status": "healthy",
        "time": now_utc().isoformat(),
        "version": config.VERSION,
    }
