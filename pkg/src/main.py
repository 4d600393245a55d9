import logging
import socket
from contextlib import asynccontextmanager
from typing import Optional

import uvicorn
from fastapi import FastAPI

from src.domain.errors import BindFailure, ModelLoadFailure
from src.infra.detector import Detector
from src.infra.settings import DetectorSettings
from src.presentation import routes

logger = logging.getLogger(__name__)


def create_app(settings: Optional[DetectorSettings] = None, detector: Optional[Detector] = None) -> FastAPI:
    """Detector service. Without an explicit ``detector`` the models named in
    ``settings`` are loaded at startup; until then health reports not-ready."""

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        if app.state.detector is None and app.state.settings.model_path is not None:
            try:
                app.state.detector = Detector.load(app.state.settings)
            except ModelLoadFailure as exc:
                logger.error("models not loaded: %s", exc.message)
        yield

    app = FastAPI(title="memlog detector", lifespan=lifespan)
    app.state.settings = settings or DetectorSettings.load()
    app.state.detector = detector
    app.include_router(routes.router)
    return app


def _bind(host: str, port: int) -> socket.socket:
    family = socket.AF_INET6 if ":" in host else socket.AF_INET
    sock = socket.socket(family, socket.SOCK_STREAM)
    try:
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind((host, port))
    except OSError as exc:
        sock.close()
        raise BindFailure(f"cannot bind {host}:{port}: {exc.strerror or exc}") from None
    sock.set_inheritable(True)
    return sock


def serve(settings: DetectorSettings) -> None:
    """Load the models, bind, and serve until SIGINT/SIGTERM.

    Model files are loaded before the socket is bound so a bad model never
    leaves a half-started listener behind.
    """
    detector = Detector.load(settings)
    host, port = settings.address
    sock = _bind(host, port)
    config = uvicorn.Config(
        create_app(settings, detector),
        log_config=None,
        timeout_graceful_shutdown=10,
    )
    logger.info("serving model %s on %s", detector.model_version, settings.bind)
    uvicorn.Server(config).run(sockets=[sock])


app = create_app()
