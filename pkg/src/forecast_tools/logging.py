from __future__ import annotations

import logging
from typing import Optional

from rich.console import Console
from rich.logging import RichHandler

_PACKAGE_LOGGER = "forecast_tools"
_LOG_FORMAT = "%(name)s | %(message)s"


def configure_logging(level: Optional[str] = None) -> None:
    """Attach a stderr rich handler to the package logger only once.

    Later calls only adjust the level, so every command can pass its own
    ``--log-level``.
    """
    logger = logging.getLogger(_PACKAGE_LOGGER)
    logger.setLevel((level or "INFO").upper())
    if getattr(
        configure_logging, "_configured", False
    ):  # pragma: no cover - guard branch
        return

    handler = RichHandler(
        console=Console(stderr=True),
        show_path=False,
        rich_tracebacks=True,
    )
    handler.setFormatter(logging.Formatter(_LOG_FORMAT))
    logger.addHandler(handler)
    configure_logging._configured = True  # type: ignore[attr-defined]


__all__ = ["configure_logging"]
