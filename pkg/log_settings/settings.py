import logging
import os

import click
from dotenv import find_dotenv, load_dotenv

load_dotenv(find_dotenv())
LEVEL = os.environ.get("UQCAL_LOGLEVEL", "WARNING")
LOGFILE = os.environ.get("UQCAL_LOGFILE")

PACKAGES = (
    "mcd_ensemble",
    "conformal",
    "metrics",
    "synthetic",
    "io_formats",
    "cli",
)


class ClickEchoHandler(logging.Handler):
    """
    Пишет записи в stderr через click.echo. Поток берется в момент записи,
    поэтому сообщения видны и в CliRunner.
    """

    def emit(self, record):
        try:
            click.echo(self.format(record), err=True)
        except Exception:
            self.handleError(record)


def build_logger_config(level: str = LEVEL, logfile: str = LOGFILE) -> dict:
    handlers = {
        "console_handler": {
            "()": ClickEchoHandler,
            "level": level,
            "formatter": "console_format",
        },
    }
    if logfile:
        handlers["file_handler"] = {
            "class": "logging.FileHandler",
            "level": level,
            "formatter": "std_format",
            "filename": logfile,
        }
    return {
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {
            "std_format": {
                "format": "{asctime} - {levelname} - {name} - {message}",
                "style": "{",
            },
            "console_format": {
                "format": "{levelname}: {message}",
                "style": "{",
            },
        },
        "handlers": handlers,
        "loggers": {
            name: {"level": level, "handlers": list(handlers)}
            for name in PACKAGES
        },
    }


logger_config = build_logger_config()


class LoggingContext:
    def __init__(self, logger, level=None, handler=None, close=True, fmt=None):
        self.logger = logger
        self.level = level
        self.handler = handler
        self.fmt = fmt
        self.close = close

    def __enter__(self):
        if self.level is not None:
            self.old_level = self.logger.level
            self.old_handler_levels = [(h, h.level) for h in self.logger.handlers]
            self.logger.setLevel(self.level)
            for handler in self.logger.handlers:
                handler.setLevel(self.level)
        if self.handler:
            self.logger.addHandler(self.handler)
        if self.fmt:
            self.handler.setFormatter(self.fmt)
        return self.logger

    def __exit__(self, et, ev, tb):
        if self.level is not None:
            self.logger.setLevel(self.old_level)
            for handler, level in self.old_handler_levels:
                handler.setLevel(level)
        if self.handler:
            self.logger.removeHandler(self.handler)
        if self.handler and self.close:
            self.handler.close()
