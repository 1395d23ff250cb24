import logging
import sys
import socket
from contextvars import ContextVar
from pathlib import Path
from typing import Optional, TextIO
import structlog
from structlog.types import EventDict, WrappedLogger

from src.config.index import appConfig

# Context variables
run_id_var: ContextVar[Optional[str]] = ContextVar("run_id", default=None)
subcommand_var: ContextVar[Optional[str]] = ContextVar("subcommand", default=None)
stage_var: ContextVar[Optional[str]] = ContextVar("stage", default=None)

HOST_NAME = socket.gethostname()


def get_log_level() -> int:
    return {
        "DEBUG": logging.DEBUG,
        "INFO": logging.INFO,
        "WARNING": logging.WARNING,
        "ERROR": logging.ERROR,
        "CRITICAL": logging.CRITICAL,
    }.get(appConfig["log_level"], logging.INFO)


def add_context_info(
    logger: WrappedLogger, method_name: str, event_dict: EventDict
) -> EventDict:
    run_id = run_id_var.get()
    if run_id:
        event_dict["run_id"] = run_id
    subcommand = subcommand_var.get()
    if subcommand:
        event_dict["subcommand"] = subcommand
    stage = stage_var.get()
    if stage:
        event_dict["stage"] = stage
    event_dict["host_name"] = HOST_NAME
    return event_dict


def configure_stream_handler(root_logger, stream: TextIO) -> None:
    stream_handler = logging.StreamHandler(stream)
    stream_handler.setFormatter(logging.Formatter("%(message)s"))
    root_logger.addHandler(stream_handler)


def configure_file_handler(root_logger, log_filename: str) -> None:
    log_dir = Path(appConfig["log_dir"])
    log_dir.mkdir(parents=True, exist_ok=True)
    file_handler = logging.FileHandler(log_dir / log_filename, encoding="utf-8")
    file_handler.setFormatter(logging.Formatter("%(message)s"))
    root_logger.addHandler(file_handler)


def configure_logging(
    log_filename: Optional[str] = "synclab.log", stream: TextIO = sys.stderr
) -> None:
    log_level = get_log_level()

    # 1) Setting Log Handlers: stream + file
    root_logger = logging.getLogger()
    root_logger.setLevel(log_level)
    root_logger.handlers.clear()

    # stderr by default: stdout is reserved for data the CLI prints (CSV, JSON reports)
    configure_stream_handler(root_logger, stream)
    if log_filename:
        configure_file_handler(root_logger, log_filename)

    logging.getLogger("matplotlib").setLevel(logging.WARNING)

    # 2) structlog: JSON lines for every event
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,  # skip below log level
            structlog.contextvars.merge_contextvars,
            structlog.processors.TimeStamper(fmt="iso", utc=True, key="timestamp"),
            structlog.processors.CallsiteParameterAdder(
                [
                    structlog.processors.CallsiteParameter.FILENAME,
                    structlog.processors.CallsiteParameter.FUNC_NAME,
                    structlog.processors.CallsiteParameter.LINENO,
                ]
            ),
            structlog.stdlib.add_log_level,
            structlog.stdlib.add_logger_name,
            add_context_info,  # run/subcommand/stage/host
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.JSONRenderer(),
        ],
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )


def get_logger(name: Optional[str] = None) -> structlog.stdlib.BoundLogger:
    return structlog.get_logger(name)


def set_run_id(run_id: str) -> None:
    run_id_var.set(run_id)


def set_subcommand(subcommand: str) -> None:
    subcommand_var.set(subcommand)


def set_stage(stage: Optional[str]) -> None:
    stage_var.set(stage)


def clear_context() -> None:
    run_id_var.set(None)
    subcommand_var.set(None)
    stage_var.set(None)
