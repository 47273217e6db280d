# packcover/core/logging.py
import logging
import sys
import uuid

LOG_FORMAT = "%(levelname)-5.5s [%(name)s] [%(run_id)s] %(message)s"

_run_id: str | None = None


def _new_id() -> str:
    return uuid.uuid4().hex


def current_run_id() -> str:
    global _run_id
    if _run_id is None:
        _run_id = _new_id()
    return _run_id


class RunIdFilter(logging.Filter):
    """Stamps every record with the id of the current CLI run."""

    def filter(self, record: logging.LogRecord) -> bool:
        record.run_id = current_run_id()
        return True


def configure_logging(level: int | str = logging.WARNING) -> logging.Logger:
    root = logging.getLogger("packcover")
    for handler in list(root.handlers):
        if getattr(handler, "_packcover", False):
            root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler._packcover = True
    handler.addFilter(RunIdFilter())
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(level)
    return root
