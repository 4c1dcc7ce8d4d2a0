from __future__ import annotations

import json
import os
import sys
from typing import Any

_LEVELS = {"DEBUG": 10, "INFO": 20, "WARNING": 30, "ERROR": 40}


def log_event(event: str, level: str = "INFO", **fields: Any) -> None:
    """Write one structured log line to stderr.

    stdout is reserved for command output, so log lines never go there.
    """
    threshold = _LEVELS.get(os.getenv("LOG_LEVEL", "INFO").upper(), 20)
    if _LEVELS.get(level, 20) < threshold:
        return
    line = {"level": level, "env": os.getenv("ENV", "dev"), "event": event, **fields}
    print(json.dumps(line, default=str), file=sys.stderr)
