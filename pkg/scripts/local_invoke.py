#!/usr/bin/env python3
"""Run one dispatch event read from stdin, e.g.

    echo '{"action": "invoke", "method": "gfun", "params": {"lo_sq": 1, "hi_sq": 4, "a": -2}}' | python scripts/local_invoke.py
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
for entry in (ROOT, ROOT / "packages" / "gcir" / "src", ROOT / "packages" / "gcir-runtime" / "src"):
    if str(entry) not in sys.path:
        sys.path.insert(0, str(entry))

from toolsets.gcir.src.commands import handler  # noqa: E402


def main() -> None:
    event = json.loads(sys.stdin.read())
    resp = handler(event, None)
    print(json.dumps(resp, sort_keys=True))
    sys.exit(1 if "error" in resp else 0)


if __name__ == "__main__":
    main()
