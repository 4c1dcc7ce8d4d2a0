#!/usr/bin/env python3
from __future__ import annotations

import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
for entry in (ROOT, ROOT / "packages" / "gcir" / "src", ROOT / "packages" / "gcir-runtime" / "src"):
    if str(entry) not in sys.path:
        sys.path.insert(0, str(entry))

from gcir_runtime.cli import main  # noqa: E402

from toolsets.gcir.src import commands  # noqa: E402,F401  registers the commands

if __name__ == "__main__":
    main()
