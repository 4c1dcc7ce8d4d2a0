from __future__ import annotations

from contextvars import ContextVar
from dataclasses import dataclass
from typing import Optional


@dataclass(frozen=True)
class RunContext:
    """Per-invocation options that are not part of the experiment config.

    `threads` is None when neither the caller nor the environment chose a count;
    commands then fall back to the toolset default.
    """

    threads: Optional[int] = None
    out_dir: str = "."
    seed_override: Optional[int] = None


_current_context: ContextVar[RunContext] = ContextVar("gcir_run_context", default=RunContext())


def set_run_context(ctx: RunContext) -> None:
    _current_context.set(ctx)


def get_run_context() -> RunContext:
    return _current_context.get()
