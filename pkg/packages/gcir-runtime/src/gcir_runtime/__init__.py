from .cli import run
from .context import RunContext, get_run_context, set_run_context
from .decorators import command
from .handler import handler, validation_message
from .registry import CommandRegistry

__all__ = [
    "command",
    "handler",
    "run",
    "CommandRegistry",
    "RunContext",
    "get_run_context",
    "set_run_context",
    "validation_message",
]
