from __future__ import annotations

from typing import Any, Callable, Optional, get_type_hints

from pydantic import BaseModel

from .registry import CommandRegistry, CommandSpec


def command(func: Optional[Callable[..., Any]] = None, *, name: Optional[str] = None) -> Callable[..., Any]:
    """Register `(params: Model) -> Model` as a command.

    The command name defaults to the function name with underscores turned into
    dashes (markov_check -> markov-check). The function itself is returned unchanged.
    """

    def decorator(f: Callable[..., Any]) -> Callable[..., Any]:
        command_name = name or f.__name__.replace("_", "-")
        hints = get_type_hints(f, globalns=f.__globals__, localns=None)
        params_model = hints.get("params")
        result_model = hints.get("return")

        if not (isinstance(params_model, type) and issubclass(params_model, BaseModel)):
            raise TypeError(f"@command '{command_name}' must annotate 'params' with a Pydantic BaseModel")
        if not (isinstance(result_model, type) and issubclass(result_model, BaseModel)):
            raise TypeError(f"@command '{command_name}' must annotate return type with a Pydantic BaseModel")

        CommandRegistry.instance().register(
            CommandSpec(
                name=command_name,
                doc=(f.__doc__ or "").strip().splitlines()[0] if f.__doc__ else "",
                params_model=params_model,
                result_model=result_model,
                func=f,
            )
        )
        return f

    if func is not None:
        return decorator(func)
    return decorator
